"""Operator and state-evaluation kernels on truncated leg spaces.

A leg is the truncated space spanned by xi_{n,k} with Fock level n < N and
cyclic winding k in {-K, ..., K}.  Operators on tensor products of legs are
immutable ``LinOp`` values that are either stored matrices or matrix-free
composites (products, tensors, linear combinations).
"""

from __future__ import annotations

import functools
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
import scipy.sparse as sp

# Dense materialization is refused above this dimension.
DENSE_LIMIT = 5000
# Exact spectral norms are computed below this dimension, a Holder bound above.
EXACT_NORM_LIMIT = 2500


class DimensionError(ValueError):
    """Raised when operands do not fit together or a dense request is too large."""


@dataclass(frozen=True)
class LegSpace:
    """One truncated leg with ``fock_levels`` Fock levels and winding radius ``winding_radius``."""

    fock_levels: int
    winding_radius: int

    def __post_init__(self):
        if int(self.fock_levels) != self.fock_levels or self.fock_levels < 3:
            raise ValueError(f"fock_levels must be an integer >= 3, got {self.fock_levels}")
        if int(self.winding_radius) != self.winding_radius or self.winding_radius < 1:
            raise ValueError(f"winding_radius must be an integer >= 1, got {self.winding_radius}")

    @property
    def windings(self) -> int:
        return 2 * self.winding_radius + 1

    @property
    def dim(self) -> int:
        return self.fock_levels * self.windings

    def index(self, n: int, k: int) -> int:
        """Flat index of xi_{n,k}; k is reduced cyclically."""
        if not 0 <= n < self.fock_levels:
            raise IndexError(f"Fock level {n} outside 0..{self.fock_levels - 1}")
        return n * self.windings + (k % self.windings)

    def label(self, i: int) -> tuple[int, int]:
        """Inverse of :meth:`index`, with k in {-K, ..., K}."""
        if not 0 <= i < self.dim:
            raise IndexError(f"flat index {i} outside 0..{self.dim - 1}")
        n, j = divmod(i, self.windings)
        k = j if j <= self.winding_radius else j - self.windings
        return n, k

    def levels(self) -> np.ndarray:
        """Fock level of every flat index."""
        return np.repeat(np.arange(self.fock_levels), self.windings)


def total_dim(legs: Sequence[LegSpace]) -> int:
    return math.prod(leg.dim for leg in legs)


def level_mask(legs: Sequence[LegSpace], levels: int | Sequence[int]) -> np.ndarray:
    """Boolean mask of basis vectors whose Fock level is below ``levels`` on every leg."""
    if isinstance(levels, (int, np.integer)):
        levels = [int(levels)] * len(legs)
    mask = np.ones(1, dtype=bool)
    for leg, cut in zip(legs, levels):
        mask = np.kron(mask, leg.levels() < cut).astype(bool)
    return mask


def basis_vector(legs: Sequence[LegSpace], labels: Sequence[tuple[int, int]]) -> np.ndarray:
    """Elementary tensor xi_{n1,k1} (x) ... (x) xi_{nL,kL} as a flat complex vector."""
    if len(labels) != len(legs):
        raise DimensionError("one (n, k) label per leg is required")
    idx = 0
    for leg, (n, k) in zip(legs, labels):
        idx = idx * leg.dim + leg.index(n, k)
    v = np.zeros(total_dim(legs), dtype=complex)
    v[idx] = 1.0
    return v


def opnorm(m) -> float:
    """Spectral norm of a matrix: exact when small, the bound sqrt(|m|_1 |m|_inf) when large."""
    if isinstance(m, LinOp):
        m = m.to_sparse()
    if min(m.shape) == 0:
        return 0.0
    if sp.issparse(m):
        if m.nnz == 0:
            return 0.0
        if max(m.shape) <= EXACT_NORM_LIMIT:
            return float(np.linalg.norm(m.toarray(), 2))
        a = abs(m)
        col = a.sum(axis=0).max()
        row = a.sum(axis=1).max()
        return float(np.sqrt(col * row))
    m = np.asarray(m)
    if max(m.shape) <= EXACT_NORM_LIMIT:
        return float(np.linalg.norm(m, 2))
    a = np.abs(m)
    return float(np.sqrt(a.sum(axis=0).max() * a.sum(axis=1).max()))


def _check_legs(x: tuple, y: tuple, what: str):
    if x != y:
        raise DimensionError(f"leg mismatch in {what}: {x} vs {y}")


class LinOp:
    """Immutable complex linear operator on a tensor product of legs."""

    legs: tuple[LegSpace, ...]

    @property
    def dim(self) -> int:
        return total_dim(self.legs)

    @property
    def shape(self) -> tuple[int, int]:
        return (self.dim, self.dim)

    def _matmat(self, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def _build_sparse(self) -> sp.csr_matrix:
        raise NotImplementedError

    def adjoint(self) -> LinOp:
        raise NotImplementedError

    @property
    def H(self) -> LinOp:
        return self.adjoint()

    def matmat(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x)
        if x.ndim != 2 or x.shape[0] != self.dim:
            raise DimensionError(f"expected a ({self.dim}, c) block, got shape {x.shape}")
        return self._matmat(x.astype(complex, copy=False))

    def apply(self, v: np.ndarray) -> np.ndarray:
        v = np.asarray(v)
        if v.ndim != 1 or v.shape[0] != self.dim:
            raise DimensionError(f"expected a vector of length {self.dim}, got shape {v.shape}")
        return self._matmat(v.astype(complex, copy=False)[:, None])[:, 0]

    def to_sparse(self) -> sp.csr_matrix:
        """Materialized CSR matrix (cached; treat as read-only)."""
        cached = self.__dict__.get("_sparse_cache")
        if cached is None:
            cached = sp.csr_matrix(self._build_sparse(), dtype=complex)
            cached.sum_duplicates()
            object.__setattr__(self, "_sparse_cache", cached)
        return cached

    def to_dense(self) -> np.ndarray:
        if self.dim > DENSE_LIMIT:
            raise DimensionError(
                f"dense matrix of dimension {self.dim} refused (limit {DENSE_LIMIT}); use matrix-free evaluation"
            )
        return self.to_sparse().toarray()

    def __matmul__(self, other):
        if isinstance(other, LinOp):
            return product(self, other)
        other = np.asarray(other)
        return self.apply(other) if other.ndim == 1 else self.matmat(other)

    def __add__(self, other: LinOp) -> LinOp:
        return combine([(1.0, self), (1.0, other)])

    def __sub__(self, other: LinOp) -> LinOp:
        return combine([(1.0, self), (-1.0, other)])

    def __neg__(self) -> LinOp:
        return combine([(-1.0, self)])

    def __mul__(self, c) -> LinOp:
        if not np.isscalar(c):
            return NotImplemented
        return combine([(complex(c), self)])

    __rmul__ = __mul__

    def __truediv__(self, c) -> LinOp:
        return self * (1.0 / c)


@dataclass(frozen=True, eq=False)
class MatrixOp(LinOp):
    """Stored matrix (sparse CSR or dense array)."""

    legs: tuple[LegSpace, ...]
    matrix: object

    def __post_init__(self):
        m = self.matrix
        if sp.issparse(m):
            m = sp.csr_matrix(m, dtype=complex, copy=True)
            m.sum_duplicates()
            m.sort_indices()
            m.data.setflags(write=False)
        else:
            m = np.array(m, dtype=complex)
            m.setflags(write=False)
        if m.shape != (total_dim(self.legs),) * 2:
            raise DimensionError(f"matrix shape {m.shape} does not match legs of dimension {total_dim(self.legs)}")
        object.__setattr__(self, "legs", tuple(self.legs))
        object.__setattr__(self, "matrix", m)

    def _matmat(self, x):
        return np.asarray(self.matrix @ x)

    def _build_sparse(self):
        return self.matrix

    def adjoint(self):
        return MatrixOp(self.legs, self.matrix.conj().T)


@dataclass(frozen=True, eq=False)
class ProductOp(LinOp):
    """Composition factors[0] @ factors[1] @ ... (rightmost acts first)."""

    factors: tuple[LinOp, ...]

    @property
    def legs(self):
        return self.factors[0].legs

    def _matmat(self, x):
        for f in reversed(self.factors):
            x = f._matmat(x)
        return x

    def _build_sparse(self):
        out = self.factors[-1].to_sparse()
        for f in reversed(self.factors[:-1]):
            out = f.to_sparse() @ out
        return out

    def adjoint(self):
        return ProductOp(tuple(f.adjoint() for f in reversed(self.factors)))


@dataclass(frozen=True, eq=False)
class SumOp(LinOp):
    """Linear combination sum_i c_i T_i."""

    terms: tuple[tuple[complex, LinOp], ...]

    @property
    def legs(self):
        return self.terms[0][1].legs

    def _matmat(self, x):
        out = None
        for c, t in self.terms:
            y = c * t._matmat(x)
            out = y if out is None else out + y
        return out

    def _build_sparse(self):
        out = None
        for c, t in self.terms:
            y = c * t.to_sparse()
            out = y if out is None else out + y
        return out

    def adjoint(self):
        return SumOp(tuple((np.conj(c), t.adjoint()) for c, t in self.terms))


@dataclass(frozen=True, eq=False)
class TensorOp(LinOp):
    """left (x) right, applied by reshaping instead of forming the Kronecker product."""

    left: LinOp
    right: LinOp

    @property
    def legs(self):
        return self.left.legs + self.right.legs

    def _matmat(self, x):
        dl, dr, c = self.left.dim, self.right.dim, x.shape[1]
        y = x.reshape(dl, dr, c).transpose(1, 0, 2).reshape(dr, dl * c)
        y = self.right._matmat(y)
        y = y.reshape(dr, dl, c).transpose(1, 0, 2).reshape(dl, dr * c)
        y = self.left._matmat(y)
        return y.reshape(dl * dr, c)

    def _build_sparse(self):
        return sp.kron(self.left.to_sparse(), self.right.to_sparse(), format="csr")

    def adjoint(self):
        return TensorOp(self.left.adjoint(), self.right.adjoint())


@dataclass(frozen=True, eq=False)
class FactoredOp(LinOp):
    """U @ core @ V^H with tall sparse U, V; used for spectral projectors and partial isometries."""

    legs: tuple[LegSpace, ...]
    u: object
    core: object
    v: object

    def __post_init__(self):
        object.__setattr__(self, "legs", tuple(self.legs))
        u, core, v = (sp.csr_matrix(m, dtype=complex) for m in (self.u, self.core, self.v))
        d = total_dim(self.legs)
        if u.shape[0] != d or v.shape[0] != d or core.shape != (u.shape[1], v.shape[1]):
            raise DimensionError("factor shapes do not match")
        object.__setattr__(self, "u", u)
        object.__setattr__(self, "core", core)
        object.__setattr__(self, "v", v)
        object.__setattr__(self, "_vh", v.conj().T.tocsr())

    def _matmat(self, x):
        return np.asarray(self.u @ (self.core @ (self._vh @ x)))

    def _build_sparse(self):
        return self.u @ self.core @ self._vh

    def adjoint(self):
        return FactoredOp(self.legs, self.v, self.core.conj().T, self.u)


def identity(legs: Sequence[LegSpace]) -> LinOp:
    legs = tuple(legs)
    return MatrixOp(legs, sp.identity(total_dim(legs), dtype=complex, format="csr"))


def zero(legs: Sequence[LegSpace]) -> LinOp:
    legs = tuple(legs)
    return MatrixOp(legs, sp.csr_matrix((total_dim(legs),) * 2, dtype=complex))


def product(*factors: LinOp) -> LinOp:
    flat: list[LinOp] = []
    for f in factors:
        _check_legs(f.legs, factors[0].legs, "product")
        flat.extend(f.factors if isinstance(f, ProductOp) else (f,))
    return ProductOp(tuple(flat))


def combine(terms: Sequence[tuple[complex, LinOp]]) -> LinOp:
    """Linear combination of operators on the same legs."""
    flat: list[tuple[complex, LinOp]] = []
    for c, t in terms:
        _check_legs(t.legs, terms[0][1].legs, "linear combination")
        if isinstance(t, SumOp):
            flat.extend((c * ci, ti) for ci, ti in t.terms)
        else:
            flat.append((complex(c), t))
    return SumOp(tuple(flat))


def tensor(t: LinOp, s: LinOp) -> LinOp:
    return TensorOp(t, s)


def apply(t: LinOp, v: np.ndarray) -> np.ndarray:
    return t.apply(v)


def adjoint(t: LinOp) -> LinOp:
    return t.adjoint()


def materialize(t: LinOp) -> LinOp:
    """Replace a composite by its stored sparse matrix."""
    return t if isinstance(t, MatrixOp) else MatrixOp(t.legs, t.to_sparse())


@dataclass(frozen=True, eq=False)
class StateWeights:
    """Product functional x -> prefactor * sum_n rho_n <x u xi_{n,0}, u xi_{n,0}>.

    ``weights[i]`` holds rho_n for the Fock levels n of leg i that carry weight;
    ``conjugators[i]`` is an optional one-leg unitary u.
    """

    legs: tuple[LegSpace, ...]
    weights: tuple[np.ndarray, ...]
    conjugators: tuple[LinOp | None, ...]
    prefactor: float = 1.0

    def __post_init__(self):
        ws = []
        for leg, w in zip(self.legs, self.weights):
            w = np.array(w, dtype=float)
            if w.ndim != 1 or len(w) > leg.fock_levels:
                raise DimensionError("weight vector longer than the leg's Fock range")
            w.setflags(write=False)
            ws.append(w)
        if not len(self.legs) == len(ws) == len(self.conjugators):
            raise DimensionError("one weight vector and one conjugator slot per leg")
        for leg, u in zip(self.legs, self.conjugators):
            if u is not None:
                _check_legs(u.legs, (leg,), "state conjugator")
        object.__setattr__(self, "legs", tuple(self.legs))
        object.__setattr__(self, "weights", tuple(ws))
        object.__setattr__(self, "conjugators", tuple(self.conjugators))

    def vectors(self, i: int) -> np.ndarray:
        """Columns u xi_{n,0} for leg ``i``, one per weighted level."""
        leg, u = self.legs[i], self.conjugators[i]
        cols = np.zeros((leg.dim, len(self.weights[i])), dtype=complex)
        for n in range(len(self.weights[i])):
            cols[leg.index(n, 0), n] = 1.0
        return cols if u is None else u.matmat(cols)

    def joint_weights(self) -> np.ndarray:
        out = np.ones(1)
        for w in self.weights:
            out = np.kron(out, w)
        return out


def single_state(leg: LegSpace, weights, conjugator: LinOp | None = None, prefactor: float = 1.0) -> StateWeights:
    return StateWeights((leg,), (np.asarray(weights, dtype=float),), (conjugator,), prefactor)


def product_state(*states: StateWeights) -> StateWeights:
    return StateWeights(
        sum((s.legs for s in states), ()),
        sum((s.weights for s in states), ()),
        sum((s.conjugators for s in states), ()),
        math.prod(s.prefactor for s in states),
    )


def _joint_columns(blocks: Sequence[np.ndarray], cols: np.ndarray) -> np.ndarray:
    """Columns kron(blocks[0][:, j0], blocks[1][:, j1], ...) for the joint indices ``cols``."""
    multi = np.unravel_index(cols, [b.shape[1] for b in blocks])
    out = blocks[0][:, multi[0]]
    for b, j in zip(blocks[1:], multi[1:]):
        bj = b[:, j]
        out = (out[:, None, :] * bj[None, :, :]).reshape(out.shape[0] * bj.shape[0], len(cols))
    return out


def _chunks(total: int, dim: int, budget: int = 2_000_000) -> list[slice]:
    step = max(1, budget // max(dim, 1))
    return [slice(i, min(i + step, total)) for i in range(0, total, step)]


def eval_state(omega: StateWeights, t: LinOp) -> complex:
    """prefactor * sum over multi-indices of joint weight times <T v, v>."""
    _check_legs(omega.legs, t.legs, "eval_state")
    vecs = [omega.vectors(i) for i in range(len(omega.legs))]
    rho = omega.joint_weights()
    keep = np.flatnonzero(rho)
    terms = []
    for chunk in _chunks(len(keep), t.dim):
        cols = keep[chunk]
        v = _joint_columns(vecs, cols)
        tv = t.matmat(v)
        terms.append(rho[cols] * np.einsum("ij,ij->j", v.conj(), tv))
    terms = np.concatenate(terms) if terms else np.zeros(0, dtype=complex)
    # exactly rounded sums do not depend on the summation order
    total = complex(math.fsum(terms.real), math.fsum(terms.imag))
    return omega.prefactor * total


# Slices of operators up to this dimension go through the stored sparse matrix.
SPARSE_SLICE_LIMIT = 60000


def _slice_sparse(t: LinOp, omega: StateWeights, side: str, free, traced) -> np.ndarray:
    df, dt = total_dim(free), total_dim(traced)
    conj = sp.identity(1, dtype=complex, format="csr")
    for leg, u in zip(omega.legs, omega.conjugators):
        um = sp.identity(leg.dim, dtype=complex, format="csr") if u is None else u.to_sparse()
        conj = sp.kron(conj, um, format="csr")
    eye = sp.identity(df, dtype=complex, format="csr")
    k = sp.kron(eye, conj, format="csr") if side == "right" else sp.kron(conj, eye, format="csr")
    m = (k.conj().T @ t.to_sparse() @ k).tocsr()
    rho = omega.joint_weights()
    sizes = [len(w) for w in omega.weights]
    out = np.zeros((df, df), dtype=complex)
    for j in np.flatnonzero(rho):
        pos = 0
        for leg, n in zip(omega.legs, np.unravel_index(j, sizes)):
            pos = pos * leg.dim + leg.index(int(n), 0)
        idx = np.arange(df) * dt + pos if side == "right" else pos * df + np.arange(df)
        out += rho[j] * m[idx][:, idx].toarray()
    return out


def _slice(t: LinOp, omega: StateWeights, side: str) -> LinOp:
    k = len(omega.legs)
    if side == "right":
        free, traced = t.legs[: len(t.legs) - k], t.legs[len(t.legs) - k:]
    else:
        traced, free = t.legs[:k], t.legs[k:]
    _check_legs(traced, omega.legs, f"slice_{side}")
    if not free:
        raise DimensionError("slice needs at least one untraced leg")
    if t.dim <= SPARSE_SLICE_LIMIT:
        return MatrixOp(free, omega.prefactor * _slice_sparse(t, omega, side, free, traced))
    df, dt = total_dim(free), total_dim(traced)
    vecs = [omega.vectors(i) for i in range(k)]
    rho = omega.joint_weights()
    eye = np.eye(df, dtype=complex)
    out = np.zeros((df, df), dtype=complex)
    for j in np.flatnonzero(rho):
        u = _joint_columns(vecs, np.array([j]))
        if side == "right":
            y = t.matmat(np.kron(eye, u)).reshape(df, dt, df)
            out += rho[j] * np.einsum("t,itc->ic", u[:, 0].conj(), y)
        else:
            y = t.matmat(np.kron(u, eye)).reshape(dt, df, df)
            out += rho[j] * np.einsum("t,tic->ic", u[:, 0].conj(), y)
    return MatrixOp(free, omega.prefactor * out)


def slice_right(t: LinOp, omega: StateWeights) -> LinOp:
    """(iota (x) omega)(T): trace the rightmost legs of T against omega."""
    return _slice(t, omega, "right")


def slice_left(t: LinOp, omega: StateWeights) -> LinOp:
    """(omega (x) iota)(T): trace the leftmost legs of T against omega."""
    return _slice(t, omega, "left")


def probe_vectors(dim: int, probes: int, seed: int, support: np.ndarray | None = None) -> np.ndarray:
    """Normalized complex Gaussian columns, zero outside ``support``."""
    if probes < 1:
        raise ValueError("probes must be >= 1")
    rng = np.random.default_rng(seed)
    idx = np.arange(dim) if support is None else np.flatnonzero(support)
    v = np.zeros((dim, probes), dtype=complex)
    v[idx] = rng.standard_normal((len(idx), probes)) + 1j * rng.standard_normal((len(idx), probes))
    return v / np.linalg.norm(v, axis=0)


def probe_residual(t: LinOp, s: LinOp, probes: int, seed: int, support: np.ndarray | None = None) -> float:
    """max over seeded unit Gaussian probes v of |T v - S v|."""
    _check_legs(t.legs, s.legs, "probe_residual")
    v = probe_vectors(t.dim, probes, seed, support)
    r = t.matmat(v) - s.matmat(v)
    return float(np.linalg.norm(r, axis=0).max())


@functools.lru_cache(maxsize=None)
def _window_indices(legs: tuple[LegSpace, ...], levels: tuple[int, ...]) -> np.ndarray:
    return np.flatnonzero(level_mask(legs, levels))


def window_norm(m, legs: Sequence[LegSpace], levels: int | Sequence[int]) -> float:
    """Spectral norm of ``m`` compressed to the window of Fock levels < ``levels`` on every leg."""
    if isinstance(levels, (int, np.integer)):
        levels = [int(levels)] * len(legs)
    idx = _window_indices(tuple(legs), tuple(levels))
    if isinstance(m, LinOp):
        m = m.to_sparse()
    m = m[idx][:, idx] if sp.issparse(m) else np.asarray(m)[np.ix_(idx, idx)]
    return opnorm(m)


def column_norm(m, legs: Sequence[LegSpace], levels: int | Sequence[int]) -> float:
    """Spectral norm of ``m`` restricted to input vectors supported in the window."""
    if isinstance(levels, (int, np.integer)):
        levels = [int(levels)] * len(legs)
    idx = _window_indices(tuple(legs), tuple(levels))
    if isinstance(m, LinOp):
        m = m.to_sparse()
    m = m[:, idx] if sp.issparse(m) else np.asarray(m)[:, idx]
    return opnorm(m)
