"""One leg of SU_q(2): generators, relations, Haar state and spectral elements.

Each leg carries two Fock cutoffs.  ``fock_levels`` N is the state window:
Haar weights live on levels n < N.  Operators act on N + ``guard_levels``
levels, so that elements built by spectral calculus (which see the hard
cut) are exact on the window even in multi-leg representations.
"""

from __future__ import annotations

import functools
import math
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import connected_components

from .linalg import (
    FactoredOp,
    LegSpace,
    LinOp,
    MatrixOp,
    StateWeights,
    column_norm,
    eval_state,
    identity,
    materialize,
    opnorm,
    product,
    total_dim,
)

EPS = np.finfo(float).eps
# Levels 0..2 are the ones w needs; level 3 is resolved too so that the
# third cluster is separated from the tail.
DEFAULT_LEVELS = 3


class ClusterOverlapError(ValueError):
    """Two spectral targets are closer than twice the cluster tolerance."""


def level_values(q: float, count: int) -> np.ndarray:
    """The spectrum 1 - q^{2n}, n < count, of a*a."""
    return 1.0 - float(q) ** (2.0 * np.arange(count))


def auto_cluster_tol(q: float, levels: int = DEFAULT_LEVELS) -> float:
    """A quarter of the smallest gap among 1 - q^{2n}, n <= levels."""
    vals = level_values(q, levels + 1)
    return float(np.diff(vals).min()) / 4.0


@dataclass(frozen=True)
class TruncSpec:
    """Truncation and tolerance parameters for one SU_q(2) leg."""

    q: float
    fock_levels: int = 8
    winding_radius: int = 3
    cluster_tol: float | str = "auto"
    guard_levels: int = 7

    def __post_init__(self):
        q = float(self.q)
        if not np.isfinite(q) or not 0.0 < abs(q) < 1.0:
            raise ValueError(f"q must satisfy 0 < |q| < 1, got {self.q}")
        object.__setattr__(self, "q", q)
        if int(self.guard_levels) != self.guard_levels or self.guard_levels < 0:
            raise ValueError(f"guard_levels must be a nonnegative integer, got {self.guard_levels}")
        LegSpace(self.fock_levels, self.winding_radius)
        if self.cluster_tol != "auto":
            tol = float(self.cluster_tol)
            if not tol > 0:
                raise ValueError(f"cluster_tol must be positive or 'auto', got {self.cluster_tol}")
            object.__setattr__(self, "cluster_tol", tol)
        if self.tolerance() <= 100 * EPS:
            raise ClusterOverlapError(
                f"spectral clusters indistinguishable at this truncation: cluster tolerance "
                f"{self.tolerance():.3g} <= 100 machine epsilon for q={q}; decrease |q| or raise the precision"
            )

    @property
    def leg(self) -> LegSpace:
        """Operator leg, including the guard levels."""
        return LegSpace(self.fock_levels + self.guard_levels, self.winding_radius)

    @property
    def operator_levels(self) -> int:
        return self.fock_levels + self.guard_levels

    def tolerance(self, levels: int = DEFAULT_LEVELS) -> float:
        if self.cluster_tol == "auto":
            return auto_cluster_tol(self.q, levels)
        return float(self.cluster_tol)


def haar_weights(q: float, fock_levels: int) -> np.ndarray:
    """Haar weights rho_n = (1-q^2) q^{2n} for n < N-1, with the tail mass on level N-1.

    The last level carries the whole tail sum_{n >= N-1} (1-q^2) q^{2n} =
    q^{2(N-1)}, taken as 1 minus the other weights so that the weights sum
    to one exactly.  The values on p = e_00 and p' = e_11 are then the
    untruncated ones.
    """
    q2 = float(q) ** 2
    rho = (1.0 - q2) * q2 ** np.arange(fock_levels, dtype=float)
    rho[-1] = 1.0 - math.fsum(rho[:-1])
    return rho


@dataclass(frozen=True, eq=False)
class GenSet:
    """Generators a, b represented on ``len(specs)`` legs."""

    a: LinOp
    b: LinOp
    specs: tuple[TruncSpec, ...]

    @property
    def legs(self) -> tuple[LegSpace, ...]:
        return self.a.legs

    @property
    def num_legs(self) -> int:
        return len(self.specs)

    @property
    def q(self) -> float:
        qs = {s.q for s in self.specs}
        if len(qs) != 1:
            raise ValueError("generator set mixes different q values")
        return self.specs[0].q


def _generator_matrices(q: float, leg: LegSpace) -> tuple[sp.csr_matrix, sp.csr_matrix]:
    m = leg.windings
    n = leg.levels()
    k = np.tile(np.arange(m), leg.fock_levels)
    src = n * m + k
    up = n > 0
    a = sp.csr_matrix(
        (np.sqrt(1.0 - q ** (2.0 * n[up])), ((n[up] - 1) * m + k[up], src[up])),
        shape=(leg.dim, leg.dim),
        dtype=complex,
    )
    b = sp.csr_matrix(
        (q ** n.astype(float), (n * m + (k + 1) % m, src)),
        shape=(leg.dim, leg.dim),
        dtype=complex,
    )
    return a, b


@functools.lru_cache(maxsize=None)
def build_generators(spec: TruncSpec) -> GenSet:
    """a xi_{n,k} = sqrt(1-q^{2n}) xi_{n-1,k};  b xi_{n,k} = q^n xi_{n,k+1} (k cyclic)."""
    a, b = _generator_matrices(spec.q, spec.leg)
    return GenSet(MatrixOp((spec.leg,), a), MatrixOp((spec.leg,), b), (spec,))


RELATIONS = ("a*a+b*b=1", "aa*+q^2bb*=1", "ab=qba", "a*b=q^-1ba*", "bb*=b*b")


@dataclass(frozen=True)
class RelationResidual:
    interior: float
    whole: float


def relation_residuals(g: GenSet) -> dict[str, RelationResidual]:
    """Residuals of the five defining relations on the interior and on the whole space.

    The interior consists of vectors with every Fock level at most L-2,
    where L is the operator cutoff.
    """
    q = g.q
    a, b = g.a.to_sparse(), g.b.to_sparse()
    ah, bh = a.conj().T.tocsr(), b.conj().T.tocsr()
    one = sp.identity(a.shape[0], dtype=complex, format="csr")
    diffs = {
        "a*a+b*b=1": ah @ a + bh @ b - one,
        "aa*+q^2bb*=1": a @ ah + q * q * (b @ bh) - one,
        "ab=qba": a @ b - q * (b @ a),
        "a*b=q^-1ba*": ah @ b - (b @ ah) / q,
        "bb*=b*b": b @ bh - bh @ b,
    }
    cut = [leg.fock_levels - 1 for leg in g.legs]
    return {
        name: RelationResidual(column_norm(d.tocsr(), g.legs, cut), opnorm(d.tocsr()))
        for name, d in diffs.items()
    }


def haar_vector(specs: Sequence[TruncSpec]) -> np.ndarray:
    """Flat joint Haar weights: rho_{n1}...rho_{nL} at xi_{n1,0} (x) ... (x) xi_{nL,0}, zero elsewhere."""
    out = np.ones(1)
    for s in specs:
        v = np.zeros(s.leg.dim)
        v[np.arange(s.fock_levels) * s.leg.windings] = haar_weights(s.q, s.fock_levels)
        out = np.kron(out, v)
    return out


def haar(g: GenSet) -> StateWeights:
    """Product Haar state over the legs of ``g``."""
    return StateWeights(
        g.legs,
        tuple(haar_weights(s.q, s.fock_levels) for s in g.specs),
        (None,) * g.num_legs,
    )


@dataclass(frozen=True)
class ClusterReport:
    """How the eigenvalues of X were assigned to spectral targets."""

    targets: tuple[float, ...]
    tol: float
    counts: tuple[int, ...]
    max_deviation: float
    unassigned: int
    junk: int
    junk_weight: float
    method: str


def _check_hermitian(x: sp.csr_matrix):
    diff = abs(x - x.conj().T)
    scale = max(1.0, abs(x).max() if x.nnz else 0.0)
    if diff.nnz and diff.max() > 1e-12 * scale:
        raise ValueError(f"operator is not hermitian (defect {diff.max():.3g})")


def _check_separation(targets: Sequence[float], tol: float):
    t = np.sort(np.asarray(targets, dtype=float))
    if len(t) > 1 and np.diff(t).min() <= 2 * tol:
        raise ClusterOverlapError(
            "spectral clusters indistinguishable at this truncation "
            f"(gap {np.diff(t).min():.3g} <= 2*tol = {2 * tol:.3g}); increase N or decrease |q|"
        )


def _eigen_bases(x: sp.csr_matrix, targets: np.ndarray, tol: float, ladder: np.ndarray | None, weights: np.ndarray | None):
    """Orthonormal eigenbases of each cluster, via dense eigh on each connected block of X.

    Returns one sparse (dim, rank) matrix per target whose columns span the cluster.
    """
    ncomp, labels = connected_components(x != 0, directed=False)
    order = np.argsort(labels, kind="stable")
    bounds = np.searchsorted(labels[order], np.arange(ncomp + 1))
    parts: list[tuple[list, list, list]] = [([], [], []) for _ in targets]
    ranks = np.zeros(len(targets), dtype=int)
    max_dev, unassigned, junk, junk_weight = 0.0, 0, 0, 0.0
    for c in range(ncomp):
        ii = order[bounds[c] : bounds[c + 1]]
        if len(ii) == 1:
            ev, vec = np.array([x[ii[0], ii[0]].real]), np.ones((1, 1), dtype=complex)
        else:
            ev, vec = np.linalg.eigh(x[ii][:, ii].toarray())
        dist = np.abs(ev[:, None] - targets[None, :])
        near = dist.argmin(axis=1)
        for j, m in enumerate(near):
            if dist[j, m] < tol:
                rows, cols, vals = parts[m]
                rows.append(ii)
                cols.append(np.full(len(ii), ranks[m]))
                vals.append(vec[:, j])
                ranks[m] += 1
                max_dev = max(max_dev, dist[j, m])
                continue
            unassigned += 1
            if ladder is not None and np.abs(ladder - ev[j]).min() >= tol:
                junk += 1
                if weights is not None:
                    junk_weight += float(weights[ii] @ np.abs(vec[:, j]) ** 2)
    dim = x.shape[0]
    bases = []
    for (rows, cols, vals), r in zip(parts, ranks):
        if r == 0:
            bases.append(sp.csr_matrix((dim, 0), dtype=complex))
            continue
        bases.append(
            sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(dim, r))
        )
    return bases, ranks, max_dev, unassigned, junk, junk_weight


def _interpolation_projector(x: sp.csr_matrix, target: float, spectrum: np.ndarray) -> sp.csr_matrix:
    """Lagrange polynomial of X through the known spectrum, equal to 1 at ``target``."""
    others = np.unique(spectrum[np.abs(spectrum - target) > 0])
    one = sp.identity(x.shape[0], dtype=complex, format="csr")
    p = one
    for lam in others:
        p = p @ ((x - lam * one) / (target - lam))
    return p.tocsr()


def _is_projector(p: sp.csr_matrix, tol: float = 1e-10) -> bool:
    if p.nnz == 0:
        return True
    herm = abs(p - p.conj().T)
    idem = abs(p @ p - p)
    return (herm.max() if herm.nnz else 0.0) <= tol and (idem.max() if idem.nnz else 0.0) <= tol


def _resolve(x: LinOp, targets, tol, spectrum=None, ladder=None, weights=None):
    """Shared path of spectral_resolution; returns projectors, cluster bases (or None) and the report."""
    targets = np.asarray(targets, dtype=float)
    _check_separation(targets, tol)
    xs = x.to_sparse()
    _check_hermitian(xs)
    if spectrum is not None:
        projs = [_interpolation_projector(xs, t, np.asarray(spectrum, dtype=float)) for t in targets]
        if all(_is_projector(p) for p in projs):
            diag = xs.diagonal().real
            counts = tuple(int(round(p.diagonal().real.sum())) for p in projs)
            dev = max(np.abs(diag[p.diagonal().real > 0.5] - t).max(initial=0.0) for p, t in zip(projs, targets))
            report = ClusterReport(
                tuple(targets), tol, counts, float(dev), xs.shape[0] - sum(counts), 0, 0.0, "interpolation"
            )
            return [MatrixOp(x.legs, p) for p in projs], None, report
    bases, ranks, dev, unassigned, junk, junk_weight = _eigen_bases(
        xs, targets, tol, None if ladder is None else np.asarray(ladder, dtype=float), weights
    )
    report = ClusterReport(
        tuple(float(t) for t in targets), tol, tuple(int(r) for r in ranks), float(dev), unassigned, junk, junk_weight, "eigh"
    )
    projs = [FactoredOp(x.legs, u, sp.identity(u.shape[1], dtype=complex), u) for u in bases]
    return projs, bases, report


def spectral_resolution(
    x: LinOp,
    targets: Sequence[float],
    tol: float,
    *,
    spectrum: Sequence[float] | None = None,
    ladder: Sequence[float] | None = None,
    weights: np.ndarray | None = None,
) -> tuple[list[LinOp], ClusterReport]:
    """Orthogonal projectors onto the eigenvalues of hermitian X within ``tol`` of each target.

    With ``spectrum`` (the full known spectrum of X) the projectors are first
    tried as Lagrange interpolation polynomials of X; if any fails the
    hermitian/idempotent check the eigendecomposition path is used instead.
    ``ladder`` and ``weights`` only feed the report: eigenvalues near no
    ladder value count as junk and their weight under ``weights`` is summed.
    """
    projs, _, report = _resolve(x, targets, tol, spectrum, ladder, weights)
    return projs, report


def spectral_projector(x: LinOp, target: float, tol: float, spectrum: Sequence[float] | None = None) -> LinOp:
    """Projector onto the eigenvectors of X with eigenvalue within ``tol`` of ``target``."""
    projs, _, _ = _resolve(x, [target], tol, spectrum)
    return projs[0]


@dataclass(frozen=True, eq=False)
class SpectralElems:
    """Matrix units e_mn (m, n < levels), p = e_00, p' = e_11 and the unitary w."""

    projectors: tuple[LinOp, ...]
    units: dict = field(repr=False)
    p: LinOp
    p_prime: LinOp
    w: LinOp
    rest: LinOp
    report: ClusterReport

    def e(self, m: int, n: int) -> LinOp:
        return self.units[(m, n)]

    @property
    def levels(self) -> int:
        return len(self.projectors)


def singular_product(q: float, m: int, n: int) -> float:
    """c = prod_{j=m+1}^{n} sqrt(1 - q^{2j}), the weight of a^{n-m} from level n to level m."""
    return float(np.prod([np.sqrt(1.0 - q ** (2.0 * j)) for j in range(m + 1, n + 1)]))


# Spectral elements on spaces up to this dimension are stored as sparse matrices.
MATERIALIZE_LIMIT = 20000


def build_spectral_elems(g: GenSet, levels: int = DEFAULT_LEVELS) -> SpectralElems:
    """e_mn = c^{-1} e_mm a^{n-m} e_nn from spectral projectors of a*a, and w = e01 + e12 + e20 + rest.

    Elements are kept in factored form U G V* (columns of U, V spanning the
    clusters) and stored as sparse matrices only on small spaces.
    """
    if levels < 3:
        raise ValueError("at least three levels are needed to build w")
    q = g.q
    tol = g.specs[0].tolerance(levels)
    a = g.a.to_sparse()
    x = MatrixOp(g.legs, (a.conj().T @ a).tocsr())
    ladder_len = min(leg.fock_levels for leg in g.legs)
    _check_separation(level_values(q, levels + 1), tol)
    projs, bases, report = _resolve(
        x,
        level_values(q, levels),
        tol,
        spectrum=level_values(q, ladder_len) if g.num_legs == 1 else None,
        ladder=np.append(level_values(q, ladder_len), 1.0),
        weights=haar_vector(g.specs),
    )
    if bases is None:
        bases = [None] * levels
    units: dict[tuple[int, int], LinOp] = {}
    for m in range(levels):
        units[(m, m)] = projs[m]
        for n in range(m + 1, levels):
            c = singular_product(q, m, n)
            if bases[m] is None:
                pm, pn = projs[m].to_sparse(), projs[n].to_sparse()
                power = pn
                for _ in range(n - m):
                    power = a @ power
                e = MatrixOp(g.legs, (pm @ power / c).tocsr())
            else:
                um, un = bases[m], bases[n]
                power = un
                for _ in range(n - m):
                    power = a @ power
                e = FactoredOp(g.legs, um, (um.conj().T @ power / c).tocsr(), un)
            units[(m, n)] = e
            units[(n, m)] = e.adjoint()
    one = identity(g.legs)
    tail = one - projs[0] - projs[1] - projs[2]
    rest = tail
    for m in range(3, levels):
        rest = rest - projs[m]
    w = units[(0, 1)] + units[(1, 2)] + units[(2, 0)] + tail
    if total_dim(g.legs) <= MATERIALIZE_LIMIT:
        projs = [materialize(pr) for pr in projs]
        units = {k: materialize(v) for k, v in units.items()}
        w, rest = materialize(w), materialize(rest)
    return SpectralElems(
        projectors=tuple(projs),
        units=units,
        p=projs[0],
        p_prime=projs[1],
        w=w,
        rest=rest,
        report=report,
    )


@functools.lru_cache(maxsize=None)
def spectral_elems(spec: TruncSpec, levels: int = DEFAULT_LEVELS) -> SpectralElems:
    """Cached one-leg spectral elements."""
    return build_spectral_elems(build_generators(spec), levels)


LETTERS = ("a", "a*", "b", "b*")


def letter_ops(g: GenSet) -> dict[str, LinOp]:
    return {"a": g.a, "a*": g.a.adjoint(), "b": g.b, "b*": g.b.adjoint()}


def word_op(g: GenSet, word: Sequence[str]) -> LinOp:
    """Operator of a word in a, a*, b, b* (empty word is the identity)."""
    ops = letter_ops(g)
    if not word:
        return identity(g.legs)
    return product(*(ops[w] for w in word))


def random_polynomial(
    g: GenSet, rng: np.random.Generator, max_len: int = 4, terms: int = 3, normalize: bool = False
) -> LinOp:
    """Random combination of words of length 1..max_len with complex Gaussian coefficients.

    With ``normalize`` the coefficients are divided by the sum of their
    moduli, which puts the element in the unit ball.
    """
    words, coefs = [], []
    for _ in range(terms):
        length = int(rng.integers(1, max_len + 1))
        words.append([LETTERS[i] for i in rng.integers(0, 4, size=length)])
        coefs.append(complex(rng.standard_normal(), rng.standard_normal()))
    if normalize:
        scale = sum(abs(c) for c in coefs)
        coefs = [c / scale for c in coefs]
    out = [c * word_op(g, wd) for c, wd in zip(coefs, words)]
    total = out[0]
    for t in out[1:]:
        total = total + t
    return total


def centralizer_residual(g: GenSet, s: LinOp, samples: int, seed: int) -> float:
    """max over random polynomials x of |phi(s x) - phi(x s)|."""
    phi = haar(g)
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(samples):
        x = random_polynomial(g, rng)
        worst = max(worst, abs(eval_state(phi, s @ x) - eval_state(phi, x @ s)))
    return worst


def gns_norm_sq(g: GenSet, y: LinOp) -> float:
    """Squared GNS norm phi(y* y)."""
    return float(eval_state(haar(g), y.adjoint() @ y).real)


class NoCoproductRule(ValueError):
    """Raised when an operator has no recipe for evaluation in a coproduct representation."""


class Element:
    """An algebra element given by a recipe that evaluates it in any representation.

    A representation is any object with a ``gens`` GenSet and a
    ``spectral()`` method returning its SpectralElems.  Because the
    coproduct is a unital *-homomorphism, evaluating the recipe in the
    two-leg representation gives the coproduct of the element.
    """

    def __init__(self, label: str, rule: Callable[[object], LinOp]):
        self.label = label
        self._rule = rule

    def __repr__(self):
        return f"Element({self.label})"

    def represent(self, rep) -> LinOp:
        return self._rule(rep)

    def __matmul__(self, other: Element) -> Element:
        return Element(f"{self.label}·{other.label}", lambda r: self.represent(r) @ other.represent(r))

    def __add__(self, other: Element) -> Element:
        return Element(f"({self.label}+{other.label})", lambda r: self.represent(r) + other.represent(r))

    def __sub__(self, other: Element) -> Element:
        return Element(f"({self.label}-{other.label})", lambda r: self.represent(r) - other.represent(r))

    def __mul__(self, c) -> Element:
        if not np.isscalar(c):
            return NotImplemented
        return Element(f"{c}·{self.label}", lambda r: c * self.represent(r))

    __rmul__ = __mul__

    def adjoint(self) -> Element:
        return Element(f"({self.label})*", lambda r: self.represent(r).adjoint())

    @property
    def H(self) -> Element:
        return self.adjoint()


ONE = Element("I", lambda r: identity(r.gens.legs))
A = Element("a", lambda r: r.gens.a)
B = Element("b", lambda r: r.gens.b)
P = Element("p", lambda r: r.spectral().p)
P_PRIME = Element("p'", lambda r: r.spectral().p_prime)
W = Element("w", lambda r: r.spectral().w)
WPW = W.adjoint() @ P @ W
WPW.label = "w*pw"


def unit(m: int, n: int) -> Element:
    return Element(f"e{m}{n}", lambda r: r.spectral().e(m, n))


def word(*letters: str) -> Element:
    """Element for a word in a, a*, b, b*."""
    for x in letters:
        if x not in LETTERS:
            raise ValueError(f"unknown letter {x!r}")
    return Element("".join(letters) or "I", lambda r: word_op(r.gens, letters))


NAMED_ELEMENTS = {"I": ONE, "a": A, "b": B, "p": P, "p'": P_PRIME, "w": W, "w*pw": WPW}


def as_element(x) -> Element:
    if isinstance(x, Element):
        return x
    if isinstance(x, str) and x in NAMED_ELEMENTS:
        return NAMED_ELEMENTS[x]
    raise NoCoproductRule("no coproduct rule for this element")
