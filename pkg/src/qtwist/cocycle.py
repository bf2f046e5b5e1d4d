"""Coboundary cocycle factors and the convergence diagnostics for their infinite product."""

from __future__ import annotations

import functools
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .corep import CoprodRep, corep_generators
from .linalg import (
    LinOp,
    column_norm,
    eval_state,
    identity,
    level_mask,
    probe_residual,
    product_state,
    tensor,
)
from .suq2 import (
    TruncSpec,
    build_generators,
    gns_norm_sq,
    haar,
    haar_weights,
    spectral_elems,
)

# Per-term bound 2q^2 + 3 * 3q^2 obtained by chaining the pairing bound
# 1 - ((1-q^2)/(1+q^2))^2 <= 2q^2 with the 3q^2 lemma.
TAIL_CONSTANT = 11.0


def workers() -> int:
    """Worker count, capped by QTWIST_THREADS."""
    try:
        cap = int(os.environ.get("QTWIST_THREADS", "1"))
    except ValueError:
        cap = 1
    return max(1, cap)


def ordered_map(fn: Callable, items: Sequence) -> list:
    """Map with up to ``workers()`` threads; results come back in input order."""
    n = workers()
    if n == 1 or len(items) < 2:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=n) as pool:
        return list(pool.map(fn, items))


@dataclass(frozen=True)
class QSeq:
    """Deformation parameters q_1, ..., q_m.

    ``kind`` is "geometric" (q_k = base * ratio^{k-1}) or "explicit" (``terms``).
    """

    kind: str
    length: int
    base: float = 0.5
    ratio: float = 0.5
    terms: tuple[float, ...] = ()

    def __post_init__(self):
        if self.kind == "geometric":
            if not (0 < abs(self.base) < 1 and 0 < abs(self.ratio) <= 1):
                raise ValueError("geometric q_seq needs 0 < |base| < 1 and 0 < |ratio| <= 1")
            if self.length < 1:
                raise ValueError("q_seq length must be >= 1")
        elif self.kind == "explicit":
            terms = tuple(float(t) for t in self.terms)
            if not terms:
                raise ValueError("explicit q_seq needs at least one term")
            object.__setattr__(self, "terms", terms)
            object.__setattr__(self, "length", len(terms))
        else:
            raise ValueError(f"unknown q_seq kind {self.kind!r}")
        for q in self.values():
            if not 0 < abs(q) < 1:
                raise ValueError(f"every q_k must satisfy 0 < |q_k| < 1, got {q}")

    @classmethod
    def geometric(cls, base: float, ratio: float, length: int) -> QSeq:
        return cls("geometric", int(length), float(base), float(ratio))

    @classmethod
    def explicit(cls, terms: Sequence[float]) -> QSeq:
        return cls("explicit", len(terms), terms=tuple(terms))

    def values(self, length: int | None = None) -> np.ndarray:
        n = self.length if length is None else length
        if self.kind == "geometric":
            return self.base * self.ratio ** np.arange(n, dtype=float)
        if n > len(self.terms):
            raise ValueError(f"explicit q_seq has only {len(self.terms)} terms")
        return np.array(self.terms[:n])

    def q(self, k: int) -> float:
        """q_k with 1-based k."""
        return float(self.values(k)[k - 1])

    def square_sum(self) -> float:
        return float(np.sum(self.values() ** 2))

    def square_summable(self) -> bool:
        """Certificate of square summability of the intended infinite sequence.

        Geometric sequences are certified when |ratio| < 1.  For explicit lists
        the ratio test is applied to the second half: the certificate is issued
        only if the terms shrink by a fixed factor < 1.
        """
        if self.kind == "geometric":
            return abs(self.ratio) < 1
        t = np.abs(np.asarray(self.terms))
        tail = t[len(t) // 2 :]
        if len(tail) < 2:
            return False
        return bool(np.max(tail[1:] / tail[:-1]) < 1.0)

    def tail_estimate(self, m: int) -> float:
        """Estimate of sum_{k>m} 11 q_k^2 (geometric extrapolation)."""
        if self.kind == "geometric":
            r2 = self.ratio**2
            if r2 >= 1:
                return math.inf
            return TAIL_CONSTANT * self.base**2 * r2**m / (1 - r2)
        t = np.abs(np.asarray(self.terms))
        if not self.square_summable():
            return math.inf
        r2 = float(np.max(t[len(t) // 2 :][1:] / t[len(t) // 2 :][:-1])) ** 2
        last = t[min(m, len(t)) - 1] ** 2
        return TAIL_CONSTANT * last * r2 / (1 - r2)


@dataclass(frozen=True, eq=False)
class CocycleFactor:
    """Omega_k = (w (x) w) Delta(w)* for one leg, with its unitarity defect on the state window."""

    spec: TruncSpec
    omega: LinOp
    rep1: CoprodRep
    rep2: CoprodRep
    unitarity_defect: float

    @property
    def window(self) -> np.ndarray:
        return level_mask(self.omega.legs, self.spec.fock_levels)


def _unitarity_defect(u: LinOp, spec: TruncSpec) -> float:
    m = u.to_sparse()
    one = identity(u.legs).to_sparse()
    cut = spec.fock_levels
    return max(
        column_norm(m.conj().T @ m - one, u.legs, cut),
        column_norm(m @ m.conj().T - one, u.legs, cut),
    )


@functools.lru_cache(maxsize=None)
def coboundary_factor(spec: TruncSpec) -> CocycleFactor:
    """Omega = (w (x) w) Delta(w)*; Delta(w) from spectral calculus of Delta(a)*Delta(a)."""
    rep1 = corep_generators([spec])
    rep2 = corep_generators([spec, spec])
    w = rep1.spectral().w
    omega = tensor(w, w) @ rep2.spectral().w.adjoint()
    return CocycleFactor(spec, omega, rep1, rep2, _unitarity_defect(omega, spec))


def _cocycle_sides(spec: TruncSpec, variant: str) -> tuple[LinOp, LinOp]:
    rep1 = corep_generators([spec])
    rep2 = corep_generators([spec, spec])
    w = rep1.spectral().w
    dw = rep2.spectral().w
    one = identity(rep1.legs)
    ww = tensor(w, w)
    if variant == "ww":
        return tensor(ww, one) @ tensor(dw, w), tensor(one, ww) @ tensor(w, dw)
    d3l = corep_generators([spec] * 3, "left").spectral().w
    d3r = corep_generators([spec] * 3, "right").spectral().w
    if variant == "coboundary":
        om = ww @ dw.adjoint()
        lhs = tensor(om, one) @ tensor(dw, w) @ d3l.adjoint()
        rhs = tensor(one, om) @ tensor(w, dw) @ d3r.adjoint()
    elif variant == "corrupt":
        om = ww @ dw
        lhs = tensor(om, one) @ tensor(dw, w) @ d3l
        rhs = tensor(one, om) @ tensor(w, dw) @ d3r
    else:
        raise ValueError(f"unknown cocycle variant {variant!r}")
    return lhs, rhs


COCYCLE_VARIANTS = ("coboundary", "ww", "corrupt")


def cocycle_residual(spec: TruncSpec, probes: int = 20, seed: int = 42, variant: str = "coboundary") -> float:
    """Probe residual of (Omega (x) 1)(Delta (x) id)(Omega) = (1 (x) Omega)(id (x) Delta)(Omega).

    Probes are supported on the three-leg state window.  The two sides use
    three-leg coproducts built with opposite recursion orders.  ``variant``
    "ww" replaces Omega by w (x) w, "corrupt" replaces Delta(w*) by Delta(w);
    both are negative controls that should fail.
    """
    lhs, rhs = _cocycle_sides(spec, variant)
    return probe_residual(lhs, rhs, probes, seed, support=level_mask(lhs.legs, spec.fock_levels))


def pair_state(spec: TruncSpec):
    phi = haar(build_generators(spec))
    return product_state(phi, phi)


def pairing_value(spec: TruncSpec) -> float:
    """(phi (x) phi)((a (x) a) Delta(a*)); tends to 1/(1+q^2)^2."""
    rep1 = corep_generators([spec])
    rep2 = corep_generators([spec, spec])
    a = rep1.gens.a
    x = tensor(a, a) @ rep2.gens.a.adjoint()
    return float(eval_state(pair_state(spec), x).real)


def omega_pairing(factor: CocycleFactor) -> complex:
    """<Omega (xi (x) xi), xi (x) xi> = (phi (x) phi)(Omega)."""
    return eval_state(pair_state(factor.spec), factor.omega)


def omega_pairing_direct(factor: CocycleFactor) -> complex:
    """Same pairing from the stored matrix of Omega, summing weighted diagonal entries."""
    from .suq2 import haar_vector

    rho = haar_vector([factor.spec, factor.spec])
    return complex(np.dot(rho, factor.omega.to_sparse().diagonal()))


def guichardet_term(spec: TruncSpec) -> float:
    """|1 - (phi (x) phi)(Omega_k)|."""
    return abs(1.0 - omega_pairing(coboundary_factor(spec)))


@dataclass(frozen=True)
class TailRow:
    k: int
    q: float
    term: float
    bound: float
    passed: bool
    partial_sum: float


@dataclass(frozen=True)
class TailTable:
    rows: tuple[TailRow, ...]
    bound_sum: float
    tail_estimate: float
    square_sum: float
    square_summable: bool

    @property
    def certified(self) -> bool:
        """Convergence certificate: every term within bound and the sequence square summable."""
        return self.square_summable and all(r.passed for r in self.rows)


def tail_bound_check(seq: QSeq, template: TruncSpec | None = None, slack: float = 1e-4) -> TailTable:
    """Per-factor Guichardet terms against the derived bound 11 q_k^2."""
    template = template or TruncSpec(0.5)
    qs = seq.values()
    specs = [
        TruncSpec(float(q), template.fock_levels, template.winding_radius, template.cluster_tol, template.guard_levels)
        for q in qs
    ]
    terms = ordered_map(guichardet_term, specs)
    rows, total = [], 0.0
    for k, (q, t) in enumerate(zip(qs, terms), start=1):
        total += t
        bound = TAIL_CONSTANT * q * q
        rows.append(TailRow(k, float(q), float(t), bound, bool(t <= bound + slack), total))
    return TailTable(
        tuple(rows),
        float(TAIL_CONSTANT * np.sum(qs**2)),
        seq.tail_estimate(len(qs)),
        seq.square_sum(),
        seq.square_summable(),
    )


def three_q2_series(q: float, fock_levels: int) -> float:
    """phi((w-a)(w*-a*)) from the diagonal of (w-a)(w*-a*) in the Fock basis.

    diag_0 = (1-sqrt(1-q^2))^2, diag_1 = (1-sqrt(1-q^4))^2 and
    diag_n = 2 - q^{2n+2} for n >= 2, summed against the Haar weights.
    """
    rho = haar_weights(q, fock_levels)
    q2 = q * q
    diag = 2.0 - q2 ** (np.arange(fock_levels) + 1.0)
    diag[0] = (1.0 - math.sqrt(1.0 - q2)) ** 2
    diag[1] = (1.0 - math.sqrt(1.0 - q2 * q2)) ** 2
    return float(np.dot(rho, diag))


@dataclass(frozen=True)
class Lemma3q2:
    value: float
    bound: float
    oracle: float

    @property
    def oracle_gap(self) -> float:
        return abs(self.value - math.sqrt(self.oracle))


def lemma_3q2(spec: TruncSpec) -> Lemma3q2:
    """sqrt(phi((w-a)(w*-a*))) = |(w*-a*) xi| against 3q^2, with the series oracle."""
    g = build_generators(spec)
    y = (spec_w(spec) - g.a).adjoint()
    value = math.sqrt(max(gns_norm_sq(g, y), 0.0))
    return Lemma3q2(value, 3.0 * spec.q**2, three_q2_series(spec.q, spec.fock_levels))


def spec_w(spec: TruncSpec) -> LinOp:
    return spectral_elems(spec).w


@dataclass(frozen=True)
class ProductTable:
    partial_products: tuple[float, ...]
    tail_defects: tuple[float, ...]
    gns_distance_sq: float
    tail_bound: float


def product_convergence(seq: QSeq, n: int, template: TruncSpec | None = None) -> ProductTable:
    """Partial products prod_{k<=m}(1-q_k^2) and tail defects 1 - prod_{n<k<=m}(1-q_k^2).

    The squared GNS distance between the projector string
    1 (x) ... (x) 1 (x) p_{n+1} (x) ... (x) p_m and the identity is computed
    leg by leg from phi_k(p_k), independently of the closed form.
    """
    qs = seq.values()
    if not 0 <= n < len(qs):
        raise ValueError(f"n must satisfy 0 <= n < {len(qs)}")
    factors = 1.0 - qs**2
    partial = tuple(float(x) for x in np.cumprod(factors))
    defects = tuple(float(1.0 - np.prod(factors[n:m])) for m in range(n + 1, len(qs) + 1))
    template = template or TruncSpec(0.5)
    # |s - 1|^2 = phi(s*s) - 2 Re phi(s) + 1 = 1 - prod phi_k(p_k) for a projector string s
    prod_phi = 1.0
    for q in qs[n:]:
        spec = TruncSpec(float(q), template.fock_levels, template.winding_radius, template.cluster_tol, template.guard_levels)
        prod_phi *= float(eval_state(haar(build_generators(spec)), spectral_elems(spec).p).real)
    tail_bound = float(np.sum(qs[n:] ** 2))
    return ProductTable(partial, defects, 1.0 - prod_phi, tail_bound)

