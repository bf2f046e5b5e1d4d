"""Twisted coproduct Delta_Omega and the finite-level twisted weight phi_Omega."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .cocycle import CocycleFactor, QSeq, coboundary_factor
from .corep import CoprodRep, corep_generators
from .linalg import (
    LinOp,
    MatrixOp,
    StateWeights,
    eval_state,
    level_mask,
    product_state,
    single_state,
    slice_left,
    slice_right,
    tensor,
    window_norm,
)
from .suq2 import (
    Element,
    NoCoproductRule,
    TruncSpec,
    WPW,
    as_element,
    build_generators,
    haar,
    haar_weights,
    random_polynomial,
    spectral_elems,
)

# Residuals below this are treated as rounding noise when comparing runs.
NOISE_FLOOR = 1e-12


def phi_state(spec: TruncSpec) -> StateWeights:
    return haar(build_generators(spec))


def psi_state(spec: TruncSpec) -> StateWeights:
    """psi = q^{-2} phi(w* . w)."""
    return single_state(
        spec.leg, haar_weights(spec.q, spec.fock_levels), spectral_elems(spec).w, spec.q**-2
    )


def _registered(x, rep1: CoprodRep) -> Element:
    """Element recipe for ``x``; raw one-leg operators are matched against the spectral elements."""
    if isinstance(x, (Element, str)):
        return as_element(x)
    if isinstance(x, LinOp):
        elems = rep1.spectral()
        table = {id(rep1.gens.a): "a", id(rep1.gens.b): "b", id(elems.p): "p", id(elems.p_prime): "p'", id(elems.w): "w"}
        if id(x) in table:
            return as_element(table[id(x)])
    raise NoCoproductRule("no coproduct rule for this element")


def coproduct(x, factor: CocycleFactor) -> LinOp:
    """Delta(x) in the two-leg representation."""
    return _registered(x, factor.rep1).represent(factor.rep2)


def twisted_coproduct(x, factor: CocycleFactor) -> LinOp:
    """Delta_Omega(x) = Omega Delta(x) Omega*."""
    return factor.omega @ coproduct(x, factor) @ factor.omega.adjoint()


def one_leg(x, spec: TruncSpec) -> LinOp:
    """One-leg operator for a named element, Element recipe or one-leg LinOp."""
    if isinstance(x, LinOp):
        if x.legs != (spec.leg,):
            raise ValueError("operator does not act on this leg")
        return x
    return as_element(x).represent(corep_generators([spec]))


@dataclass(frozen=True)
class DominationResult:
    min_gap: float
    saturation: float


def weight_domination_check(spec: TruncSpec, samples: int = 100, seed: int = 42) -> float:
    """min over random positive x = y*y of Re[q^{-2} phi(w* x w) - phi(x)]."""
    return domination_details(spec, samples, seed).min_gap


def domination_details(spec: TruncSpec, samples: int = 100, seed: int = 42) -> DominationResult:
    """Domination minimum over random positive x, and the gap at x = p (which should vanish)."""
    rng = np.random.default_rng(seed)
    phi, psi = phi_state(spec), psi_state(spec)
    d = spec.leg.dim
    worst = np.inf
    for _ in range(samples):
        y = (rng.standard_normal((d, d)) + 1j * rng.standard_normal((d, d))) / np.sqrt(2 * d)
        x = MatrixOp((spec.leg,), y.conj().T @ y)
        worst = min(worst, (eval_state(psi, x) - eval_state(phi, x)).real)
    p = spectral_elems(spec).p
    sat = (eval_state(psi, p) - eval_state(phi, p)).real
    return DominationResult(float(worst), float(sat))


def invariance_residual(x, factor: CocycleFactor, side: str = "left", twisted: bool = True) -> float:
    """Norm on the leg window of the slice of Delta_Omega(x) against psi minus psi(x) I.

    ``side="left"`` slices the right leg (left invariance), ``side="right"``
    slices the left leg.  With ``twisted=False`` the untwisted coproduct and
    the Haar state give the baseline residual.
    """
    spec = factor.spec
    if twisted:
        big, omega = twisted_coproduct(x, factor), psi_state(spec)
    else:
        big, omega = coproduct(x, factor), phi_state(spec)
    value = eval_state(omega, _registered(x, factor.rep1).represent(factor.rep1))
    if side == "left":
        sl = slice_right(big, omega)
    elif side == "right":
        sl = slice_left(big, omega)
    else:
        raise ValueError(f"side must be 'left' or 'right', got {side!r}")
    diff = sl.to_dense() - value * np.eye(sl.dim)
    return window_norm(diff, sl.legs, spec.fock_levels)


@dataclass(frozen=True, eq=False)
class GammaSlice:
    gamma: LinOp
    defect: float
    lam_max: float
    lam_min: float
    bound: float
    phi_gamma: complex
    phi_pair: complex


def gamma_slice(spec: TruncSpec) -> GammaSlice:
    """gamma = (id (x) phi)((w (x) w) Delta(w* p w) (w* (x) w*)) and its eigenvalue bound q^{-2} phi(p')."""
    factor = coboundary_factor(spec)
    w = factor.rep1.spectral().w
    ww = tensor(w, w)
    y = ww @ WPW.represent(factor.rep2) @ ww.adjoint()
    phi = phi_state(spec)
    gamma = slice_right(y, phi)
    idx = np.flatnonzero(level_mask(gamma.legs, spec.fock_levels))
    g = gamma.to_dense()[np.ix_(idx, idx)]
    ev = np.linalg.eigvalsh((g + g.conj().T) / 2)
    bound = spec.q**-2 * eval_state(phi, spectral_elems(spec).p_prime).real
    return GammaSlice(
        gamma,
        float(max(0.0, ev[-1] - bound)),
        float(ev[-1]),
        float(ev[0]),
        float(bound),
        eval_state(phi, gamma),
        eval_state(product_state(phi, phi), y),
    )


def gamma_slice_bound(spec: TruncSpec) -> tuple[LinOp, float]:
    """(gamma, max(0, lambda_max(gamma) - q^{-2} phi(p')))."""
    res = gamma_slice(spec)
    return res.gamma, res.defect


@dataclass(frozen=True)
class TwistedWeight:
    """Finite-level phi_Omega: psi_k on legs k <= level, phi_k on level < k <= tail."""

    seq: QSeq
    level: int
    tail: int
    template: TruncSpec = TruncSpec(0.5)

    def __post_init__(self):
        if not 0 <= self.level <= self.tail:
            raise ValueError("need 0 <= level <= tail")
        if self.tail > self.seq.length and self.seq.kind == "explicit":
            raise ValueError("tail exceeds the explicit q_seq length")

    def spec(self, k: int) -> TruncSpec:
        t = self.template
        return TruncSpec(self.seq.q(k), t.fock_levels, t.winding_radius, t.cluster_tol, t.guard_levels)

    def functional(self, k: int) -> StateWeights:
        spec = self.spec(k)
        return psi_state(spec) if k <= self.level else phi_state(spec)


def _pad(tw: TwistedWeight, element: Sequence) -> list:
    element = list(element)
    if len(element) > tw.tail:
        raise ValueError(f"descriptor has {len(element)} legs, more than the tail length {tw.tail}")
    return element + ["I"] * (tw.tail - len(element))


def phi_omega_functional(tw: TwistedWeight, element: Sequence) -> complex:
    """prod_{k<=m} psi_k(x_k) * prod_{m<k<=F} phi_k(x_k) for a product descriptor."""
    value = 1.0 + 0.0j
    for k, x in enumerate(_pad(tw, element), start=1):
        value *= eval_state(tw.functional(k), one_leg(x, tw.spec(k)))
    return value


def phi_omega_value(tw: TwistedWeight, element: Sequence) -> float:
    """Real value of the finite-level twisted weight on a product element."""
    return float(phi_omega_functional(tw, element).real)


def projector_string(n: int, tail: int) -> list[str]:
    """s_n = 1 on legs k <= n, p on legs n < k <= tail."""
    return ["I"] * n + ["p"] * (tail - n)


def s_n_closed_form(tw: TwistedWeight, n: int) -> float:
    """prod_{k<=min(n,m)} q_k^{-2} * prod_{n<k<=F} (1-q_k^2)."""
    qs = tw.seq.values(tw.tail)
    return float(np.prod(qs[: min(n, tw.level)] ** -2.0) * np.prod(1.0 - qs[n:] ** 2))


def compression_convergence(tw: TwistedWeight, x: Sequence, n: int) -> float:
    """|E_n(x) - x|^2 in the GNS norm of the product Haar state, with E_n(x) = s_n x s_n.

    Per leg Y_k = x_k for k <= n and Y_k = p x_k p for k > n, and
    |Y - X|^2 = prod phi(Y*Y) - 2 Re prod phi(Y*X) + prod phi(X*X).
    """
    if not 0 <= n <= tw.tail:
        raise ValueError(f"n must satisfy 0 <= n <= {tw.tail}")
    yy = yx = xx = 1.0 + 0.0j
    for k, xk in enumerate(_pad(tw, x), start=1):
        spec = tw.spec(k)
        phi = phi_state(spec)
        xo = one_leg(xk, spec)
        if k > n:
            p = spectral_elems(spec).p
            yo = p @ xo @ p
        else:
            yo = xo
        yy *= eval_state(phi, yo.adjoint() @ yo)
        yx *= eval_state(phi, yo.adjoint() @ xo)
        xx *= eval_state(phi, xo.adjoint() @ xo)
    return float((yy - 2 * yx.real + xx).real)


def trace_surrogate_residual(tw: TwistedWeight, n: int, samples: int = 100, seed: int = 42) -> float:
    """max over random product elements x of |phi_Omega(s_n x) - phi_Omega(x s_n)|.

    Each leg of x is a random polynomial in a, a*, b, b* scaled into the unit
    ball (coefficients divided by the sum of their moduli).
    """
    rng = np.random.default_rng(seed)
    s = projector_string(n, tw.tail)
    worst = 0.0
    for _ in range(samples):
        left, right = [], []
        for k in range(1, tw.tail + 1):
            spec = tw.spec(k)
            xk = random_polynomial(build_generators(spec), rng, normalize=True)
            sk = one_leg(s[k - 1], spec)
            left.append(sk @ xk)
            right.append(xk @ sk)
        worst = max(worst, abs(phi_omega_functional(tw, left) - phi_omega_functional(tw, right)))
    return float(worst)

