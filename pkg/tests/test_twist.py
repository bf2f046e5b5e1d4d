import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from qtwist.cocycle import QSeq, coboundary_factor
from qtwist.linalg import MatrixOp, eval_state, identity, window_norm
from qtwist.suq2 import W, Element, NoCoproductRule, TruncSpec, as_element, build_generators, spectral_elems
from qtwist.twist import (
    TwistedWeight,
    compression_convergence,
    coproduct,
    domination_details,
    gamma_slice,
    gamma_slice_bound,
    invariance_residual,
    one_leg,
    phi_omega_value,
    phi_state,
    projector_string,
    psi_state,
    s_n_closed_form,
    trace_surrogate_residual,
    twisted_coproduct,
    weight_domination_check,
)

SPEC = TruncSpec(0.5, 8, 3)
SEQ = QSeq.geometric(0.5, 0.5, 6)

# exact values of 4 prod_{k=2}^{6} (1 - 4^{-k}) and prod_{k=1}^{6} (1 - 4^{-k})
S1_VALUE = 3.67249906184952124021947383880615234375
S0_VALUE = 0.6885935740967852325411513447761535644531


def window_defect(m, spec=SPEC):
    return window_norm(m, (spec.leg, spec.leg), spec.fock_levels)


class TestTwistedCoproduct:
    factor = coboundary_factor(SPEC)

    def test_unit(self):
        d = twisted_coproduct("I", self.factor).to_sparse()
        one = identity(self.factor.omega.legs).to_sparse()
        assert window_defect(d - one) <= 1e-12

    def test_projector(self):
        d = twisted_coproduct("p", self.factor).to_sparse()
        assert window_defect(d - d.conj().T) <= 1e-9
        assert window_defect(d @ d - d) <= 1e-9

    def test_homomorphism(self):
        a_star_a = Element("a*a", lambda rep: rep.gens.a.adjoint() @ rep.gens.a)
        da = twisted_coproduct("a", self.factor).to_sparse()
        dasa = twisted_coproduct(a_star_a, self.factor).to_sparse()
        assert window_defect(dasa - da.conj().T @ da) <= 1e-9

    def test_registered_raw_operator(self):
        p = self.factor.rep1.spectral().p
        d1 = twisted_coproduct(p, self.factor).to_sparse()
        d2 = twisted_coproduct("p", self.factor).to_sparse()
        assert abs(d1 - d2).max() == 0

    def test_unregistered_operator(self):
        m = MatrixOp((SPEC.leg,), np.eye(SPEC.leg.dim))
        with pytest.raises(NoCoproductRule, match="no coproduct rule for this element"):
            twisted_coproduct(m, self.factor)
        with pytest.raises(NoCoproductRule, match="no coproduct rule for this element"):
            coproduct("unknown", self.factor)

    def test_one_leg_checks_legs(self):
        leg = TruncSpec(0.5, 4, 1).leg
        with pytest.raises(ValueError):
            one_leg(MatrixOp((leg,), np.eye(leg.dim)), SPEC)


class TestDomination:
    @pytest.mark.parametrize("q", [0.3, 0.5])
    def test_random_positive(self, q):
        assert weight_domination_check(TruncSpec(q, 8, 3), 100, 42) >= -1e-10

    def test_identity(self):
        spec = TruncSpec(0.5, 8, 3)
        one = identity((spec.leg,))
        gap = eval_state(psi_state(spec), one) - eval_state(phi_state(spec), one)
        assert gap.real == pytest.approx(0.5**-2 - 1, abs=1e-12)

    @pytest.mark.parametrize("q", [0.3, 0.5])
    def test_saturated_at_p(self, q):
        assert abs(domination_details(TruncSpec(q, 8, 3), 1, 0).saturation) <= 1e-10

    def test_psi_of_p(self):
        assert eval_state(psi_state(SPEC), spectral_elems(SPEC).p).real == pytest.approx(0.75, abs=1e-12)

    @settings(max_examples=20, deadline=None)
    @given(seed=st.integers(0, 2**31 - 1))
    def test_psi_faithful(self, seed):
        spec = TruncSpec(0.5, 4, 1, guard_levels=2)
        rng = np.random.default_rng(seed)
        d = spec.leg.dim
        y = rng.standard_normal((d, d)) + 1j * rng.standard_normal((d, d))
        x = MatrixOp((spec.leg,), y.conj().T @ y)
        assert eval_state(psi_state(spec), x).real > 0
        assert eval_state(psi_state(spec), x).real >= eval_state(phi_state(spec), x).real - 1e-10


class TestInvariance:
    factor = coboundary_factor(SPEC)

    @pytest.mark.parametrize("side", ["left", "right"])
    def test_identity_exact(self, side):
        assert invariance_residual("I", self.factor, side) <= 1e-12

    @pytest.mark.parametrize("x", ["p", "p'", "w*pw"])
    @pytest.mark.parametrize("side", ["left", "right"])
    def test_bound(self, x, side):
        assert invariance_residual(x, self.factor, side) <= 10 * 0.25**8

    def test_shrinks_with_cutoff(self):
        coarse = invariance_residual("p", coboundary_factor(TruncSpec(0.5, 6, 3)))
        fine = invariance_residual("p", self.factor)
        assert coarse / fine >= 5

    def test_bad_side(self):
        with pytest.raises(ValueError):
            invariance_residual("p", self.factor, "up")

    @pytest.mark.parametrize("x", ["p", "p'", "w*pw"])
    def test_twisted_equals_conjugated_untwisted(self, x):
        # slice of Delta_Omega(x) against psi is q^{-2} w slice(Delta(w* x w)) w*, so the twisted
        # residual equals q^{-2} times the untwisted residual of w* x w
        conj = W.adjoint() @ as_element(x) @ W
        twisted = invariance_residual(x, self.factor)
        untwisted = invariance_residual(conj, self.factor, twisted=False)
        assert twisted == pytest.approx(4 * untwisted, rel=1e-6, abs=1e-14)


class TestGammaSlice:
    def test_bound(self):
        res = gamma_slice(SPEC)
        assert res.bound == pytest.approx(0.75, abs=1e-12)
        assert res.lam_max <= 0.75 + 1e-6
        assert res.defect <= 1e-6

    def test_positive(self):
        assert gamma_slice(SPEC).lam_min >= -1e-9

    def test_two_orders(self):
        res = gamma_slice(SPEC)
        assert abs(res.phi_gamma - res.phi_pair) <= 1e-10

    def test_tuple_form(self):
        gamma, defect = gamma_slice_bound(SPEC)
        assert gamma.legs == (SPEC.leg,)
        assert defect == gamma_slice(SPEC).defect


class TestTwistedWeight:
    template = TruncSpec(0.5, 8, 3)

    def test_all_identity(self):
        tw = TwistedWeight(SEQ, 3, 6, self.template)
        assert phi_omega_value(tw, ["I"] * 6) == 4096.0
        assert phi_omega_value(tw, []) == 4096.0

    def test_diverges_with_level(self):
        values = [phi_omega_value(TwistedWeight(SEQ, m, 6, self.template), []) for m in range(7)]
        assert all(b > a for a, b in zip(values, values[1:]))
        for m, v in enumerate(values):
            assert v == pytest.approx(4.0 ** (m * (m + 1) // 2), rel=1e-14)

    def test_s1(self):
        tw = TwistedWeight(SEQ, 6, 6, self.template)
        value = phi_omega_value(tw, projector_string(1, 6))
        assert abs(value - S1_VALUE) <= 1e-10
        assert abs(s_n_closed_form(tw, 1) - S1_VALUE) <= 1e-12

    def test_s0(self):
        tw = TwistedWeight(SEQ, 0, 6, self.template)
        assert abs(phi_omega_value(tw, projector_string(0, 6)) - S0_VALUE) <= 1e-12

    @pytest.mark.parametrize("n", range(7))
    def test_s_n_closed_form(self, n):
        for m in (0, 3, 6):
            tw = TwistedWeight(SEQ, m, 6, self.template)
            closed = s_n_closed_form(tw, n)
            assert abs(phi_omega_value(tw, projector_string(n, 6)) - closed) <= 1e-10 * closed

    def test_monotone_in_level(self):
        for element in (["p", "p", "p"], ["I", "p'"], ["w*pw"]):
            values = [phi_omega_value(TwistedWeight(SEQ, m, 6, self.template), element) for m in range(7)]
            assert all(b >= a - 1e-12 for a, b in zip(values, values[1:]))

    def test_psi_of_identity(self):
        tw = TwistedWeight(SEQ, 2, 6, self.template)
        for k in (1, 2):
            value = eval_state(tw.functional(k), identity((tw.spec(k).leg,)))
            assert value.real == pytest.approx(tw.seq.q(k) ** -2, rel=1e-15)

    def test_descriptor_too_long(self):
        tw = TwistedWeight(SEQ, 1, 3, self.template)
        with pytest.raises(ValueError):
            phi_omega_value(tw, ["I"] * 4)

    def test_level_range(self):
        with pytest.raises(ValueError):
            TwistedWeight(SEQ, 4, 3, self.template)
        with pytest.raises(ValueError):
            TwistedWeight(QSeq.explicit([0.5, 0.25]), 1, 3, self.template)


class TestCompression:
    template = TruncSpec(0.5, 8, 3)

    @pytest.mark.parametrize("n", range(7))
    def test_identity_defect(self, n):
        tw = TwistedWeight(SEQ, 3, 6, self.template)
        value = compression_convergence(tw, ["I"], n)
        closed = 1 - np.prod(1 - 4.0 ** -np.arange(n + 1, 7))
        assert value == pytest.approx(closed, abs=1e-14)
        assert value <= 4.0**-n / 3

    def test_n4_bound(self):
        tw = TwistedWeight(SEQ, 3, 6, self.template)
        assert compression_convergence(tw, ["I"], 4) <= 4.0**-4 / 3

    def test_full_tail_is_zero(self):
        tw = TwistedWeight(SEQ, 3, 6, self.template)
        assert compression_convergence(tw, ["I"], 6) == 0.0

    @pytest.mark.parametrize("x", [["I"], ["p"], ["a", "b"], ["w", "I", "p'"]])
    def test_monotone(self, x):
        tw = TwistedWeight(SEQ, 3, 6, self.template)
        values = [compression_convergence(tw, x, n) for n in range(7)]
        assert all(b <= a + 1e-15 for a, b in zip(values, values[1:]))

    def test_range(self):
        with pytest.raises(ValueError):
            compression_convergence(TwistedWeight(SEQ, 3, 6, self.template), ["I"], 7)


class TestTraceSurrogate:
    @pytest.mark.parametrize("n", [1, 2, 3])
    def test_commutes(self, n):
        tw = TwistedWeight(SEQ, 3, 6, TruncSpec(0.5, 8, 3))
        assert trace_surrogate_residual(tw, n, 100, 42) <= 1e-10

    def test_not_vacuous(self):
        # a non-central string (a on the first leg) does not commute under phi_Omega
        tw = TwistedWeight(SEQ, 0, 2, TruncSpec(0.5, 8, 3))
        g = build_generators(tw.spec(1))
        x = [g.a.adjoint() + g.b, "I"]
        s = [g.a, "I"]
        left = phi_omega_value(tw, [s[0] @ x[0], "I"])
        right = phi_omega_value(tw, [x[0] @ s[0], "I"])
        assert abs(left - right) > 1e-3
