import math

import mpmath as mp
import numpy as np
import pytest

from qtwist import cocycle
from qtwist.cocycle import (
    QSeq,
    coboundary_factor,
    cocycle_residual,
    guichardet_term,
    lemma_3q2,
    omega_pairing,
    omega_pairing_direct,
    pair_state,
    pairing_value,
    product_convergence,
    tail_bound_check,
    three_q2_series,
)
from qtwist.linalg import eval_state, identity, level_mask, probe_residual
from qtwist.suq2 import TruncSpec

THREE_LEG = TruncSpec(0.5, 4, 2)


def pairing_oracle(q, levels):
    """(sum_n rho_n (1 - q^{2n+2}))^2: the Fock-diagonal part of (a (x) a) Delta(a*) under phi (x) phi."""
    mp.mp.dps = 40
    q2 = mp.mpf(q) ** 2
    rho = [(1 - q2) * q2**n for n in range(levels - 1)] + [q2 ** (levels - 1)]
    return float(mp.fsum(r * (1 - q2 ** (n + 1)) for n, r in enumerate(rho)) ** 2)


def series_oracle(q, levels):
    mp.mp.dps = 40
    q2 = mp.mpf(q) ** 2
    rho = [(1 - q2) * q2**n for n in range(levels - 1)] + [q2 ** (levels - 1)]
    diag = [(1 - mp.sqrt(1 - q2)) ** 2, (1 - mp.sqrt(1 - q2**2)) ** 2] + [2 - q2 ** (n + 1) for n in range(2, levels)]
    return float(mp.fsum(r * d for r, d in zip(rho, diag)))


class TestQSeq:
    def test_geometric_values(self):
        seq = QSeq.geometric(0.5, 0.5, 6)
        assert np.array_equal(seq.values(), 2.0 ** -np.arange(1, 7))
        assert seq.q(3) == 0.125
        assert seq.square_summable()

    def test_explicit(self):
        seq = QSeq.explicit([0.5, 0.25, 0.125, 0.0625])
        assert seq.length == 4
        assert seq.square_sum() == pytest.approx(sum(4.0**-k for k in range(1, 5)))
        assert seq.square_summable()

    def test_constant_not_summable(self):
        seq = QSeq.explicit([0.5] * 6)
        assert not seq.square_summable()
        assert seq.tail_estimate(6) == math.inf

    @pytest.mark.parametrize("terms", [[0.5, 0.0], [0.5, 1.0], [-1.2]])
    def test_rejects_bad_terms(self, terms):
        with pytest.raises(ValueError):
            QSeq.explicit(terms)

    def test_rejects_bad_geometric(self):
        with pytest.raises(ValueError):
            QSeq.geometric(1.0, 0.5, 3)
        with pytest.raises(ValueError):
            QSeq.geometric(0.5, 0.5, 0)

    def test_explicit_too_short(self):
        with pytest.raises(ValueError):
            QSeq.explicit([0.5]).values(3)

    def test_geometric_tail_estimate(self):
        seq = QSeq.geometric(0.5, 0.5, 6)
        expected = 11 * sum(4.0**-k for k in range(7, 200))
        assert seq.tail_estimate(6) == pytest.approx(expected, rel=1e-12)


class TestCoboundaryFactor:
    @pytest.mark.parametrize("q", [0.1, 0.3, 0.5, -0.5])
    @pytest.mark.parametrize("n", [4, 6])
    def test_unitary(self, q, n):
        assert coboundary_factor(TruncSpec(q, n, 2)).unitarity_defect <= 1e-9

    def test_pairing_two_paths(self):
        f = coboundary_factor(TruncSpec(0.5, 8, 3))
        assert abs(omega_pairing(f) - omega_pairing_direct(f)) <= 1e-10

    @pytest.mark.parametrize("q", [0.05, 0.1, 0.3])
    def test_close_to_identity_on_haar_vector(self, q):
        # |(Omega - 1) xi (x) xi|^2 = 2 Re(1 - (phi (x) phi)(Omega)) for unitary Omega
        spec = TruncSpec(q, 6, 2)
        f = coboundary_factor(spec)
        d = f.omega - identity(f.omega.legs)
        dist = eval_state(pair_state(spec), d.adjoint() @ d).real
        assert dist <= 11 * q * q + 1e-6
        assert dist == pytest.approx(2 * (1 - omega_pairing(f).real), abs=1e-9)

    def test_not_close_to_identity_in_norm(self):
        # the smallness is in the Haar vector only; on generic vectors Omega stays far from 1
        spec = TruncSpec(0.1, 6, 2)
        f = coboundary_factor(spec)
        support = level_mask(f.omega.legs, spec.fock_levels)
        assert probe_residual(f.omega, identity(f.omega.legs), 20, 42, support) > 0.5

    def test_not_identity(self):
        assert guichardet_term(TruncSpec(0.5, 6, 2)) > 0


class TestCocycleEquation:
    @pytest.mark.parametrize("q", [0.5, -0.5])
    def test_coboundary_satisfies_equation(self, q):
        assert cocycle_residual(TruncSpec(q, 4, 2), 20, 42) <= 1e-8

    @pytest.mark.parametrize("variant", ["ww", "corrupt"])
    def test_negative_controls(self, variant):
        assert cocycle_residual(THREE_LEG, 20, 42, variant) > 0.1

    def test_unknown_variant(self):
        with pytest.raises(ValueError):
            cocycle_residual(THREE_LEG, 1, 0, "other")

    def test_deterministic(self):
        assert cocycle_residual(THREE_LEG, 5, 7) == cocycle_residual(THREE_LEG, 5, 7)


class TestPairing:
    def test_identity_value(self):
        spec = TruncSpec(0.5, 8, 3)
        assert abs(pairing_value(spec) - 1 / 1.25**2) <= 1e-6

    @pytest.mark.parametrize("q", [0.3, 0.5, -0.5, 0.7])
    @pytest.mark.parametrize("n", [4, 6, 8])
    def test_against_oracle(self, q, n):
        assert pairing_value(TruncSpec(q, n, 2)) == pytest.approx(pairing_oracle(q, n), abs=1e-13)

    def test_monotone_refinement(self):
        dev = [abs(pairing_value(TruncSpec(0.5, n, 2)) - 0.64) for n in (4, 5, 6)]
        assert dev[1] <= dev[0] + 1e-6 and dev[2] <= dev[1] + 1e-6

    def test_shrinks_with_cutoff(self):
        d6 = abs(pairing_value(TruncSpec(0.5, 6, 3)) - 0.64)
        d8 = abs(pairing_value(TruncSpec(0.5, 8, 3)) - 0.64)
        assert d6 / d8 >= 5


class TestGuichardet:
    def test_small_q(self):
        assert guichardet_term(TruncSpec(0.1, 8, 3)) <= 0.11

    def test_half(self):
        assert 0 < guichardet_term(TruncSpec(0.5, 8, 3)) <= 11 * 0.25

    def test_tail_table(self):
        table = tail_bound_check(QSeq.geometric(0.5, 0.5, 6), TruncSpec(0.5, 6, 2))
        assert len(table.rows) == 6
        for row in table.rows:
            assert row.term <= 11 * 4.0**-row.k + 1e-6
        sums = [r.partial_sum for r in table.rows]
        assert all(b >= a for a, b in zip(sums, sums[1:]))
        assert sums[-1] <= 11 / 3
        assert table.certified

    def test_constant_sequence_refused(self):
        table = tail_bound_check(QSeq.explicit([0.5] * 3), TruncSpec(0.5, 6, 2))
        assert len(table.rows) == 3
        assert table.square_sum == pytest.approx(0.75)
        assert not table.certified


class TestLemma3q2:
    @pytest.mark.parametrize("q", [0.1, 0.3, 0.5, 0.7, 0.9])
    def test_bound_and_oracle(self, q):
        lem = lemma_3q2(TruncSpec(q, 8, 3))
        assert lem.value <= lem.bound
        assert lem.oracle_gap <= 1e-10
        assert lem.value == pytest.approx(math.sqrt(series_oracle(q, 8)), abs=1e-12)

    def test_half_value(self):
        assert lemma_3q2(TruncSpec(0.5, 8, 3)).value == pytest.approx(0.371308100410, abs=1e-11)

    def test_series_function(self):
        for q in (0.2, 0.6):
            assert three_q2_series(q, 7) == pytest.approx(series_oracle(q, 7), abs=1e-15)

    def test_limit(self):
        mp.mp.dps = 40
        q = mp.mpf("0.5")
        q2 = q * q
        limit = (1 - q2) * ((1 - mp.sqrt(1 - q2)) ** 2 + q2 * (1 - mp.sqrt(1 - q2**2)) ** 2
                            + mp.nsum(lambda n: q2**n * (2 - q2 ** (n + 1)), [2, mp.inf]))
        assert three_q2_series(0.5, 30) == pytest.approx(float(limit), abs=1e-15)


class TestProducts:
    def test_partial_products(self):
        seq = QSeq.geometric(0.5, 0.5, 10)
        tab = product_convergence(seq, 0, TruncSpec(0.5, 6, 2))
        limit = 0.68853753712033971545651435729
        assert abs(tab.partial_products[-1] - limit) <= 1e-6
        assert round(tab.partial_products[-1], 4) == round(limit, 4)

    @pytest.mark.parametrize("n", range(6))
    def test_tail_defect(self, n):
        seq = QSeq.geometric(0.5, 0.5, 6)
        tab = product_convergence(seq, n, TruncSpec(0.5, 6, 2))
        assert tab.tail_defects[-1] <= 4.0**-n / 3
        assert abs(tab.gns_distance_sq - tab.tail_defects[-1]) <= 1e-12

    def test_index_range(self):
        with pytest.raises(ValueError):
            product_convergence(QSeq.geometric(0.5, 0.5, 3), 3)


def test_workers_env(monkeypatch):
    monkeypatch.setenv("QTWIST_THREADS", "3")
    assert cocycle.workers() == 3
    assert cocycle.ordered_map(lambda x: x * x, [3, 1, 2]) == [9, 1, 4]
