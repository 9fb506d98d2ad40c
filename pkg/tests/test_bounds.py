import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lossqpv.bounds import (
    INCONCLUSIVE,
    SoundnessInput,
    exact_attack_guess,
    helstrom_guess,
    locc_mixed_strategy,
    locc_xbasis_strategy,
    locc_ybasis_strategy,
    product_measurement_search,
    soundness_decoy,
    soundness_qubit,
    verify_ppt_certificates,
)
from lossqpv.geometry import Geometry
from lossqpv.qcore import bb84_state, parity_mixtures

ETA_GRID = [0.01] + [round(0.05 * i, 2) for i in range(1, 21)]


class TestHelstrom:
    def test_parity_mixtures(self):
        assert helstrom_guess(*parity_mixtures()) == pytest.approx(0.75, abs=1e-12)

    def test_identical_states(self):
        rho, _ = parity_mixtures()
        assert helstrom_guess(rho, rho) == pytest.approx(0.5, abs=1e-12)

    def test_orthogonal_states(self):
        a = np.kron(bb84_state(0, 0), bb84_state(0, 0))
        b = np.kron(bb84_state(0, 1), bb84_state(0, 0))
        assert helstrom_guess(a, b) == pytest.approx(1.0, abs=1e-12)

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError):
            helstrom_guess(bb84_state(0, 0), parity_mixtures()[0])


class TestCertificates:
    @pytest.mark.parametrize("eta", ETA_GRID)
    def test_values_and_feasibility(self, eta):
        rep = verify_ppt_certificates(eta)
        assert rep.primal_value == pytest.approx(0.75 * eta, abs=1e-10)
        assert rep.dual_value == pytest.approx(0.75 * eta, abs=1e-10)
        assert abs(rep.duality_gap) <= 1e-12
        assert rep.primal_feasible and rep.dual_feasible and rep.violations == []

    def test_full_efficiency(self):
        rep = verify_ppt_certificates(1.0)
        assert rep.primal_value == pytest.approx(0.75, abs=1e-12)
        assert rep.dual_value == pytest.approx(0.75, abs=1e-12)

    def test_half_efficiency_inconclusive_rate(self):
        rep = verify_ppt_certificates(0.5)
        assert rep.residuals["primal.inconclusive_rate[0]"] <= 1e-12
        assert rep.residuals["primal.inconclusive_rate[1]"] <= 1e-12

    @pytest.mark.parametrize("eta", [0.0, -0.1, 1.01])
    def test_eta_out_of_range(self, eta):
        with pytest.raises(ValueError):
            verify_ppt_certificates(eta)

    def test_report_serialises(self):
        d = verify_ppt_certificates(0.3).as_dict()
        assert d["violations"] == [] and d["eta"] == 0.3


class TestXBasisAttack:
    def test_x_rounds_report_parity(self, rng):
        s = locc_xbasis_strategy(1.0)
        for x in (0, 1):
            for y in (0, 1):
                z1, z2 = s.respond(np.broadcast_to(bb84_state(0, x), (500, 2, 2)),
                                   np.broadcast_to(bb84_state(0, y), (500, 2, 2)), rng)
                assert np.all(z1 == x ^ y) and np.all(z1 == z2)

    def test_y_rounds_are_coin_flips(self):
        s = locc_xbasis_strategy(1.0)
        for x in (0, 1):
            for y in (0, 1):
                dist = s.outcome_distribution(bb84_state(1, x), bb84_state(1, y))
                np.testing.assert_allclose(dist, [0.5, 0.5, 0.0], atol=1e-12)

    @pytest.mark.parametrize("eta", [0.0, 0.05, 0.3, 0.5, 1.0])
    def test_exact_guess_is_three_quarters(self, eta):
        guess, detection = exact_attack_guess(locc_xbasis_strategy(eta))
        assert detection == pytest.approx(eta, abs=1e-12)
        if eta > 0:
            assert guess == pytest.approx(0.75, abs=1e-12)

    @pytest.mark.parametrize("eta", [0.05, 0.5, 1.0])
    def test_sampled_guess(self, eta):
        rng = np.random.default_rng(7)
        n = 200_000
        b, x, y = rng.integers(0, 2, size=(3, n))
        states = np.array([[bb84_state(bb, k) for k in (0, 1)] for bb in (0, 1)])
        z, _ = locc_xbasis_strategy(eta).respond(states[b, x], states[b, y], rng)
        c = z != INCONCLUSIVE
        p = np.mean(z[c] == (x ^ y)[c])
        assert abs(p - 0.75) <= 5 * math.sqrt(0.75 * 0.25 / c.sum())
        assert abs(c.mean() - eta) <= 5 * math.sqrt(eta * (1 - eta) / n) + 1e-12

    def test_scalar_response(self, rng):
        z = locc_xbasis_strategy(0.0).respond(bb84_state(0, 0), bb84_state(0, 1), rng)
        assert z == (INCONCLUSIVE, INCONCLUSIVE)

    def test_layout_is_local(self):
        agents = locc_xbasis_strategy(1.0).layout(Geometry())
        assert [a.position for a in agents] == [-0.5, 0.5]
        assert all(len(a.measures) == 1 for a in agents)

    def test_eta_range(self):
        with pytest.raises(ValueError):
            locc_xbasis_strategy(1.5)


@pytest.mark.parametrize("factory", [locc_ybasis_strategy, locc_mixed_strategy])
def test_other_attacks_also_reach_three_quarters(factory):
    for eta in (0.1, 1.0):
        guess, detection = exact_attack_guess(factory(eta))
        assert guess == pytest.approx(0.75, abs=1e-12)
        assert detection == pytest.approx(eta)


def test_bound_ordering_is_tight_at_full_efficiency():
    helstrom = helstrom_guess(*parity_mixtures())
    ppt = verify_ppt_certificates(1.0).dual_value
    attack, _ = exact_attack_guess(locc_xbasis_strategy(1.0))
    assert helstrom == pytest.approx(ppt, abs=1e-12)
    assert ppt == pytest.approx(attack, abs=1e-12)


def test_product_measurement_search_never_beats_bound():
    best, top = product_measurement_search()
    assert best <= 0.75 + 1e-12
    assert best == pytest.approx(0.75, abs=1e-12)  # the grid contains the X and Y axes
    assert len(top) == 5


class TestSoundness:
    def test_qubit_value(self):
        eps = soundness_qubit(SoundnessInput(1000, 0.1))
        assert eps == pytest.approx(math.exp(-45), rel=1e-12)
        assert eps == pytest.approx(2.8625185805493937e-20, rel=1e-12)

    def test_qubit_vacuous_limit(self):
        assert soundness_qubit(SoundnessInput(1000, 0.25 - 1e-9)) == pytest.approx(1.0, abs=1e-12)

    def test_qubit_doubling_squares(self):
        a = soundness_qubit(SoundnessInput(300, 0.1))
        b = soundness_qubit(SoundnessInput(600, 0.1))
        assert b == pytest.approx(a * a, rel=1e-12)

    def test_input_validation(self):
        with pytest.raises(ValueError):
            SoundnessInput(10, 0.25)
        with pytest.raises(ValueError):
            SoundnessInput(0, 0.1)
        with pytest.raises(ValueError):
            SoundnessInput(10, 0.1, nu=0)

    def test_decoy_at_nu_ten(self):
        eps, eps1, eps2 = soundness_decoy(SoundnessInput(1000, 0.1, 10.0))
        assert eps1 == pytest.approx(1.4428075267854465e-08, rel=1e-12)
        assert eps2 == pytest.approx(8.244614464264105e-09, rel=1e-12)
        assert 2 * eps1 + eps2 == pytest.approx(3.71007650e-08, rel=1e-8)
        # first-order series 7e^{-20}, 4e^{-20}
        assert eps1 == pytest.approx(7 * math.exp(-20), rel=1e-7)
        assert eps2 == pytest.approx(4 * math.exp(-20), rel=1e-7)
        assert eps == pytest.approx(2 * eps1 + eps2 + math.exp(-45), rel=1e-12)

    def test_decoy_large_nu_limit(self):
        inp = SoundnessInput(100, 0.1, 400.0)
        eps, eps1, eps2 = soundness_decoy(inp)
        assert eps1 == 0.0 and eps2 == 0.0
        assert eps == soundness_qubit(inp)

    @settings(max_examples=60, deadline=None)
    @given(st.integers(1, 5000), st.floats(0.0, 0.24), st.floats(0.1, 30.0))
    def test_decoy_monotonicity(self, n, delta, nu):
        base = soundness_decoy(SoundnessInput(n, delta, nu))[0]
        assert soundness_decoy(SoundnessInput(n, delta, nu * 1.1))[0] <= base
        assert soundness_decoy(SoundnessInput(n + 10, delta, nu))[0] <= base
        assert soundness_decoy(SoundnessInput(n, min(delta + 0.005, 0.2499), nu))[0] >= base
