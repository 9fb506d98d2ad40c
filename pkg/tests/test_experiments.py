import json
import math
import warnings

import numpy as np
import pytest

from lossqpv.bounds import exact_attack_guess, locc_xbasis_strategy
from lossqpv.decoy import IntensityConfig
from lossqpv.experiments import (
    Figure3Point,
    attack_bench,
    channel_at_loss,
    curve_csv,
    cutoff_loss,
    decoy_cell_probabilities,
    default_loss_grid,
    derive_rng,
    expected_count_table,
    figure3_curve,
    find_cutoff,
    read_curve_csv,
    run_decoy_mc,
    run_qubit_mc,
    sample_decoy_aggregate,
    sample_decoy_rounds,
    sha256_file,
    upward_crossings,
    write_manifest,
)
from lossqpv.optics import ChannelModel, gain_error_table
from lossqpv.protocol import HonestProver, ProtocolParams

CFG = IntensityConfig()


def pt(loss, ratio):
    s = 0 if math.isinf(ratio) else 1000
    return Figure3Point(loss, ratio, s, 0 if s == 0 else round(ratio * s), 1e12)


class TestSeeding:
    def test_reproducible(self):
        assert derive_rng(3, "decoy", 1).random() == derive_rng(3, "decoy", 1).random()

    def test_streams_differ(self):
        draws = {derive_rng(3, "decoy", 1).random(), derive_rng(3, "decoy", 2).random(),
                 derive_rng(3, "qubit", 1).random(), derive_rng(4, "decoy", 1).random()}
        assert len(draws) == 4


class TestQubitMC:
    def test_honest_always_accepted(self):
        rep = run_qubit_mc(ProtocolParams(10000, 4000, 0.01), HonestProver(), trials=100, seed=1)
        assert rep.aggregates["acceptance"].value == 1.0
        assert rep.verdicts == {"accept": 100}
        assert abs(rep.aggregates["detection_rate"].value - 0.5) < 5 * rep.aggregates["detection_rate"].stderr
        assert rep.aggregates["error_rate"].value == 0.0

    def test_attack_error_rate(self):
        rep = run_qubit_mc(ProtocolParams(10000, 4000, 0.01), locc_xbasis_strategy(0.5), trials=20, seed=2)
        err = rep.aggregates["error_rate"]
        assert abs(err.value - 0.25) < 5 * err.stderr
        assert rep.aggregates["acceptance"].value == 0.0
        assert rep.soundness["eps_qubit"] == pytest.approx(math.exp(-2 * 4000 * 0.24 ** 2))

    def test_zero_trials(self):
        with pytest.raises(ValueError):
            run_qubit_mc(ProtocolParams(10, 1, 0.1), HonestProver(), trials=0, seed=0)

    def test_report_serialises(self):
        rep = run_qubit_mc(ProtocolParams(200, 20, 0.01), HonestProver(), trials=3, seed=0)
        json.dumps(rep.as_dict())


class TestDecoySampling:
    def test_cells_normalised(self):
        cells = decoy_cell_probabilities(ChannelModel.from_overall_loss(10.0), CFG, CFG.photon_cutoff())
        assert cells.sum() == pytest.approx(1.0, abs=1e-12)
        assert cells.min() >= 0.0

    @pytest.mark.parametrize("sampler", ["aggregate", "rounds"])
    def test_counts_match_expected_table(self, sampler):
        """Sampled n_obs and m_obs agree cell by cell with N p_u p_v Q and N p_u p_v Q E."""
        m = 10**7
        ch = ChannelModel.from_overall_loss(10.0)
        rng = np.random.default_rng(23)
        if sampler == "aggregate":
            counts, _ = sample_decoy_aggregate(m, decoy_cell_probabilities(ch, CFG, CFG.photon_cutoff()), rng)
        else:
            counts, _ = sample_decoy_rounds(m, ch, CFG, rng)
        expected = expected_count_table(m, ch, CFG, rounded=False)
        for obs, exp in ((counts.n_obs, expected.n_obs), (counts.m_obs, expected.m_obs)):
            sigma = np.sqrt(exp * (1 - exp / m))
            assert np.all(np.abs(obs - exp) <= 5 * sigma + 1e-9), (obs, exp)

    def test_truth_consistent_with_table(self):
        rng = np.random.default_rng(4)
        counts, truth = sample_decoy_rounds(10**5, ChannelModel.from_overall_loss(8.0), CFG, rng)
        assert truth.total == counts.n_obs_sum
        assert truth.r.sum() == counts.m_obs_sum


class TestDecoyMC:
    def test_deterministic_across_workers(self):
        params = ProtocolParams(10**6, 10, 0.2, mode="decoy")
        ch = ChannelModel.from_overall_loss(10.0)
        a = run_decoy_mc(params, ch, CFG, 2, trials=6, seed=9, workers=1)
        b = run_decoy_mc(params, ch, CFG, 2, trials=6, seed=9, workers=2)
        assert a.details == b.details
        assert a.verdicts == b.verdicts

    def test_zero_decoy_intensity(self):
        cfg = IntensityConfig(mu3=0.0)
        rep = run_decoy_mc(ProtocolParams(10**9, 10, 0.2, mode="decoy"), ChannelModel.from_overall_loss(10.0),
                           cfg, 2, trials=20, seed=1)
        assert rep.aggregates["s_coverage"].value == 1.0
        assert all(math.isfinite(x) for x in rep.details["s_lb"])

    def test_large_sample_coverage(self):
        rep = run_decoy_mc(ProtocolParams(10**10, 10, 0.2, mode="decoy"), ChannelModel.from_overall_loss(10.0),
                           CFG, 2, trials=200, seed=5)
        assert rep.aggregates["s_coverage"].value == 1.0
        assert rep.aggregates["r_coverage"].value == 1.0
        assert rep.aggregates["acceptance"].value == 1.0

    def test_noise_free_ratio_shrinks_with_m(self):
        # no dark counts, no channel loss: what is left of the ratio is mostly fluctuation slack
        ch = ChannelModel(dark_count_prob=0.0)
        ratios = []
        for m in (10**8, 10**10):
            rep = run_decoy_mc(ProtocolParams(m, 1, 0.2, mode="decoy"), ch, CFG, 2, trials=10, seed=8)
            d = rep.details
            assert min(d["s_lb"]) > 0
            ratios.append(np.mean(np.array(d["r_ub"]) / np.array(d["s_lb"])))
        assert ratios[1] < ratios[0]

    def test_bad_sampler(self):
        with pytest.raises(ValueError):
            run_decoy_mc(ProtocolParams(10, 1, 0.1, mode="decoy"), ChannelModel(), CFG, 2, 1, 0, sampler="x")


class TestExpectedCurves:
    def test_dark_free_gain_scales_with_loss(self):
        ch = ChannelModel(dark_count_prob=0.0)
        # coincidences need two detected photons, so Q ~ eta_arm^2 once multi-photon
        # corrections fade; the residual is O(eta_arm)
        q50, _ = gain_error_table(CFG.intensities, channel_at_loss(ch, 50.0))
        q60, _ = gain_error_table(CFG.intensities, channel_at_loss(ch, 60.0))
        np.testing.assert_allclose(q60 / q50, 0.1, rtol=2e-3)

    def test_rounding_half_to_even(self):
        t = expected_count_table(1e12, ChannelModel.from_overall_loss(20.0), CFG)
        raw = expected_count_table(1e12, ChannelModel.from_overall_loss(20.0), CFG, rounded=False)
        np.testing.assert_array_equal(t.n_obs, np.rint(raw.n_obs))

    def test_grid_starts_at_bsm_loss(self):
        grid = default_loss_grid(ChannelModel())
        assert grid[0] == pytest.approx(6.8867, abs=1e-4)
        assert grid[1] == 7.0 and grid[-1] == 70.0

    def test_curve_deterministic(self):
        ch = ChannelModel()
        a = figure3_curve(1e12, ch, CFG, 10, [5.0, 10.0, 30.0, 40.0])
        b = figure3_curve(1e12, ch, CFG, 10, [5.0, 10.0, 30.0, 40.0], workers=2)
        assert a == b
        assert [p.loss_db for p in a] == [10.0, 30.0, 40.0]

    def test_cutoff_grows_with_N(self):
        ch = ChannelModel()
        cuts = [cutoff_loss(N, ch, CFG, 10, tol=0.01) for N in (1e10, 1e11, 1e12, 1e13)]
        assert all(a < b for a, b in zip(cuts, cuts[1:]))

    def test_cutoff_shrinks_with_dark_counts(self):
        cuts = [cutoff_loss(1e12, ChannelModel(dark_count_prob=d), CFG, 10, tol=0.01) for d in (1e-7, 2.5e-6, 1e-4)]
        assert all(a > b for a, b in zip(cuts, cuts[1:]))


class TestCrossing:
    def test_never_crosses(self):
        assert find_cutoff([pt(10, 0.1), pt(20, 0.2), pt(30, 0.24)]) is None

    def test_interpolates(self):
        assert find_cutoff([pt(40, 0.2), pt(50, 0.3)]) == pytest.approx(45.0)

    def test_undefined_ratio_counts_as_half(self):
        assert find_cutoff([pt(40, 0.0), pt(50, math.inf)]) == pytest.approx(45.0)

    def test_multiple_crossings_warn(self):
        pts = [pt(10, 0.1), pt(20, 0.3), pt(30, 0.1), pt(40, 0.3)]
        with pytest.warns(UserWarning):
            assert find_cutoff(pts) == pytest.approx(17.5)
        assert len(upward_crossings(pts)) == 2

    def test_single_crossing_silent(self):
        with warnings.catch_warnings():
            warnings.simplefilter("error")
            find_cutoff([pt(10, 0.1), pt(20, 0.3), pt(30, 0.4)])


class TestAttackBench:
    def test_error_quarter_at_each_eta(self):
        rows = attack_bench(etas=(0.05, 0.5, 1.0), rounds=200000, seed=3)
        assert len(rows) == 9
        for r in rows:
            g = r.guess
            assert abs(g.value - 0.75) < 5 * g.stderr, r
            d = r.detection
            assert abs(d.value - r.eta) < 5 * math.sqrt(r.eta * (1 - r.eta) / r.rounds) + 1e-12

    def test_exact_guess(self):
        assert exact_attack_guess(locc_xbasis_strategy(0.3)) == pytest.approx((0.75, 0.3))


class TestOutputs:
    def test_curve_csv_round_trip(self):
        pts = figure3_curve(1e11, ChannelModel(), CFG, 10, [10.0, 60.0])
        text = curve_csv(pts, {"N": 1e11})
        assert text.startswith("# config: ")
        assert read_curve_csv(text) == pts

    def test_manifest(self, tmp_path):
        out = tmp_path / "a.txt"
        out.write_text("hello\n")
        man = write_manifest(tmp_path / "manifest.json", "bounds", {"seed": 1}, [out])
        assert man["outputs"]["a.txt"] == sha256_file(out)
        assert json.loads((tmp_path / "manifest.json").read_text()) == man
