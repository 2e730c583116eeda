import math

import numpy as np
import pytest

from crowdspeed.analytic import p_cross_n_closed, p_cross_open, p_cross_single
from crowdspeed.errors import DegenerateSequenceError, EstimationError
from crowdspeed.estimate import (
    SpeedClass,
    SpeedGrid,
    classify,
    estimate_arrival_rate,
    estimate_closed,
    estimate_open,
    evaluate,
    sensitivity_sweep,
    write_nse_cdf_csv,
    write_report_csv,
)
from crowdspeed.geometry import Scenario
from crowdspeed.rssi import ExperimentalStats, stats_from_events
from crowdspeed.simulate import EventSequence, model_cross_correlation

SIM_STEPS = 40_000  # enough signal for unit tests, cheap to simulate

COARSE = SpeedGrid(
    speeds1=np.array([0.4, 0.8, 1.2]),
    speeds2=np.array([0.3, 0.6, 0.9, 1.2]),
)


def experimental_p_cross_stub(samples):
    return float(np.count_nonzero(samples) / len(samples))


def exact_stats(v1, v2, config, p_exp, sim_steps=SIM_STEPS):
    """Stats whose correlation IS the model's own at (v1, v2)."""
    xcorr = model_cross_correlation(v1, v2, config, sim_steps=sim_steps)
    dummy = (
        EventSequence(np.array([1, 0, 1]), config.motion.time_step, 1),
        EventSequence(np.array([1, 0, 1]), config.motion.time_step, 2),
    )
    return ExperimentalStats(
        p_exp_link1=p_exp, p_exp_link2=p_exp, xcorr=xcorr, events=dummy
    )


class TestClassify:
    @pytest.mark.parametrize(
        "v,expected",
        [
            (0.3, SpeedClass.LOW),
            (0.55, SpeedClass.LOW),
            (0.56, SpeedClass.NORMAL),
            (0.9, SpeedClass.NORMAL),
            (1.2, SpeedClass.NORMAL),
            (1.21, SpeedClass.HIGH),
            (2.3, SpeedClass.HIGH),
        ],
    )
    def test_thresholds(self, v, expected):
        assert classify(v) is expected

    def test_rejects_nonpositive(self):
        with pytest.raises(EstimationError):
            classify(0.0)


class TestSpeedGrid:
    def test_default_covers_range(self):
        grid = SpeedGrid.default()
        assert grid.speeds1[0] == pytest.approx(0.1)
        assert grid.speeds1[-1] == pytest.approx(2.5)
        assert len(grid.speeds1) == 25

    def test_rejects_unsorted(self):
        with pytest.raises(EstimationError):
            SpeedGrid(speeds1=np.array([0.5, 0.4]), speeds2=np.array([0.5]))

    def test_rejects_nonpositive(self):
        with pytest.raises(EstimationError):
            SpeedGrid(speeds1=np.array([0.0, 0.4]), speeds2=np.array([0.5]))


class TestEstimateClosed:
    def test_recovers_model_generated_input(self, outdoor):
        # correlation taken from the model itself at (0.8, 0.6); p_exp exact
        truth_v1, truth_v2 = 0.8, 0.6
        n = 5
        p_exp = p_cross_n_closed(
            p_cross_single(truth_v1, truth_v2, 0.05, outdoor.geometry, math.pi / 4).per_step,
            n,
        ).per_step
        stats = exact_stats(truth_v1, truth_v2, outdoor, p_exp)
        est = estimate_closed(stats, outdoor, COARSE, model_sim_steps=SIM_STEPS)
        assert est.v1_hat == truth_v1
        assert est.v2_hat == truth_v2
        assert est.xcorr_residual == 0.0
        assert est.pc_residual == pytest.approx(0.0, abs=1e-20)

    def test_stage2_exact_inversion_each_grid_point(self, outdoor):
        # with p_exp computed at (v1_hat, v2*) the stage-2 argmin must be v2*
        stats0 = exact_stats(0.8, 0.6, outdoor, 0.0)
        for v2_star in COARSE.speeds2:
            p_exp = p_cross_n_closed(
                p_cross_single(0.8, float(v2_star), 0.05, outdoor.geometry, math.pi / 4).per_step,
                5,
            ).per_step
            stats = ExperimentalStats(
                p_exp_link1=p_exp, p_exp_link2=p_exp, xcorr=stats0.xcorr, events=stats0.events
            )
            est = estimate_closed(stats, outdoor, COARSE, model_sim_steps=SIM_STEPS)
            assert est.v2_hat == float(v2_star)

    def test_stage2_argmin_beats_neighbors(self, outdoor):
        stats = exact_stats(0.8, 0.6, outdoor, 4.8e-3)
        est = estimate_closed(stats, outdoor, COARSE, model_sim_steps=SIM_STEPS)
        idx = list(COARSE.speeds2).index(est.v2_hat)

        def obj(v2):
            p = p_cross_n_closed(
                p_cross_single(est.v1_hat, v2, 0.05, outdoor.geometry, math.pi / 4).per_step, 5
            ).per_step
            return (stats.p_exp_mean - p) ** 2

        for j in (idx - 1, idx + 1):
            if 0 <= j < len(COARSE.speeds2):
                assert obj(est.v2_hat) <= obj(float(COARSE.speeds2[j]))

    def test_stage1_ignores_population(self, outdoor):
        stats = exact_stats(0.8, 0.6, outdoor, 4.8e-3)
        est5 = estimate_closed(stats, outdoor.with_overrides(population=5.0), COARSE, model_sim_steps=SIM_STEPS)
        est9 = estimate_closed(stats, outdoor.with_overrides(population=9.0), COARSE, model_sim_steps=SIM_STEPS)
        assert est5.v1_hat == est9.v1_hat

    def test_deterministic(self, outdoor):
        stats = exact_stats(0.8, 0.6, outdoor, 4.8e-3)
        a = estimate_closed(stats, outdoor, COARSE, model_sim_steps=SIM_STEPS)
        b = estimate_closed(stats, outdoor, COARSE, model_sim_steps=SIM_STEPS)
        assert a == b

    def test_single_event_link_rejected(self, outdoor):
        # one lone event on a link is not enough signal for stage 1
        lonely = np.zeros(400, np.int64)
        lonely[7] = 1
        busy = (np.arange(400) % 31 == 0).astype(np.int64)
        stats = ExperimentalStats(
            p_exp_link1=experimental_p_cross_stub(lonely),
            p_exp_link2=experimental_p_cross_stub(busy),
            xcorr=exact_stats(0.8, 0.6, outdoor, 0.0).xcorr,
            events=(
                EventSequence(lonely, 0.05, 1),
                EventSequence(busy, 0.05, 2),
            ),
        )
        with pytest.raises(DegenerateSequenceError, match="at least 2 events"):
            estimate_closed(stats, outdoor, COARSE, model_sim_steps=SIM_STEPS)

    def test_reference_scales_documented(self):
        from crowdspeed.estimate import REFERENCE_CLASSIFICATION_ACCURACY, REFERENCE_NMSE

        assert REFERENCE_NMSE == {"v1": 0.11, "v2": 0.24, "any": 0.18}
        assert REFERENCE_CLASSIFICATION_ACCURACY == 0.852

    def test_degenerate_correlation_rejected(self, outdoor):
        stats = ExperimentalStats(
            p_exp_link1=0.0,
            p_exp_link2=0.0,
            xcorr=None,
            events=(
                EventSequence(np.zeros(10, np.int64), 0.05, 1),
                EventSequence(np.zeros(10, np.int64), 0.05, 2),
            ),
        )
        with pytest.raises(DegenerateSequenceError):
            estimate_closed(stats, outdoor, COARSE, model_sim_steps=SIM_STEPS)

    def test_needs_population(self, outdoor):
        no_count = outdoor.with_overrides(
            scenario=Scenario.OPEN, arrival_rate=0.01, population=None
        )
        stats = exact_stats(0.8, 0.6, outdoor, 4.8e-3)
        with pytest.raises(EstimationError, match="n_people"):
            estimate_closed(stats, no_count, COARSE, model_sim_steps=SIM_STEPS)


class TestEstimateOpen:
    def open_cfg(self, outdoor, **kw):
        base = dict(
            scenario=Scenario.OPEN, arrival_rate=1 / 60, population=2.0,
            theta_max=math.radians(20.0),
        )
        base.update(kw)
        return outdoor.with_overrides(**base)

    def test_arrival_rate_estimate(self, outdoor):
        cfg = self.open_cfg(outdoor)
        stats = exact_stats(0.8, 0.6, cfg, 8.0e-4)
        est = estimate_open(stats, cfg, COARSE, model_sim_steps=SIM_STEPS)
        assert est.lambda_hat == pytest.approx(8.0e-4 / 0.05)

    def test_stage2_inverts_open_formula(self, outdoor):
        cfg = self.open_cfg(outdoor)
        p_exp = p_cross_open(0.8, 0.9, 0.05, cfg.geometry, 2.0).per_step
        stats = exact_stats(0.8, 0.9, cfg, p_exp)
        est = estimate_open(stats, cfg, COARSE, model_sim_steps=SIM_STEPS)
        assert est.v1_hat == 0.8
        assert est.v2_hat == 0.9

    def test_single_region_mode(self, outdoor):
        cfg = self.open_cfg(outdoor, population=None)
        stats = exact_stats(0.8, 0.8, cfg, 8.0e-4)
        est = estimate_open(stats, cfg, COARSE, single_region=True, model_sim_steps=SIM_STEPS)
        assert est.v1_hat == est.v2_hat == 0.8
        assert est.lambda_hat is not None

    def test_two_region_needs_occupancy(self, outdoor):
        cfg = self.open_cfg(outdoor, population=None)
        stats = exact_stats(0.8, 0.8, cfg, 8.0e-4)
        with pytest.raises(EstimationError, match="occupancy"):
            estimate_open(stats, cfg, COARSE, model_sim_steps=SIM_STEPS)

    def test_zero_events(self, outdoor):
        cfg = self.open_cfg(outdoor)
        zero = (
            EventSequence(np.zeros(100, np.int64), 0.05, 1),
            EventSequence(np.zeros(100, np.int64), 0.05, 2),
        )
        with pytest.raises(DegenerateSequenceError) as err:
            stats_from_events(zero, max_lag=10)
        partial = err.value.partial
        assert estimate_arrival_rate(partial, 0.05) == 0.0
        with pytest.raises(DegenerateSequenceError):
            estimate_open(partial, cfg, COARSE, model_sim_steps=SIM_STEPS)


class TestEvaluate:
    def fake_estimate(self, v1, v2):
        return_labels = (classify(v1), classify(v2))
        from crowdspeed.estimate import SpeedEstimate

        return SpeedEstimate(
            v1_hat=v1, v2_hat=v2, lambda_hat=None, xcorr_residual=0.0,
            pc_residual=0.0, labels=return_labels, v2_stage1=v2,
        )

    def test_perfect(self):
        report = evaluate([((0.8, 0.3), self.fake_estimate(0.8, 0.3))])
        assert report.nmse_any == 0.0
        assert report.classification_accuracy == 1.0

    def test_single_run_arithmetic(self):
        report = evaluate([((0.8, 0.8), self.fake_estimate(0.9, 0.8))])
        assert report.nse_v1[0] == pytest.approx((0.1 / 0.8) ** 2)
        assert report.nse_v1[0] == pytest.approx(0.015625)

    def test_pooled_mean(self):
        report = evaluate(
            [
                ((0.8, 0.3), self.fake_estimate(0.9, 0.3)),
                ((1.6, 1.6), self.fake_estimate(1.6, 2.0)),
            ]
        )
        assert report.nmse_any == pytest.approx(
            np.mean([0.015625, 0.0, 0.0, (0.4 / 1.6) ** 2])
        )

    def test_empty_rejected(self):
        with pytest.raises(EstimationError):
            evaluate([])

    def test_accuracy_counts_labels(self):
        report = evaluate([((0.3, 1.6), self.fake_estimate(0.5, 1.1))])
        # 0.5 -> low matches 0.3 -> low; 1.1 -> normal misses 1.6 -> high
        assert report.classification_accuracy == 0.5


class TestSensitivitySweep:
    def test_identity_at_single_theta(self, outdoor):
        stats = exact_stats(0.8, 0.6, outdoor, 4.8e-3)
        table = sensitivity_sweep(
            stats, outdoor, COARSE, [outdoor.motion.theta_max], model_sim_steps=SIM_STEPS
        )
        est = estimate_closed(stats, outdoor, COARSE, model_sim_steps=SIM_STEPS)
        truth = (outdoor.motion.speed_region1, outdoor.motion.speed_region2)
        expected = evaluate([(truth, est)]).nmse_any
        assert table == [(outdoor.motion.theta_max, expected)]

    def test_empty_theta_list(self, outdoor):
        stats = exact_stats(0.8, 0.6, outdoor, 4.8e-3)
        with pytest.raises(EstimationError):
            sensitivity_sweep(stats, outdoor, COARSE, [], model_sim_steps=SIM_STEPS)


class TestReports:
    def test_report_csv(self, tmp_path):
        helper = TestEvaluate()
        rows = [
            ("run0", (0.8, 0.3), helper.fake_estimate(0.8, 0.4)),
            ("run1", (1.6, 0.8), helper.fake_estimate(1.7, 0.8)),
        ]
        path = tmp_path / "report.csv"
        write_report_csv(path, rows, meta={"preset": "outdoor"})
        lines = path.read_text().splitlines()
        assert lines[0] == "# preset = outdoor"
        assert lines[1] == "run_id,v1_true,v2_true,v1_hat,v2_hat,nse1,nse2,label1,label2"
        assert lines[2].startswith("run0,0.8,0.3,0.8,0.4,")
        assert any(line.startswith("# nmse_any") for line in lines)

    def test_nse_cdf_csv(self, tmp_path):
        path = tmp_path / "cdf.csv"
        write_nse_cdf_csv(path, [0.4, 0.1, 0.2])
        lines = path.read_text().splitlines()
        assert lines[0] == "nse,cdf"
        assert lines[1] == "0.1,0.333333"
        assert lines[-1] == "0.4,1"
