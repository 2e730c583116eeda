"""Runnable invariant suite behind the ``validate`` CLI subcommand.

Every invariant declared by the library modules has a named check here;
each returns a CheckResult with a human-readable detail line.  Monte
Carlo checks accept a ``scale`` multiplier on their sample sizes (the
defaults are sized so the stated tolerances pass with seed-stable
margin).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import estimate as est
from . import markov, rssi
from . import simulate as sim
from .analytic import p_cross_given_region1, p_cross_n_closed, p_cross_open, p_cross_single
from .errors import ValidationError
from .geometry import Scenario, parse_scenario, preset_scenario, serialize_scenario


@dataclass(frozen=True)
class CheckResult:
    name: str
    passed: bool
    detail: str


_REGISTRY: dict[str, Callable[[float], CheckResult]] = {}


def _register(name: str):
    def deco(fn):
        _REGISTRY[name] = fn
        return fn

    return deco


def available_checks() -> list[str]:
    return sorted(_REGISTRY)


def run_checks(names: list[str] | None = None, scale: float = 1.0) -> list[CheckResult]:
    selected = available_checks() if not names else names
    results = []
    for name in selected:
        if name not in _REGISTRY:
            raise KeyError(f"unknown check '{name}' (see available_checks())")
        results.append(_REGISTRY[name](scale))
    return results


def _speed_pairs():
    return [(0.8, 0.3), (0.3, 0.8), (1.6, 1.6)]


def _ballistic(config, **kw):
    # closed-form constants assume near-ballistic heading persistence
    return config.with_overrides(heading_persistence=0.9975, **kw)


# --- geometry ---------------------------------------------------------------


@_register("geometry.round-trip")
def _check_round_trip(scale: float) -> CheckResult:
    for name in ("outdoor", "indoor", "museum", "costco-aisle"):
        cfg = preset_scenario(name)
        if parse_scenario(serialize_scenario(cfg)) != cfg:
            return CheckResult("geometry.round-trip", False, f"preset {name} not identical")
    return CheckResult("geometry.round-trip", True, "4 presets serialize/parse identical")


@_register("geometry.field-errors")
def _check_field_errors(scale: float) -> CheckResult:
    base = serialize_scenario(preset_scenario("outdoor"))
    cases = {
        "b1_m": "-1", "b2_m": "0", "p": "1.5", "theta_max_deg": "95",
        "dt_s": "0", "v1_mps": "0", "v2_mps": "-1", "n_people": "0",
        "duration_s": "-5", "seed": "0.5",
    }
    aliases = {"b1_m": "region1_width", "b2_m": "region2_width"}
    for key, bad in cases.items():
        lines = [
            f"{key} = {bad}" if line.startswith(f"{key} =") else line
            for line in base.splitlines()
        ]
        try:
            parse_scenario("\n".join(lines))
            return CheckResult("geometry.field-errors", False, f"{key}={bad} accepted")
        except ValidationError as exc:
            if exc.field not in (key, aliases.get(key)):
                return CheckResult(
                    "geometry.field-errors", False, f"{key} error blamed '{exc.field}'"
                )
    return CheckResult("geometry.field-errors", True, f"{len(cases)} invalid fields named")


# --- markov oracle ----------------------------------------------------------


@_register("markov.heading-uniform")
def _check_heading_uniform(scale: float) -> CheckResult:
    cfg = preset_scenario("outdoor")
    chain = markov.build_heading_chain(cfg.motion, n_theta=16)
    pi = markov.power_stationary(chain.transition_matrix, tol=1e-13)
    dev = float(np.max(np.abs(pi - 1 / 16)))
    return CheckResult(
        "markov.heading-uniform", dev <= 1e-12, f"max deviation from uniform {dev:.2e}"
    )


def _oracle_chains():
    for preset in ("outdoor", "indoor"):
        for v1, v2 in _speed_pairs():
            cfg = preset_scenario(preset).with_overrides(
                speed_region1=v1, speed_region2=v2
            )
            yield f"{preset}({v1},{v2})", cfg, markov.build_position_chain(cfg)


@_register("markov.flatness")
def _check_flatness(scale: float) -> CheckResult:
    worst = 0.0
    for label, _, chain in _oracle_chains():
        sd = markov.stationary(chain)
        worst = max(worst, sd.max_rel_deviation)
        if not sd.flat:
            return CheckResult(
                "markov.flatness", False, f"{label}: deviation {sd.max_rel_deviation:.2e}"
            )
    return CheckResult("markov.flatness", True, f"worst in-region deviation {worst:.2e}")


@_register("markov.complements")
def _check_complements(scale: float) -> CheckResult:
    worst = 0.0
    for label, _, chain in _oracle_chains():
        for s in markov.stochastic_complements(chain):
            worst = max(
                worst,
                float(np.max(np.abs(s - s.T))),
                float(np.max(np.abs(s.sum(axis=1) - 1.0))),
            )
    return CheckResult(
        "markov.complements", worst <= 1e-10, f"worst symmetry/row-sum error {worst:.2e}"
    )


@_register("markov.aggregation-consistency")
def _check_aggregation_consistency(scale: float) -> CheckResult:
    worst = 0.0
    for label, _, chain in _oracle_chains():
        sd = markov.stationary(chain)
        pi = markov.aggregated_stationary(markov.aggregated_chain(chain))
        worst = max(worst, float(np.max(np.abs(pi - [sd.region1_prob, sd.region2_prob]))))
    return CheckResult(
        "markov.aggregation-consistency",
        worst <= 1e-8,
        f"worst |aggregated - chain| {worst:.2e}",
    )


@_register("markov.aggregation-constants")
def _check_aggregation_constants(scale: float) -> CheckResult:
    worst = 0.0
    for label, cfg, chain in _oracle_chains():
        pi = markov.aggregated_stationary(markov.aggregated_chain(chain))
        g = cfg.geometry
        v1, v2 = cfg.motion.speed_region1, cfg.motion.speed_region2
        c1 = v2 * g.region1_width / (v1 * g.region2_width + v2 * g.region1_width)
        worst = max(worst, abs(pi[0] - c1))
    return CheckResult(
        "markov.aggregation-constants", worst <= 0.02, f"worst |pi1 - c1| {worst:.4f}"
    )


@_register("markov.exit-rate")
def _check_exit_rate(scale: float) -> CheckResult:
    worst = 0.0
    for label, cfg, chain in _oracle_chains():
        p12 = markov.aggregated_chain(chain)[0, 1]
        closed_form = p_cross_given_region1(
            cfg.motion.speed_region1,
            cfg.motion.time_step,
            cfg.geometry.region1_width,
            cfg.motion.theta_max,
        ).per_step
        worst = max(worst, abs(p12 - closed_form / 2) / (closed_form / 2))
    return CheckResult(
        "markov.exit-rate", worst <= 0.05, f"worst relative gap to closed form {worst:.3%}"
    )


# --- analytic ---------------------------------------------------------------


@_register("analytic.monotonicity")
def _check_monotonicity(scale: float) -> CheckResult:
    geom = preset_scenario("outdoor").geometry
    grid = np.linspace(0.1, 2.5, 13)
    values = np.array(
        [[p_cross_single(a, b, 0.05, geom, math.pi / 4).per_step for b in grid] for a in grid]
    )
    ok = bool(np.all(np.diff(values, axis=0) > 0) and np.all(np.diff(values, axis=1) > 0))
    return CheckResult("analytic.monotonicity", ok, "p_single increasing in v1 and v2")


@_register("analytic.n-person-shape")
def _check_n_person_shape(scale: float) -> CheckResult:
    ns = [p_cross_n_closed(0.01, n).per_step for n in range(1, 25)]
    ps = np.linspace(0, 1, 101)
    curve = np.array([p_cross_n_closed(p, 4).per_step for p in ps])
    ok = all(b > a for a, b in zip(ns, ns[1:])) and bool(np.all(np.diff(curve, 2) <= 1e-12))
    return CheckResult("analytic.n-person-shape", ok, "monotone in n, concave in p")


@_register("analytic.open-closed-consistency")
def _check_open_closed(scale: float) -> CheckResult:
    geom = preset_scenario("outdoor").geometry
    worst = 0.0
    for n in (1, 4, 9):
        po = p_cross_open(0.8, 0.3, 0.05, geom, n).per_step
        pc = n * p_cross_single(0.8, 0.3, 0.05, geom, 1e-12).per_step
        worst = max(worst, abs(po - pc) / po)
    return CheckResult(
        "analytic.open-closed-consistency",
        worst <= 1e-9,
        f"first-order agreement gap {worst:.2e}",
    )


# --- simulator --------------------------------------------------------------


@_register("sim.reproducibility")
def _check_reproducibility(scale: float) -> CheckResult:
    cfg = preset_scenario("outdoor").with_overrides(duration=120.0)
    a = sim.simulate_closed(cfg, burn_in_steps=1000)
    b = sim.simulate_closed(cfg, burn_in_steps=1000)
    open_cfg = preset_scenario("costco-aisle")
    c = sim.simulate_open(open_cfg)
    d = sim.simulate_open(open_cfg)
    ok = (
        np.array_equal(a.events[0].samples, b.events[0].samples)
        and np.array_equal(a.events[1].samples, b.events[1].samples)
        and np.array_equal(c.events[0].samples, d.events[0].samples)
    )
    return CheckResult("sim.reproducibility", ok, "same seed, bit-identical events")


@_register("sim.population-bound")
def _check_population_bound(scale: float) -> CheckResult:
    cfg = preset_scenario("outdoor").with_overrides(duration=300.0, population=7.0)
    res = sim.simulate_closed(cfg, burn_in_steps=1000)
    peak = int(max(res.events[0].samples.max(), res.events[1].samples.max()))
    ok = peak <= 7 and res.population == 7
    return CheckResult("sim.population-bound", ok, f"peak simultaneous blockers {peak} <= 7")


@_register("sim.occupancy")
def _check_occupancy(scale: float) -> CheckResult:
    base = preset_scenario("outdoor")
    b1 = base.geometry.region1_width
    b = base.geometry.total_width
    bins1 = np.linspace(0.0, b1, 6)
    bins2 = np.linspace(b1, b, 9)
    hist1 = np.zeros(5)
    hist2 = np.zeros(8)
    batches = max(1, int(round(8 * scale)))
    for batch in range(batches):  # batched to bound trajectory memory
        cfg = _ballistic(
            base, population=50.0, duration=2500.0, rng_seed=12 + batch
        )
        res = sim.simulate_closed(cfg, collect_trajectories=True)
        xs = np.concatenate([t.x for t in res.trajectories])
        hist1 += np.histogram(xs, bins=bins1)[0]
        hist2 += np.histogram(xs, bins=bins2)[0]
    total = hist1.sum() + hist2.sum()
    frac1 = float(hist1.sum() / total)
    v1, v2 = base.motion.speed_region1, base.motion.speed_region2
    c1 = v2 * b1 / (v1 * (b - b1) + v2 * b1)
    occ_err = abs(frac1 - c1) / c1
    flat_err = max(
        float(np.max(np.abs(hist1 / hist1.mean() - 1.0))),
        float(np.max(np.abs(hist2 / hist2.mean() - 1.0))),
    )
    ok = occ_err <= 0.03 and flat_err <= 0.02
    return CheckResult(
        "sim.occupancy",
        ok,
        f"occupancy error {occ_err:.2%} (<=3%), in-region ripple {flat_err:.2%} (<=2%)",
    )


@_register("sim.crossing-grid")
def _check_crossing_grid(scale: float) -> CheckResult:
    walkers = int(60 * scale) or 4
    worst = 0.0
    worst_label = ""
    for offset, preset in ((0, "outdoor"), (100, "indoor")):
        base = preset_scenario(preset)
        for i, (v1, v2) in enumerate(
            [(a, b) for a in (0.3, 0.8, 1.6) for b in (0.3, 0.8, 1.6)]
        ):
            cfg = _ballistic(
                base,
                speed_region1=v1,
                speed_region2=v2,
                population=float(walkers),
                duration=25_000.0,
                rng_seed=40 + offset + i,
            )
            res = sim.simulate_closed(cfg)
            steps = len(res.events[0].samples) * walkers
            freq = (res.events[0].samples.sum() + res.events[1].samples.sum()) / (2 * steps)
            expected = p_cross_single(
                v1, v2, cfg.motion.time_step, cfg.geometry, cfg.motion.theta_max
            ).per_step
            err = abs(freq - expected) / expected
            if err > worst:
                worst, worst_label = err, f"{preset}({v1},{v2})"
    return CheckResult(
        "sim.crossing-grid",
        worst <= 0.03,
        f"worst crossing-frequency error {worst:.2%} at {worst_label} (<=3%)",
    )


@_register("sim.link-position-invariance")
def _check_link_invariance(scale: float) -> CheckResult:
    walkers = int(40 * scale) or 4
    cfg = _ballistic(
        preset_scenario("outdoor"),
        population=float(walkers),
        duration=25_000.0,
        rng_seed=4,
    )
    res = sim.simulate_closed(cfg)
    n = len(res.events[0].samples) * walkers
    k1 = int(res.events[0].samples.sum())
    k2 = int(res.events[1].samples.sum())
    p1, p2 = k1 / n, k2 / n
    pooled = (k1 + k2) / (2 * n)
    z = (p1 - p2) / math.sqrt(pooled * (1 - pooled) * 2 / n)
    p_value = math.erfc(abs(z) / math.sqrt(2))
    return CheckResult(
        "sim.link-position-invariance",
        p_value >= 0.01,
        f"two-proportion z={z:.2f}, p={p_value:.3f} (counts {k1} vs {k2})",
    )


@_register("sim.flow-balance")
def _check_flow_balance(scale: float) -> CheckResult:
    cfg = preset_scenario("costco-aisle").with_overrides(duration=1800.0)
    res = sim.simulate_open(cfg)
    ok = res.arrivals - res.departures == res.population_end >= 0
    return CheckResult(
        "sim.flow-balance",
        ok,
        f"{res.arrivals} arrivals - {res.departures} departures = {res.population_end} inside",
    )


@_register("sim.littles-law")
def _check_littles_law(scale: float) -> CheckResult:
    cfg = _ballistic(
        preset_scenario("outdoor"),
        scenario=Scenario.OPEN,
        arrival_rate=0.5,
        population=None,
        speed_region1=1.0,
        speed_region2=1.0,
        theta_max=math.radians(15.0),
        duration=2000.0 * max(scale, 0.1),
        rng_seed=1,
    )
    res = sim.simulate_open(cfg)
    navg = float(res.occupancy.mean())
    target = cfg.motion.arrival_rate * (
        cfg.geometry.region1_width / 1.0 + cfg.geometry.region2_width / 1.0
    )
    err = abs(navg - target) / target
    return CheckResult(
        "sim.littles-law", err <= 0.10, f"time-average {navg:.2f} vs {target:.2f} ({err:.1%})"
    )


# --- rssi pipeline ----------------------------------------------------------


def _default_calib():
    return rssi.CalibrationTable(
        baseline=(-40.0, -41.0), levels={1: (-55.0, -56.5), 2: (-62.0, -63.0)}
    )


@_register("rssi.round-trip")
def _check_rssi_round_trip(scale: float) -> CheckResult:
    cfg = preset_scenario("outdoor").with_overrides(duration=600.0, rng_seed=23)
    res = sim.simulate_closed(cfg)
    calib = _default_calib()
    trace = rssi.synth_rssi(res.events, calib)
    stats = rssi.experiment_stats(trace, calib, dt=cfg.motion.time_step)
    ok = all(
        np.array_equal(got.samples, want.samples)
        for got, want in zip(stats.events, res.events)
    )
    return CheckResult(
        "rssi.round-trip", ok, "zero-noise synthetic trace reproduces events exactly"
    )


@_register("rssi.scale-invariance")
def _check_rssi_scale(scale: float) -> CheckResult:
    cfg = preset_scenario("outdoor").with_overrides(duration=200.0, rng_seed=3)
    res = sim.simulate_closed(cfg, burn_in_steps=2000)
    calib = _default_calib()
    trace = rssi.synth_rssi(res.events, calib)
    shifted = rssi.RssiTrace(trace.t, trace.rssi + 7.5, trace.sample_rate)
    calib_shifted = rssi.CalibrationTable(
        baseline=(calib.baseline[0] + 7.5, calib.baseline[1] + 7.5),
        levels={l: (v[0] + 7.5, v[1] + 7.5) for l, v in calib.levels.items()},
    )
    a = rssi.experiment_stats(trace, calib, dt=0.05)
    b = rssi.experiment_stats(shifted, calib_shifted, dt=0.05)
    ok = (
        a.p_exp_link1 == b.p_exp_link1
        and a.p_exp_link2 == b.p_exp_link2
        and 0.0 <= a.p_exp_mean <= 1.0
    )
    return CheckResult("rssi.scale-invariance", ok, "uniform dB offset leaves events unchanged")


@_register("rssi.threshold-monotone")
def _check_rssi_threshold(scale: float) -> CheckResult:
    cfg = preset_scenario("outdoor").with_overrides(duration=240.0, rng_seed=17)
    res = sim.simulate_closed(cfg, burn_in_steps=2000)
    calib = _default_calib()
    trace = rssi.synth_rssi(res.events, calib, noise_db=1.0, rng=5)
    counts = []
    for threshold in (4.0, 8.0, 12.0, 16.0):
        settings = rssi.DipSettings(
            baseline_db=calib.baseline[0], threshold_db=threshold, exit_db=3.0
        )
        counts.append(len(rssi.detect_dips(trace, 1, settings)))
    ok = counts == sorted(counts, reverse=True)
    return CheckResult(
        "rssi.threshold-monotone", ok, f"dip counts {counts} non-increasing in threshold"
    )


# --- estimator --------------------------------------------------------------

_EST_STEPS = 40_000
_EST_GRID = est.SpeedGrid(
    speeds1=np.array([0.4, 0.8, 1.2]), speeds2=np.array([0.3, 0.6, 0.9, 1.2])
)


def _exact_stats(v1, v2, cfg, p_exp):
    xcorr = sim.model_cross_correlation(v1, v2, cfg, sim_steps=_EST_STEPS)
    events = (
        sim.EventSequence(np.array([1, 0, 1]), cfg.motion.time_step, 1),
        sim.EventSequence(np.array([1, 0, 1]), cfg.motion.time_step, 2),
    )
    return rssi.ExperimentalStats(p_exp, p_exp, xcorr=xcorr, events=events)


@_register("est.stage2-neighbors")
def _check_stage2_neighbors(scale: float) -> CheckResult:
    cfg = preset_scenario("outdoor")
    stats = _exact_stats(0.8, 0.6, cfg, 4.8e-3)
    e = est.estimate_closed(stats, cfg, _EST_GRID, model_sim_steps=_EST_STEPS)
    speeds = list(_EST_GRID.speeds2)
    idx = speeds.index(e.v2_hat)

    def obj(v2):
        p = p_cross_n_closed(
            p_cross_single(e.v1_hat, v2, 0.05, cfg.geometry, cfg.motion.theta_max).per_step,
            int(cfg.population),
        ).per_step
        return (stats.p_exp_mean - p) ** 2

    ok = all(
        obj(e.v2_hat) <= obj(speeds[j])
        for j in (idx - 1, idx + 1)
        if 0 <= j < len(speeds)
    )
    return CheckResult("est.stage2-neighbors", ok, "stage-2 argmin beats both grid neighbors")


@_register("est.stage1-n-invariance")
def _check_stage1_n(scale: float) -> CheckResult:
    cfg = preset_scenario("outdoor")
    stats = _exact_stats(0.8, 0.6, cfg, 4.8e-3)
    e5 = est.estimate_closed(stats, cfg.with_overrides(population=5.0), _EST_GRID, model_sim_steps=_EST_STEPS)
    e9 = est.estimate_closed(stats, cfg.with_overrides(population=9.0), _EST_GRID, model_sim_steps=_EST_STEPS)
    return CheckResult(
        "est.stage1-n-invariance",
        e5.v1_hat == e9.v1_hat,
        f"v1 estimate {e5.v1_hat} under N=5 and N=9",
    )


@_register("est.unique-minimizer")
def _check_unique_minimizer(scale: float) -> CheckResult:
    cfg = preset_scenario("outdoor")
    base = _exact_stats(0.8, 0.6, cfg, 0.0)
    for v2_star in _EST_GRID.speeds2:
        p_exp = p_cross_n_closed(
            p_cross_single(0.8, float(v2_star), 0.05, cfg.geometry, cfg.motion.theta_max).per_step,
            int(cfg.population),
        ).per_step
        stats = rssi.ExperimentalStats(p_exp, p_exp, xcorr=base.xcorr, events=base.events)
        e = est.estimate_closed(stats, cfg, _EST_GRID, model_sim_steps=_EST_STEPS)
        if e.v2_hat != float(v2_star):
            return CheckResult(
                "est.unique-minimizer", False, f"p_exp at v2={v2_star} recovered {e.v2_hat}"
            )
    return CheckResult(
        "est.unique-minimizer", True, "every on-grid crossing probability inverts uniquely"
    )


@_register("est.determinism")
def _check_est_determinism(scale: float) -> CheckResult:
    cfg = preset_scenario("outdoor")
    stats = _exact_stats(0.8, 0.6, cfg, 4.8e-3)
    a = est.estimate_closed(stats, cfg, _EST_GRID, model_sim_steps=_EST_STEPS)
    b = est.estimate_closed(stats, cfg, _EST_GRID, model_sim_steps=_EST_STEPS)
    return CheckResult("est.determinism", a == b, "identical inputs give identical estimates")
