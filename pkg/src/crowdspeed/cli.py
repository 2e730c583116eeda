"""Command-line front end for batch experiments and reproduction runs.

Exit codes: 0 success, 2 usage error, 3 data/validation error,
4 numerical failure.  Every artifact embeds the config and seed that
produced it as `# key = value` header lines, so outputs are re-derivable.
"""

from __future__ import annotations

import argparse
import json
import math
import sys
from pathlib import Path

import numpy as np

from . import checks as checks_mod
from . import estimate as est
from . import markov, rssi
from . import simulate as sim
from .errors import (
    AdjacencyError,
    ConfigError,
    ConvergenceError,
    DegenerateSequenceError,
    DisconnectedChainError,
    EstimationError,
    ModelDomainError,
    ValidationError,
)
from .geometry import (
    Scenario,
    ScenarioConfig,
    available_presets,
    load_scenario,
    preset_scenario,
    serialize_scenario,
)

_DATA_ERRORS = (
    ConfigError,
    ValidationError,
    AdjacencyError,
    ModelDomainError,
    DegenerateSequenceError,
    EstimationError,
    DisconnectedChainError,
    FileNotFoundError,
)
_NUMERICAL_ERRORS = (ConvergenceError, np.linalg.LinAlgError, FloatingPointError)

SWEEP_SPEEDS = (0.3, 0.8, 1.6)


def _config_meta(config: ScenarioConfig) -> dict:
    meta = {}
    for line in serialize_scenario(config).splitlines():
        if line.startswith("#") or "=" not in line:
            continue
        key, _, value = line.partition("=")
        meta[key.strip()] = value.strip()
    return meta


def _load_config(args) -> ScenarioConfig:
    if getattr(args, "config", None):
        config = load_scenario(args.config)
    elif getattr(args, "preset", None):
        config = preset_scenario(args.preset)
    else:
        raise ConfigError("provide --config FILE or --preset NAME")
    overrides = {}
    if getattr(args, "seed", None) is not None:
        overrides["rng_seed"] = args.seed
    if getattr(args, "duration_s", None) is not None:
        overrides["duration"] = args.duration_s
    if getattr(args, "n", None) is not None:
        overrides["population"] = float(args.n)
    if getattr(args, "theta_max_deg", None) is not None:
        overrides["theta_max"] = math.radians(args.theta_max_deg)
    return config.with_overrides(**overrides) if overrides else config


def _grid(args) -> est.SpeedGrid:
    return est.SpeedGrid.default(args.grid_min, args.grid_max, args.grid_step)


def _default_calibration() -> rssi.CalibrationTable:
    # representative single/double blockage depths for synthetic traces
    return rssi.CalibrationTable(
        baseline=(-40.0, -41.0), levels={1: (-55.0, -56.5), 2: (-62.0, -63.0)}
    )


def _load_calibration(args) -> rssi.CalibrationTable:
    if getattr(args, "calibration", None):
        return rssi.load_calibration(args.calibration)
    return _default_calibration()


def _dip_settings(args) -> rssi.DipSettings:
    threshold = getattr(args, "dip_threshold_db", None)
    if threshold is None:
        return rssi.DipSettings()
    return rssi.DipSettings(threshold_db=threshold, exit_db=min(3.0, threshold / 2))


def _xcorr_json(xcorr: sim.CrossCorrelation | None) -> dict | None:
    if xcorr is None:
        return None
    return {"lags": xcorr.lags.tolist(), "values": [round(v, 6) for v in xcorr.values]}


# --- subcommands ------------------------------------------------------------


def cmd_simulate(args) -> int:
    config = _load_config(args)
    meta = _config_meta(config)
    collect = args.trajectories is not None
    if config.motion.scenario is Scenario.CLOSED:
        result = sim.simulate_closed(config, collect_trajectories=collect)
    else:
        result = sim.simulate_open(config, collect_trajectories=collect)
    sim.write_event_csv(args.out, result.events, meta)
    print(f"wrote {args.out} ({result.events[0].n_events}/{result.events[1].n_events} events per link)")
    if collect:
        sim.write_trajectory_csv(
            args.trajectories, result.trajectories, config.motion.time_step, meta
        )
        print(f"wrote {args.trajectories}")
    if args.rssi is not None:
        calib = _load_calibration(args)
        trace = rssi.synth_rssi(
            result.events, calib, noise_db=args.noise_db, rng=config.rng_seed
        )
        rssi.write_rssi_csv(args.rssi, trace, meta)
        print(f"wrote {args.rssi}")
    return 0


def _stats_from_args(args, config: ScenarioConfig) -> rssi.ExperimentalStats:
    dt = config.motion.time_step
    if getattr(args, "events", None):
        events, _ = sim.read_event_csv(args.events)
        max_lag = args.max_lag or sim.default_max_lag(
            config.geometry, dt, len(events[0].samples), args.grid_min
        )
        return rssi.stats_from_events(events, max_lag)
    if not getattr(args, "rssi", None):
        raise ConfigError("provide --rssi (with --calibration) or --events")
    trace, _ = rssi.read_rssi_csv(args.rssi)
    calib = _load_calibration(args)
    max_lag = args.max_lag or sim.default_max_lag(
        config.geometry, dt, int(round(trace.duration / dt)), args.grid_min
    )
    return rssi.experiment_stats(trace, calib, dt, _dip_settings(args), max_lag)


def cmd_analyze(args) -> int:
    config = _load_config(args)
    try:
        stats = _stats_from_args(args, config)
    except DegenerateSequenceError as exc:
        if exc.partial is None:
            raise
        report = {
            "error": str(exc),
            "p_exp_link1": exc.partial.p_exp_link1,
            "p_exp_link2": exc.partial.p_exp_link2,
            "p_exp_mean": exc.partial.p_exp_mean,
        }
        print(json.dumps(report, indent=2))
        print(f"error: {exc}", file=sys.stderr)
        return 3
    report = {
        "config": _config_meta(config),
        "p_exp_link1": stats.p_exp_link1,
        "p_exp_link2": stats.p_exp_link2,
        "p_exp_mean": stats.p_exp_mean,
        "implied_rate_per_s": stats.p_exp_mean / config.motion.time_step,
        "events_link1": stats.events[0].n_events,
        "events_link2": stats.events[1].n_events,
        "cross_correlation": _xcorr_json(stats.xcorr),
    }
    text = json.dumps(report, indent=2)
    if args.out:
        Path(args.out).write_text(text + "\n", encoding="utf-8")
        print(f"wrote {args.out}")
    else:
        print(text)
    return 0


def cmd_estimate(args) -> int:
    config = _load_config(args)
    stats = _stats_from_args(args, config)
    grid = _grid(args)
    if config.motion.scenario is Scenario.CLOSED:
        estimate = est.estimate_closed(stats, config, grid, model_sim_steps=args.model_steps)
    else:
        estimate = est.estimate_open(
            stats, config, grid,
            single_region=args.single_region, model_sim_steps=args.model_steps,
        )
    report = {
        "config": _config_meta(config),
        "v1_hat_mps": estimate.v1_hat,
        "v2_hat_mps": estimate.v2_hat,
        "labels": [label.value for label in estimate.labels],
        "lambda_hat_per_s": estimate.lambda_hat,
        "xcorr_residual": estimate.xcorr_residual,
        "pc_residual": estimate.pc_residual,
        "p_exp_mean": stats.p_exp_mean,
    }
    text = json.dumps(report, indent=2)
    if args.out:
        Path(args.out).write_text(text + "\n", encoding="utf-8")
        print(f"wrote {args.out}")
    else:
        print(text)
    return 0


def cmd_calibrate_check(args) -> int:
    calib = rssi.load_calibration(args.calibration)
    for link in (1, 2):
        base = calib.baseline[link - 1]
        depths = {l: base - calib.level_for(link, l) for l in sorted(calib.levels)}
        print(
            f"link {link}: baseline {base:.1f} dB, "
            + ", ".join(f"{l} blocker(s) {d:.1f} dB deep" for l, d in depths.items())
        )
    print("calibration ok")
    return 0


def cmd_validate(args) -> int:
    if args.list:
        for name in checks_mod.available_checks():
            print(name)
        return 0
    if args.dump_matrices:
        out_dir = Path(args.dump_matrices)
        out_dir.mkdir(parents=True, exist_ok=True)
        config = _load_config(args) if (args.config or args.preset) else preset_scenario("outdoor")
        chain = markov.build_position_chain(config)
        fmt = args.matrix_format
        ext = "txt"
        markov.write_matrix_text(out_dir / f"position_chain.{ext}", chain.transition_matrix, fmt)
        s11, s22 = markov.stochastic_complements(chain)
        markov.write_matrix_text(out_dir / f"complement_s11.{ext}", s11, fmt)
        markov.write_matrix_text(out_dir / f"complement_s22.{ext}", s22, fmt)
        markov.write_matrix_text(out_dir / f"aggregated.{ext}", markov.aggregated_chain(chain), fmt)
        print(f"wrote chain matrices to {out_dir}")
    try:
        results = checks_mod.run_checks(args.checks or None, scale=args.scale)
    except KeyError as exc:
        print(f"error: {exc.args[0]}", file=sys.stderr)
        return 2
    failed = 0
    for result in results:
        mark = "PASS" if result.passed else "FAIL"
        print(f"[{mark}] {result.name}: {result.detail}")
        failed += not result.passed
    print(f"{len(results) - failed}/{len(results)} checks passed")
    return 0 if failed == 0 else 3


def cmd_sweep(args) -> int:
    config = _load_config(args)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    grid = _grid(args)
    calib = _load_calibration(args)

    if args.theta_sweep:
        thetas = [math.radians(float(tok)) for tok in args.theta_sweep.split(",")]
        result = sim.simulate_closed(config)
        trace = rssi.synth_rssi(result.events, calib, noise_db=args.noise_db, rng=config.rng_seed)
        max_lag = args.max_lag or sim.default_max_lag(
            config.geometry, config.motion.time_step, len(result.events[0].samples), args.grid_min
        )
        stats = rssi.experiment_stats(trace, calib, config.motion.time_step, max_lag=max_lag)
        table = est.sensitivity_sweep(stats, config, grid, thetas, model_sim_steps=args.model_steps)
        path = out_dir / "theta_sensitivity.csv"
        meta = _config_meta(config)
        with path.open("w", encoding="utf-8", newline="\n") as fh:
            for key, value in meta.items():
                fh.write(f"# {key} = {value}\n")
            fh.write("theta_max_deg,nmse\n")
            for theta, nmse in table:
                fh.write(f"{math.degrees(theta):.1f},{nmse:.6g}\n")
        print(f"wrote {path}")
        return 0

    rows = []
    for i, v1 in enumerate(SWEEP_SPEEDS):
        for j, v2 in enumerate(SWEEP_SPEEDS):
            run_cfg = config.with_overrides(
                speed_region1=v1, speed_region2=v2,
                rng_seed=config.rng_seed + 10 * i + j,
            )
            result = sim.simulate_closed(run_cfg)
            trace = rssi.synth_rssi(
                result.events, calib, noise_db=args.noise_db, rng=run_cfg.rng_seed
            )
            max_lag = args.max_lag or sim.default_max_lag(
                run_cfg.geometry, run_cfg.motion.time_step,
                len(result.events[0].samples), args.grid_min,
            )
            stats = rssi.experiment_stats(trace, calib, run_cfg.motion.time_step, max_lag=max_lag)
            estimate = est.estimate_closed(stats, run_cfg, grid, model_sim_steps=args.model_steps)
            rows.append((f"v{v1}-{v2}", (v1, v2), estimate))
            print(
                f"({v1}, {v2}) -> ({estimate.v1_hat}, {estimate.v2_hat}) "
                f"[{estimate.labels[0].value}, {estimate.labels[1].value}]"
            )
    meta = _config_meta(config)
    report_path = out_dir / "speed_sweep.csv"
    est.write_report_csv(report_path, rows, meta)
    report = est.evaluate([(truth, e) for _, truth, e in rows])
    cdf_path = out_dir / "nse_cdf.csv"
    est.write_nse_cdf_csv(cdf_path, report.nse_samples, meta)
    print(f"wrote {report_path} and {cdf_path}")
    print(
        f"nmse v1 {report.nmse_v1:.4f}, v2 {report.nmse_v2:.4f}, any {report.nmse_any:.4f}; "
        f"classification {report.classification_accuracy:.1%}"
    )
    return 0


# --- parser -----------------------------------------------------------------


def _add_config_flags(p: argparse.ArgumentParser):
    p.add_argument("--config", help="scenario config file")
    p.add_argument("--preset", help=f"bundled scenario ({', '.join(available_presets())})")
    p.add_argument("--seed", type=int, help="override the config seed")
    p.add_argument("--duration-s", type=float, help="override the duration")
    p.add_argument("--n", type=float, help="override the head count / average occupancy")
    p.add_argument("--theta-max-deg", type=float, help="override the heading half-width")


def _add_grid_flags(p: argparse.ArgumentParser):
    p.add_argument("--grid-min", type=float, default=0.1, help="slowest candidate speed (m/s)")
    p.add_argument("--grid-max", type=float, default=2.5, help="fastest candidate speed (m/s)")
    p.add_argument("--grid-step", type=float, default=0.1, help="candidate speed spacing (m/s)")
    p.add_argument("--max-lag", type=int, help="correlation window in steps")
    p.add_argument(
        "--model-steps", type=int, default=sim.MODEL_SIM_STEPS,
        help="steps per single-walker model simulation",
    )


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="crowdspeed",
        description="Estimate region-dependent crowd speeds from paired-link crossing data.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="run a scenario and write event sequences")
    _add_config_flags(p)
    p.add_argument("--out", default="events.csv", help="event-sequence CSV path")
    p.add_argument("--trajectories", help="also dump per-walker trajectories (CSV)")
    p.add_argument("--rssi", help="also synthesize an RSSI trace (CSV)")
    p.add_argument("--calibration", help="calibration file for the synthetic trace")
    p.add_argument("--noise-db", type=float, default=0.0, help="synthetic trace noise sigma")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("analyze", help="RSSI trace or events -> measured statistics")
    _add_config_flags(p)
    _add_grid_flags(p)
    p.add_argument("--rssi", help="RSSI CSV (t_s,rssi1_db,rssi2_db)")
    p.add_argument("--calibration", help="calibration key/value file")
    p.add_argument("--events", help="event CSV instead of raw RSSI")
    p.add_argument("--dip-threshold-db", type=float, help="dip entry threshold below baseline")
    p.add_argument("--out", help="write the JSON report here instead of stdout")
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("estimate", help="estimate region speeds (and rate for open areas)")
    _add_config_flags(p)
    _add_grid_flags(p)
    p.add_argument("--rssi", help="RSSI CSV input")
    p.add_argument("--calibration", help="calibration key/value file")
    p.add_argument("--events", help="event CSV instead of raw RSSI")
    p.add_argument("--dip-threshold-db", type=float)
    p.add_argument(
        "--single-region", action="store_true",
        help="open areas: treat the whole area as one region (v1 = v2)",
    )
    p.add_argument("--out", help="write the JSON report here instead of stdout")
    p.set_defaults(func=cmd_estimate)

    p = sub.add_parser("calibrate-check", help="validate a calibration file")
    p.add_argument("--calibration", required=True)
    p.set_defaults(func=cmd_calibrate_check)

    p = sub.add_parser("validate", help="run the invariant suite")
    _add_config_flags(p)
    p.add_argument("--checks", nargs="*", help="subset of check names")
    p.add_argument("--scale", type=float, default=1.0, help="Monte Carlo size multiplier")
    p.add_argument("--list", action="store_true", help="list check names and exit")
    p.add_argument("--dump-matrices", help="directory for chain-matrix dumps")
    p.add_argument("--matrix-format", choices=("dense", "triplet"), default="dense")
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("sweep", help="9-pair estimation sweep or theta sensitivity table")
    _add_config_flags(p)
    _add_grid_flags(p)
    p.add_argument("--calibration")
    p.add_argument("--noise-db", type=float, default=1.0, help="synthetic trace noise sigma")
    p.add_argument("--theta-sweep", help="comma list of assumed theta_max values (degrees)")
    p.add_argument("--out-dir", default=".", help="directory for report CSVs")
    p.set_defaults(func=cmd_sweep)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except _DATA_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except _NUMERICAL_ERRORS as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
