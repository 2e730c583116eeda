"""Discrete-time Monte Carlo simulation of pedestrians in two regions.

Walkers keep their heading with probability p per step, otherwise redraw
it uniformly from the allowed interval(s); they advance with the speed of
the region their x position is in.  Closed areas reflect walkers off all
four walls like rays; open areas spawn Poisson arrivals that flow forward
and leave at the far end.  The per-link outputs are event sequences
Y(k) = number of walkers whose x straddled the link between steps k and
k+1; their cross-correlation is the estimator's forward model.
"""

from __future__ import annotations

import math
import threading
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import _kernels
from .errors import DegenerateSequenceError, ValidationError
from .geometry import AreaGeometry, DirectionMode, MotionParams, Scenario, ScenarioConfig

__all__ = [
    "PedestrianState",
    "EventSequence",
    "CrossCorrelation",
    "Trajectory",
    "ClosedSimResult",
    "OpenSimResult",
    "step",
    "simulate_closed",
    "simulate_open",
    "cross_correlation",
    "default_max_lag",
    "model_cross_correlation",
    "clear_model_cache",
    "write_event_csv",
    "read_event_csv",
    "write_trajectory_csv",
]

DEFAULT_BURN_IN = 10_000
MODEL_SIM_STEPS = 200_000
GRID_MIN_SPEED = 0.1
_MODEL_STREAM_SEED = 815  # model tables are parameter-keyed, not experiment-seeded
_CHUNK = 1 << 20


@dataclass(frozen=True)
class PedestrianState:
    """Position, heading (radians) and flow direction of one walker."""

    x: float
    y: float
    heading: float
    direction_sign: int = 1


@dataclass(frozen=True)
class EventSequence:
    """Per-step simultaneous-blockage counts for one link."""

    samples: np.ndarray
    time_step: float
    link_id: int

    def __post_init__(self):
        samples = np.asarray(self.samples)
        if samples.ndim != 1:
            raise ValueError("event samples must be one-dimensional")
        if samples.size and samples.min() < 0:
            raise ValueError("event counts cannot be negative")
        object.__setattr__(self, "samples", samples)

    @property
    def duration(self) -> float:
        return len(self.samples) * self.time_step

    @property
    def n_events(self) -> int:
        return int(np.count_nonzero(self.samples))


@dataclass(frozen=True)
class CrossCorrelation:
    """Pearson correlation of two event sequences at step lags >= 0."""

    lags: np.ndarray
    values: np.ndarray


@dataclass(frozen=True)
class Trajectory:
    """Recorded path of one walker at the simulation time step."""

    ped_id: int
    start_step: int
    x: np.ndarray
    y: np.ndarray
    heading: np.ndarray


@dataclass(frozen=True)
class ClosedSimResult:
    events: tuple[EventSequence, EventSequence]
    trajectories: list[Trajectory] | None
    population: int


@dataclass(frozen=True)
class OpenSimResult:
    events: tuple[EventSequence, EventSequence]
    trajectories: list[Trajectory] | None
    occupancy: np.ndarray
    arrivals: int
    departures: int

    @property
    def population_end(self) -> int:
        return self.arrivals - self.departures


def _stream(seed: int, *key: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=key))


def _draw_heading(rng, motion: MotionParams, direction_sign: int = 0) -> tuple[float, float]:
    """One heading draw as (cos, sin); direction_sign 0 means both lobes."""
    local = rng.uniform(-motion.theta_max, motion.theta_max)
    if direction_sign == 0:
        sgn = 1.0 if rng.random() < 0.5 else -1.0
    else:
        sgn = float(direction_sign)
    return math.cos(local) * sgn, math.sin(local) * sgn


def _heading_arrays(rng, motion: MotionParams, n: int, direction_sign: int = 0):
    """Precomputed per-step draws: keep-uniform, fresh cos, fresh sin."""
    u = rng.random(n)
    local = rng.uniform(-motion.theta_max, motion.theta_max, n)
    if direction_sign == 0:
        sgn = np.where(rng.random(n) < 0.5, 1.0, -1.0)
    else:
        sgn = float(direction_sign)
    return u, np.cos(local) * sgn, np.sin(local) * sgn


def step(
    state: PedestrianState, motion: MotionParams, geom: AreaGeometry, rng
) -> PedestrianState:
    """Reference single-step update (the kernels implement the same rules).

    Bidirectional walkers reflect off all four walls, flipping the heading
    component like a ray; forward-only walkers reflect off the y walls only
    and may leave the x range, which signals an exit to the caller.
    """
    v = motion.speed_region1 if state.x < geom.region1_width else motion.speed_region2
    dt = motion.time_step
    b = geom.total_width
    ell = geom.corridor_length
    c = math.cos(state.heading)
    s = math.sin(state.heading)
    xn = state.x + v * dt * c
    yn = state.y + v * dt * s
    if motion.direction_mode is DirectionMode.BIDIRECTIONAL:
        while xn < 0.0 or xn > b:
            xn = -xn if xn < 0.0 else 2.0 * b - xn
            c = -c
    while yn < 0.0 or yn > ell:
        yn = -yn if yn < 0.0 else 2.0 * ell - yn
        s = -s
    if rng.random() >= motion.heading_persistence:
        sign = 0 if motion.direction_mode is DirectionMode.BIDIRECTIONAL else state.direction_sign
        c, s = _draw_heading(rng, motion, sign)
    return PedestrianState(xn, yn, math.atan2(s, c), state.direction_sign)


def _n_steps(config: ScenarioConfig) -> int:
    n = int(round(config.duration / config.motion.time_step))
    if n < 1:
        raise ValidationError("duration_s", "shorter than one time step")
    return n


def simulate_closed(
    config: ScenarioConfig,
    burn_in_steps: int = DEFAULT_BURN_IN,
    collect_trajectories: bool = False,
) -> ClosedSimResult:
    """Run a fixed population of independent walkers in the closed area.

    Each walker gets its own random stream derived from (seed, walker id),
    so runs with different population sizes share the streams of the
    walkers they have in common.  Initial states are drawn uniformly and a
    burn-in is discarded before event statistics start.
    """
    if config.motion.scenario is not Scenario.CLOSED:
        raise ValidationError("scenario", "simulate_closed needs a closed scenario")
    motion = config.motion
    geom = config.geometry
    dt = motion.time_step
    b1 = geom.region1_width
    b = geom.total_width
    ell = geom.corridor_length
    x1, x2 = geom.link_positions
    n_steps = _n_steps(config)
    n_people = int(config.population)

    y1 = np.zeros(n_steps, np.int64)
    y2 = np.zeros(n_steps, np.int64)
    trajectories: list[Trajectory] | None = [] if collect_trajectories else None

    for j in range(n_people):
        rng = _stream(config.rng_seed, 0, j)
        x = rng.uniform(0.0, b)
        yy = rng.uniform(0.0, ell)
        c, s = _draw_heading(rng, motion)
        if collect_trajectories:
            xs = np.empty(n_steps + 1)
            ys = np.empty(n_steps + 1)
            cs = np.empty(n_steps + 1)
            ss = np.empty(n_steps + 1)
        total = burn_in_steps + n_steps
        done = 0
        while done < total:
            m = min(_CHUNK, total - done)
            u, cf, sf = _heading_arrays(rng, motion, m)
            if collect_trajectories:
                x, yy, c, s = _kernels.walk_closed_traj(
                    x, yy, c, s, u, cf, sf, motion.heading_persistence,
                    motion.speed_region1, motion.speed_region2, dt, b1, b, ell,
                    x1, x2, done, burn_in_steps, y1, y2, xs, ys, cs, ss,
                )
            else:
                x, c = _kernels.walk_closed(
                    x, c, u, cf, motion.heading_persistence,
                    motion.speed_region1, motion.speed_region2, dt, b1, b,
                    x1, x2, done, burn_in_steps, y1, y2,
                )
            done += m
        if collect_trajectories:
            trajectories.append(
                Trajectory(ped_id=j, start_step=0, x=xs, y=ys, heading=np.arctan2(ss, cs))
            )

    events = (
        EventSequence(y1, dt, link_id=1),
        EventSequence(y2, dt, link_id=2),
    )
    return ClosedSimResult(events=events, trajectories=trajectories, population=n_people)


def simulate_open(
    config: ScenarioConfig,
    entrance_split: float = 0.5,
    collect_trajectories: bool = False,
) -> OpenSimResult:
    """Poisson arrivals flowing forward through the area.

    Arrivals form one Poisson process of the configured total rate and
    enter at x=0 with probability ``entrance_split``, else at the far end
    heading backwards.  A walker leaves when it reaches the opposite
    boundary; walls along y still reflect.
    """
    if config.motion.scenario is not Scenario.OPEN:
        raise ValidationError("scenario", "simulate_open needs an open scenario")
    if not 0.0 <= entrance_split <= 1.0:
        raise ValidationError("entrance_split", "must be in [0, 1]")
    motion = config.motion
    geom = config.geometry
    dt = motion.time_step
    b1 = geom.region1_width
    b = geom.total_width
    ell = geom.corridor_length
    x1, x2 = geom.link_positions
    horizon = _n_steps(config)

    arr_rng = _stream(config.rng_seed, 1, 0)
    arrivals: list[tuple[int, int]] = []
    t = 0.0
    while True:
        t += arr_rng.exponential(1.0 / motion.arrival_rate)
        if t >= config.duration:
            break
        sign = 1 if arr_rng.random() < entrance_split else -1
        arrivals.append((int(t / dt), sign))

    y1 = np.zeros(horizon, np.int64)
    y2 = np.zeros(horizon, np.int64)
    occupancy = np.zeros(horizon, np.int64)
    trajectories: list[Trajectory] | None = [] if collect_trajectories else None
    dummy = np.empty(0)
    departures = 0

    for j, (start, sign) in enumerate(arrivals):
        rng = _stream(config.rng_seed, 2, j)
        x = 0.0 if sign > 0 else b
        yy = rng.uniform(0.0, ell)
        c, s = _draw_heading(rng, motion, sign)
        k = start
        exited = False
        chunks: list[tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]] = []
        while not exited and k < horizon:
            m = min(4096, horizon - k)
            u, cf, sf = _heading_arrays(rng, motion, m, sign)
            if collect_trajectories:
                xs = np.empty(m)
                ys = np.empty(m)
                cs = np.empty(m)
                ss = np.empty(m)
            else:
                xs = ys = cs = ss = dummy
            x, yy, c, s, taken, exited = _kernels.walk_open(
                x, yy, c, s, sign, u, cf, sf, motion.heading_persistence,
                motion.speed_region1, motion.speed_region2, dt, b1, b, ell,
                x1, x2, k, y1, y2, 1 if collect_trajectories else 0, xs, ys, cs, ss,
            )
            if collect_trajectories and taken:
                chunks.append((xs[:taken], ys[:taken], cs[:taken], ss[:taken]))
            k += taken
            if taken == 0:
                break
        occupancy[start : min(k, horizon)] += 1
        if exited:
            departures += 1
        if collect_trajectories and chunks:
            xs = np.concatenate([ch[0] for ch in chunks])
            ys = np.concatenate([ch[1] for ch in chunks])
            heading = np.arctan2(
                np.concatenate([ch[3] for ch in chunks]),
                np.concatenate([ch[2] for ch in chunks]),
            )
            trajectories.append(
                Trajectory(ped_id=j, start_step=start, x=xs, y=ys, heading=heading)
            )

    events = (
        EventSequence(y1, dt, link_id=1),
        EventSequence(y2, dt, link_id=2),
    )
    return OpenSimResult(
        events=events,
        trajectories=trajectories,
        occupancy=occupancy,
        arrivals=len(arrivals),
        departures=departures,
    )


def cross_correlation(a: EventSequence, b: EventSequence, max_lag: int) -> CrossCorrelation:
    """Sample Pearson cross-correlation at lags 0..max_lag.

    Lag tau correlates a(k) with b(k+tau) over the overlapping window,
    using that window's own means and variances.  Windows whose variance
    vanishes (no events left) contribute 0.  Raises
    DegenerateSequenceError when either full sequence is constant.
    """
    if len(a.samples) != len(b.samples):
        raise ValueError("event sequences must have equal length")
    if a.time_step != b.time_step:
        raise ValueError("event sequences must share the time step")
    if max_lag < 0:
        raise ValueError("max_lag must be >= 0")
    y1 = a.samples.astype(np.float64)
    y2 = b.samples.astype(np.float64)
    for seq, arr in ((a, y1), (b, y2)):
        if np.all(arr == arr[0]):
            raise DegenerateSequenceError(
                f"link {seq.link_id} sequence is constant; correlation undefined"
            )
    n = len(y1)
    lag = min(int(max_lag), n - 1)

    nfft = 1
    while nfft < n + lag + 1:
        nfft <<= 1
    cross = np.fft.irfft(
        np.conj(np.fft.rfft(y1, nfft)) * np.fft.rfft(y2, nfft), nfft
    )[: lag + 1]

    pre1 = np.concatenate([[0.0], np.cumsum(y1)])
    pre1_sq = np.concatenate([[0.0], np.cumsum(y1 * y1)])
    pre2 = np.concatenate([[0.0], np.cumsum(y2)])
    pre2_sq = np.concatenate([[0.0], np.cumsum(y2 * y2)])
    taus = np.arange(lag + 1)
    m = (n - taus).astype(np.float64)
    mean1 = pre1[n - taus] / m
    mean2 = (pre2[n] - pre2[taus]) / m
    var1 = np.clip(pre1_sq[n - taus] / m - mean1**2, 0.0, None)
    var2 = np.clip((pre2_sq[n] - pre2_sq[taus]) / m - mean2**2, 0.0, None)
    cov = cross / m - mean1 * mean2
    denom = np.sqrt(var1 * var2)
    values = np.divide(cov, denom, out=np.zeros_like(cov), where=denom > 0.0)
    np.clip(values, -1.0, 1.0, out=values)
    return CrossCorrelation(lags=taus, values=values)


def default_max_lag(
    geom: AreaGeometry, dt: float, n_samples: int, v_min: float = GRID_MIN_SPEED
) -> int:
    """Lag window: three region-1 transits at the slowest candidate speed,
    capped at a quarter of the sequence."""
    travel = math.ceil(3.0 * (geom.region1_width / v_min) / dt)
    return max(1, min(travel, n_samples // 4))


_model_cache: dict[tuple, CrossCorrelation] = {}
_model_lock = threading.Lock()


def clear_model_cache() -> None:
    with _model_lock:
        _model_cache.clear()


def _model_events_closed(v1, v2, config, sim_steps):
    motion = config.motion
    geom = config.geometry
    rng = _stream(_MODEL_STREAM_SEED, int(round(v1 * 1e6)), int(round(v2 * 1e6)))
    y1 = np.zeros(sim_steps, np.int64)
    y2 = np.zeros(sim_steps, np.int64)
    x = rng.uniform(0.0, geom.total_width)
    c, s = _draw_heading(rng, motion)
    total = DEFAULT_BURN_IN + sim_steps
    done = 0
    while done < total:
        m = min(_CHUNK, total - done)
        u, cf, _ = _heading_arrays(rng, motion, m)
        x, c = _kernels.walk_closed(
            x, c, u, cf, motion.heading_persistence, v1, v2, motion.time_step,
            geom.region1_width, geom.total_width, *geom.link_positions,
            done, DEFAULT_BURN_IN, y1, y2,
        )
        done += m
    return y1, y2


def _model_events_open(v1, v2, config, sim_steps):
    # Back-to-back forward transits of a lone walker: the correlation shape
    # is set by the transit dynamics, which is all the estimator matches.
    motion = config.motion
    geom = config.geometry
    dt = motion.time_step
    rng = _stream(_MODEL_STREAM_SEED, int(round(v1 * 1e6)), int(round(v2 * 1e6)))
    y1 = np.zeros(sim_steps, np.int64)
    y2 = np.zeros(sim_steps, np.int64)
    dummy = np.empty(0)
    k = 0
    while k < sim_steps:
        sign = 1 if rng.random() < 0.5 else -1
        x = 0.0 if sign > 0 else geom.total_width
        yy = rng.uniform(0.0, geom.corridor_length)
        c, s = _draw_heading(rng, motion, sign)
        exited = False
        while not exited and k < sim_steps:
            m = min(4096, sim_steps - k)
            u, cf, sf = _heading_arrays(rng, motion, m, sign)
            x, yy, c, s, taken, exited = _kernels.walk_open(
                x, yy, c, s, sign, u, cf, sf, motion.heading_persistence,
                v1, v2, dt, geom.region1_width, geom.total_width,
                geom.corridor_length, *geom.link_positions,
                k, y1, y2, 0, dummy, dummy, dummy, dummy,
            )
            k += taken
            if taken == 0 and not exited:
                break
    return y1, y2


def model_cross_correlation(
    v1: float,
    v2: float,
    config: ScenarioConfig,
    sim_steps: int = MODEL_SIM_STEPS,
    max_lag: int | None = None,
) -> CrossCorrelation:
    """Single-walker cross-correlation model for a candidate speed pair.

    The correlation does not depend on the population, so one walker
    suffices.  Results are cached per (speeds, geometry, theta_max, p, dt,
    scenario kind, length) with a fixed internal stream per speed pair,
    making repeated grid searches deterministic and cheap.
    """
    motion = config.motion
    geom = config.geometry
    if max_lag is None:
        max_lag = default_max_lag(geom, motion.time_step, sim_steps)
    key = (
        round(v1, 9),
        round(v2, 9),
        geom.region1_width,
        geom.region2_width,
        geom.link_positions,
        round(motion.theta_max, 12),
        motion.heading_persistence,
        motion.time_step,
        motion.scenario.value,
        sim_steps,
        max_lag,
    )
    with _model_lock:
        hit = _model_cache.get(key)
    if hit is not None:
        return hit

    if motion.scenario is Scenario.CLOSED:
        y1, y2 = _model_events_closed(v1, v2, config, sim_steps)
    else:
        y1, y2 = _model_events_open(v1, v2, config, sim_steps)
    events = (
        EventSequence(y1, motion.time_step, link_id=1),
        EventSequence(y2, motion.time_step, link_id=2),
    )
    try:
        corr = cross_correlation(events[0], events[1], max_lag)
    except DegenerateSequenceError as exc:
        raise DegenerateSequenceError(
            f"model run for (v1={v1}, v2={v2}) produced no usable crossings; "
            f"increase sim_steps (was {sim_steps})"
        ) from exc
    with _model_lock:
        _model_cache[key] = corr
    return corr


# --- CSV artifacts ----------------------------------------------------------


def _write_meta(fh, meta: dict | None):
    for key, value in (meta or {}).items():
        fh.write(f"# {key} = {value}\n")


def write_event_csv(
    path: str | Path, events: tuple[EventSequence, EventSequence], meta: dict | None = None
) -> None:
    """Event pair as CSV ``t_s,link1,link2``; metadata in `#` header lines."""
    e1, e2 = events
    meta = dict(meta or {})
    meta.setdefault("dt_s", e1.time_step)
    with Path(path).open("w", encoding="utf-8", newline="\n") as fh:
        _write_meta(fh, meta)
        fh.write("t_s,link1,link2\n")
        for k in range(len(e1.samples)):
            fh.write(f"{k * e1.time_step:.6f},{e1.samples[k]},{e2.samples[k]}\n")


def read_event_csv(path: str | Path) -> tuple[tuple[EventSequence, EventSequence], dict]:
    """Inverse of write_event_csv."""
    meta: dict[str, str] = {}
    rows1: list[int] = []
    rows2: list[int] = []
    with Path(path).open("r", encoding="utf-8") as fh:
        header_seen = False
        for line in fh:
            line = line.strip()
            if not line:
                continue
            if line.startswith("#"):
                body = line[1:].strip()
                if "=" in body:
                    key, _, value = body.partition("=")
                    meta[key.strip()] = value.strip()
                continue
            if not header_seen:
                if line != "t_s,link1,link2":
                    raise ValueError(f"unexpected event CSV header: {line}")
                header_seen = True
                continue
            _, c1, c2 = line.split(",")
            rows1.append(int(c1))
            rows2.append(int(c2))
    dt = float(meta.get("dt_s", "nan"))
    if not math.isfinite(dt):
        raise ValueError("event CSV is missing the dt_s metadata line")
    return (
        (
            EventSequence(np.array(rows1, np.int64), dt, link_id=1),
            EventSequence(np.array(rows2, np.int64), dt, link_id=2),
        ),
        meta,
    )


def write_trajectory_csv(
    path: str | Path, trajectories: list[Trajectory], dt: float, meta: dict | None = None
) -> None:
    """Trajectory dump ``t_s,ped_id,x_m,y_m,theta_rad`` (debug artifact)."""
    with Path(path).open("w", encoding="utf-8", newline="\n") as fh:
        _write_meta(fh, meta)
        fh.write("t_s,ped_id,x_m,y_m,theta_rad\n")
        for traj in trajectories:
            for i in range(len(traj.x)):
                t = (traj.start_step + i) * dt
                fh.write(
                    f"{t:.6f},{traj.ped_id},{traj.x[i]:.6f},{traj.y[i]:.6f},"
                    f"{traj.heading[i]:.6f}\n"
                )
