"""RSSI trace processing: dips in, event sequences out.

A pedestrian blocking a link's line of sight shows up as a dip below the
link's unblocked baseline.  Detection is a baseline-relative threshold
with hysteresis; each contiguous excursion yields one event, timed at its
minimum and quantized to the calibrated one-person/two-person depth
closest to it.  A synthetic trace generator (the exact inverse at zero
noise) makes the whole pipeline testable without hardware.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigError, DegenerateSequenceError, ValidationError
from .simulate import CrossCorrelation, EventSequence, cross_correlation

__all__ = [
    "RssiTrace",
    "CalibrationTable",
    "DipSettings",
    "ExperimentalStats",
    "baseline_from_trace",
    "detect_dips",
    "to_event_sequence",
    "experimental_p_cross",
    "stats_from_events",
    "experiment_stats",
    "synth_rssi",
    "load_calibration",
    "write_calibration",
    "read_rssi_csv",
    "write_rssi_csv",
]


@dataclass(frozen=True)
class RssiTrace:
    """Synchronized two-link RSSI samples on a uniform time grid."""

    t: np.ndarray
    rssi: np.ndarray  # shape (n, 2), dB
    sample_rate: float

    def __post_init__(self):
        t = np.asarray(self.t, dtype=np.float64)
        rssi = np.asarray(self.rssi, dtype=np.float64)
        if rssi.ndim != 2 or rssi.shape[1] != 2:
            raise ValueError("rssi must have shape (n, 2)")
        if len(t) != len(rssi):
            raise ValueError("t and rssi lengths differ")
        if len(t) > 1 and np.any(np.diff(t) <= 0):
            raise ValidationError("t_s", "timestamps must be strictly increasing")
        object.__setattr__(self, "t", t)
        object.__setattr__(self, "rssi", rssi)

    @property
    def duration(self) -> float:
        return len(self.t) / self.sample_rate

    def link(self, link_id: int) -> np.ndarray:
        return self.rssi[:, link_id - 1]


@dataclass(frozen=True)
class CalibrationTable:
    """Unblocked baselines and per-count blockage levels, in dB.

    ``levels[l]`` maps the simultaneous-blocker count l in {1, 2} to the
    (link1, link2) RSSI levels.  More blockers must mean a deeper dip.
    """

    baseline: tuple[float, float]
    levels: dict[int, tuple[float, float]]

    def __post_init__(self):
        if set(self.levels) != {1, 2}:
            raise ValidationError("levels", "calibration needs levels for l in {1, 2}")
        for link in (1, 2):
            base = self.baseline[link - 1]
            r1 = self.levels[1][link - 1]
            r2 = self.levels[2][link - 1]
            if not r2 < r1 < base:
                raise ValidationError(
                    f"r_l_{link}_db",
                    f"need r_2 < r_1 < baseline on link {link}, got {r2}, {r1}, {base}",
                )

    def level_for(self, link: int, count: int) -> float:
        return self.levels[count][link - 1]

    @property
    def max_level(self) -> int:
        return max(self.levels)


@dataclass(frozen=True)
class DipSettings:
    """Dip detector knobs: enter/exit depths relative to the baseline."""

    baseline_db: float | None = None
    threshold_db: float = 6.0
    exit_db: float = 3.0

    def __post_init__(self):
        if self.exit_db > self.threshold_db:
            raise ValidationError("exit_db", "hysteresis exit must not exceed the threshold")


@dataclass(frozen=True)
class ExperimentalStats:
    """Measured crossing probabilities and link cross-correlation."""

    p_exp_link1: float
    p_exp_link2: float
    xcorr: CrossCorrelation | None
    events: tuple[EventSequence, EventSequence]

    @property
    def p_exp_mean(self) -> float:
        return 0.5 * (self.p_exp_link1 + self.p_exp_link2)


def baseline_from_trace(values: np.ndarray) -> float:
    """Robust unblocked level of a calibration segment: the median."""
    values = np.asarray(values, dtype=np.float64)
    values = values[np.isfinite(values)]
    if len(values) == 0:
        raise ValidationError("baseline", "no finite samples to calibrate a baseline from")
    return float(np.median(values))


def detect_dips(
    trace: RssiTrace, link: int, settings: DipSettings
) -> list[tuple[float, float]]:
    """Find (time, depth_db) of every dip on one link.

    An excursion opens when the signal drops at least ``threshold_db``
    below the baseline and closes when it recovers to within ``exit_db``;
    each excursion reports its deepest sample.
    """
    if settings.baseline_db is None:
        raise ValidationError("baseline_db", "dip detection needs a calibrated baseline")
    base = settings.baseline_db
    x = trace.link(link)
    x = np.where(np.isfinite(x), x, base)
    deep = x <= base - settings.threshold_db
    inside = x <= base - settings.exit_db

    dips: list[tuple[float, float]] = []
    edges = np.flatnonzero(np.diff(inside.astype(np.int8)))
    starts = [0] if inside[0] else []
    starts += [int(e) + 1 for e in edges if not inside[e]]
    for start in starts:
        rel_end = np.argmin(inside[start:]) if not inside[start:].all() else len(x) - start
        seg = slice(start, start + int(rel_end))
        if not deep[seg].any():
            continue
        arg = int(np.argmin(x[seg])) + start
        dips.append((float(trace.t[arg]), float(base - x[arg])))
    return dips


def to_event_sequence(
    dips: list[tuple[float, float]],
    calib: CalibrationTable,
    link: int,
    dt: float,
    duration: float,
) -> EventSequence:
    """Quantize dip depths to blocker counts on the step grid.

    The count whose calibrated depth is nearest wins; exact ties go to the
    smaller count (under-counting is the conservative error).
    """
    n = int(round(duration / dt))
    samples = np.zeros(n, np.int64)
    base = calib.baseline[link - 1]
    counts = sorted(calib.levels)
    depths = [base - calib.level_for(link, c) for c in counts]
    for t_dip, depth in dips:
        k = int(t_dip / dt)
        if not 0 <= k < n:
            continue
        best = counts[0]
        best_err = abs(depth - depths[0])
        for c, d in zip(counts[1:], depths[1:]):
            err = abs(depth - d)
            if err < best_err:  # ties keep the smaller count
                best, best_err = c, err
        samples[k] = max(samples[k], best)
    return EventSequence(samples, dt, link_id=link)


def experimental_p_cross(seq: EventSequence) -> float:
    """Fraction of steps with at least one crossing: n_events * dt / T."""
    if seq.duration <= 0:
        raise ValidationError("duration", "empty event sequence")
    return seq.n_events * seq.time_step / seq.duration


def stats_from_events(
    events: tuple[EventSequence, EventSequence], max_lag: int
) -> ExperimentalStats:
    """Crossing probabilities plus cross-correlation for an event pair.

    If a link never fires, the correlation is impossible; the raised
    DegenerateSequenceError carries the computable part in ``partial``.
    """
    p1 = experimental_p_cross(events[0])
    p2 = experimental_p_cross(events[1])
    try:
        xcorr = cross_correlation(events[0], events[1], max_lag)
    except DegenerateSequenceError as exc:
        partial = ExperimentalStats(p1, p2, xcorr=None, events=events)
        raise DegenerateSequenceError(str(exc), partial=partial) from exc
    return ExperimentalStats(p1, p2, xcorr=xcorr, events=events)


def experiment_stats(
    trace: RssiTrace,
    calib: CalibrationTable,
    dt: float,
    settings: DipSettings | None = None,
    max_lag: int | None = None,
) -> ExperimentalStats:
    """Full pipeline: RSSI trace -> dips -> events -> measured statistics."""
    base_settings = settings or DipSettings()
    duration = trace.duration
    events = []
    for link in (1, 2):
        link_settings = DipSettings(
            baseline_db=calib.baseline[link - 1],
            threshold_db=base_settings.threshold_db,
            exit_db=base_settings.exit_db,
        )
        dips = detect_dips(trace, link, link_settings)
        events.append(to_event_sequence(dips, calib, link, dt, duration))
    pair = (events[0], events[1])
    if max_lag is None:
        max_lag = max(1, len(pair[0].samples) // 4)
    return stats_from_events(pair, max_lag)


def synth_rssi(
    events: tuple[EventSequence, EventSequence],
    calib: CalibrationTable,
    upsample: int = 4,
    noise_db: float = 0.0,
    rng: np.random.Generator | int | None = None,
) -> RssiTrace:
    """Idealized trace for an event pair: rectangular dips on a baseline.

    Each event occupies the middle half-step of its own step at the
    calibrated level for its blocker count (capped at the deepest
    calibrated count), so consecutive-step events stay separable as long
    as ``upsample`` >= 3.  Optional white Gaussian noise on top.
    """
    if upsample < 1:
        raise ValidationError("upsample", "must be >= 1")
    if isinstance(rng, (int, np.integer)) or rng is None:
        rng = np.random.default_rng(rng)
    dt = events[0].time_step
    n_steps = len(events[0].samples)
    n = n_steps * upsample
    rate = upsample / dt
    t = np.arange(n) / rate
    rssi = np.empty((n, 2))
    lo = max(1, upsample // 4) if upsample >= 3 else 0
    hi = max(lo + 1, (upsample + 1) // 2 + 1) if upsample >= 3 else upsample
    for link in (1, 2):
        col = np.full(n, calib.baseline[link - 1])
        samples = events[link - 1].samples
        for k in np.flatnonzero(samples):
            level = calib.level_for(link, min(int(samples[k]), calib.max_level))
            col[k * upsample + lo : k * upsample + hi] = level
        rssi[:, link - 1] = col
    if noise_db > 0.0:
        rssi = rssi + rng.normal(0.0, noise_db, size=rssi.shape)
    return RssiTrace(t=t, rssi=rssi, sample_rate=rate)


# --- file formats -----------------------------------------------------------

_CALIB_KEYS = {
    "baseline1_db",
    "baseline2_db",
    "r_1_1_db",
    "r_2_1_db",
    "r_1_2_db",
    "r_2_2_db",
}


def load_calibration(path: str | Path) -> CalibrationTable:
    """Key/value calibration file -> CalibrationTable."""
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read calibration file {path}: {exc}") from exc
    values: dict[str, float] = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected 'key = value'")
        key, _, raw = line.partition("=")
        key = key.strip()
        if key not in _CALIB_KEYS:
            raise ConfigError(f"{path}:{lineno}: unknown key '{key}'")
        try:
            values[key] = float(raw.strip())
        except ValueError:
            raise ConfigError(f"{path}:{lineno}: cannot parse '{raw.strip()}'") from None
    missing = sorted(_CALIB_KEYS - values.keys())
    if missing:
        raise ConfigError(f"{path}: missing keys: {', '.join(missing)}")
    return CalibrationTable(
        baseline=(values["baseline1_db"], values["baseline2_db"]),
        levels={
            1: (values["r_1_1_db"], values["r_1_2_db"]),
            2: (values["r_2_1_db"], values["r_2_2_db"]),
        },
    )


def write_calibration(path: str | Path, calib: CalibrationTable) -> None:
    lines = [
        f"baseline1_db = {calib.baseline[0]!r}",
        f"baseline2_db = {calib.baseline[1]!r}",
        f"r_1_1_db = {calib.levels[1][0]!r}",
        f"r_2_1_db = {calib.levels[2][0]!r}",
        f"r_1_2_db = {calib.levels[1][1]!r}",
        f"r_2_2_db = {calib.levels[2][1]!r}",
    ]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def write_rssi_csv(path: str | Path, trace: RssiTrace, meta: dict | None = None) -> None:
    """RSSI log ``t_s,rssi1_db,rssi2_db``; NaN samples become empty fields."""
    meta = dict(meta or {})
    meta.setdefault("sample_rate_hz", trace.sample_rate)
    with Path(path).open("w", encoding="utf-8", newline="\n") as fh:
        for key, value in meta.items():
            fh.write(f"# {key} = {value}\n")
        fh.write("t_s,rssi1_db,rssi2_db\n")
        for i in range(len(trace.t)):
            cells = []
            for j in range(2):
                v = trace.rssi[i, j]
                cells.append("" if not math.isfinite(v) else f"{v:.4f}")
            fh.write(f"{trace.t[i]:.6f},{cells[0]},{cells[1]}\n")


def read_rssi_csv(path: str | Path) -> tuple[RssiTrace, dict]:
    """Read an RSSI log and regularize it onto a uniform sample grid.

    Jittered timestamps are snapped by nearest sample; missing (empty)
    fields are filled from the nearest sample with data on that link.
    """
    meta: dict[str, str] = {}
    times: list[float] = []
    vals: list[tuple[float, float]] = []
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
                if line != "t_s,rssi1_db,rssi2_db":
                    raise ConfigError(f"unexpected RSSI CSV header: {line}")
                header_seen = True
                continue
            t_raw, c1, c2 = line.split(",")
            times.append(float(t_raw))
            vals.append(
                (float(c1) if c1 else math.nan, float(c2) if c2 else math.nan)
            )
    if not times:
        raise ConfigError(f"{path}: no samples")
    t = np.asarray(times)
    rssi = np.asarray(vals)

    if "sample_rate_hz" in meta:
        rate = float(meta["sample_rate_hz"])
    elif len(t) > 1:
        rate = 1.0 / float(np.median(np.diff(t)))
    else:
        rate = 1.0
    n = max(1, int(round((t[-1] - t[0]) * rate)) + 1)
    grid = t[0] + np.arange(n) / rate
    idx = np.clip(np.searchsorted(t, grid), 1, len(t) - 1)
    nearer_left = (grid - t[idx - 1]) <= (t[idx] - grid)
    idx = np.where(nearer_left, idx - 1, idx)
    out = rssi[idx]
    for j in range(2):
        col = out[:, j]
        bad = ~np.isfinite(col)
        if bad.all():
            continue
        if bad.any():
            good = np.flatnonzero(~bad)
            fill = good[
                np.clip(np.searchsorted(good, np.flatnonzero(bad)), 0, len(good) - 1)
            ]
            col[bad] = col[fill]
    return RssiTrace(t=grid, rssi=out, sample_rate=rate), meta
