"""Workspace description and scenario configuration.

A scenario is a rectangular corridor split into two adjacent regions along
the x-axis.  Two sensing links sit in region 1, parallel to the y-axis.
Pedestrians walk with a region-dependent speed; the corridor is either
closed (fixed population bouncing around) or open (arrivals flowing
through).  Everything downstream - the chain oracle, the simulator, the
estimator - consumes the types defined here.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from enum import Enum
from importlib import resources
from pathlib import Path

from .errors import ConfigError, ValidationError

__all__ = [
    "AreaGeometry",
    "MotionParams",
    "ScenarioConfig",
    "Scenario",
    "DirectionMode",
    "load_scenario",
    "parse_scenario",
    "serialize_scenario",
    "preset_scenario",
    "available_presets",
]


class Scenario(Enum):
    CLOSED = "closed"
    OPEN = "open"


class DirectionMode(Enum):
    BIDIRECTIONAL = "bidirectional"
    FORWARD_ONLY = "forward-only"


@dataclass(frozen=True)
class AreaGeometry:
    """Two-region corridor with a pair of link x-positions in region 1.

    Units are metres throughout.  Region 1 spans ``[0, region1_width)``,
    region 2 spans ``[region1_width, total_width]``.
    """

    region1_width: float
    region2_width: float
    corridor_length: float
    link_positions: tuple[float, float]

    def __post_init__(self):
        if not self.region1_width > 0:
            raise ValidationError("region1_width", "must be > 0")
        if not self.region2_width > 0:
            raise ValidationError("region2_width", "must be > 0")
        if not self.corridor_length > 0:
            raise ValidationError("corridor_length", "must be > 0")
        if len(self.link_positions) != 2:
            raise ValidationError("link_positions", "exactly two link positions required")
        x1, x2 = self.link_positions
        if not (0 < x1 < x2 < self.region1_width):
            raise ValidationError(
                "link_positions",
                f"need 0 < X1 < X2 < region1_width, got ({x1}, {x2}) "
                f"with region1_width={self.region1_width}",
            )

    @property
    def total_width(self) -> float:
        return self.region1_width + self.region2_width


@dataclass(frozen=True)
class MotionParams:
    """Heading/step parameters of the pedestrian motion model.

    ``heading_persistence`` is the per-step probability of keeping the
    current heading; otherwise the heading is redrawn uniformly from the
    allowed interval(s), whose half-width around the x-axis directions is
    ``theta_max`` (radians).  ``arrival_rate`` is persons/second and only
    meaningful for open scenarios.
    """

    heading_persistence: float
    theta_max: float
    time_step: float
    speed_region1: float
    speed_region2: float
    scenario: Scenario
    arrival_rate: float | None = None
    direction_mode: DirectionMode = field(default=None)  # type: ignore[assignment]

    def __post_init__(self):
        if self.direction_mode is None:
            mode = (
                DirectionMode.BIDIRECTIONAL
                if self.scenario is Scenario.CLOSED
                else DirectionMode.FORWARD_ONLY
            )
            object.__setattr__(self, "direction_mode", mode)
        if not 0.0 <= self.heading_persistence <= 1.0:
            raise ValidationError("p", "heading persistence must be in [0, 1]")
        if not 0.0 < self.theta_max <= math.pi / 2:
            raise ValidationError("theta_max_deg", "theta_max must be in (0, 90] degrees")
        if not self.time_step > 0:
            raise ValidationError("dt_s", "time step must be > 0")
        if not self.speed_region1 > 0:
            raise ValidationError("v1_mps", "must be > 0")
        if not self.speed_region2 > 0:
            raise ValidationError("v2_mps", "must be > 0")
        if self.scenario is Scenario.OPEN:
            if self.arrival_rate is None or not self.arrival_rate > 0:
                raise ValidationError("lambda_per_min", "open scenario needs arrival rate > 0")


@dataclass(frozen=True)
class ScenarioConfig:
    """A complete, validated experiment description.

    ``population`` is the fixed head count for closed scenarios and the
    average occupancy (may be fractional, may be None if unknown) for open
    ones.
    """

    geometry: AreaGeometry
    motion: MotionParams
    population: float | None
    duration: float
    rng_seed: int

    def __post_init__(self):
        if self.motion.scenario is Scenario.CLOSED:
            if self.population is None or self.population < 1:
                raise ValidationError("n_people", "closed scenario needs n_people >= 1")
            if self.population != int(self.population):
                raise ValidationError("n_people", "closed scenario needs a whole head count")
        elif self.population is not None and not self.population > 0:
            raise ValidationError("n_people", "average occupancy must be > 0 when given")
        if not self.duration > 0:
            raise ValidationError("duration_s", "must be > 0")
        if int(self.rng_seed) != self.rng_seed:
            raise ValidationError("seed", "must be an integer")

    def with_overrides(self, **kwargs) -> "ScenarioConfig":
        """Return a copy with top-level or motion fields replaced."""
        motion_fields = {k: v for k, v in kwargs.items() if hasattr(self.motion, k)}
        top = {k: v for k, v in kwargs.items() if k not in motion_fields}
        if "scenario" in motion_fields and "direction_mode" not in motion_fields:
            motion_fields["direction_mode"] = None  # re-derive from the new scenario
        motion = replace(self.motion, **motion_fields) if motion_fields else self.motion
        return replace(self, motion=motion, **top)


# --- config file format ---------------------------------------------------
#
# UTF-8 text, one `key = value` per line, `#` starts a comment.  Keys:
#   b1_m, b2_m, length_m, link_x_m (comma pair), p, theta_max_deg, dt_s,
#   v1_mps, v2_mps, scenario (closed|open), lambda_per_min, n_people,
#   duration_s, seed
# Unknown keys are rejected.

_KNOWN_KEYS = {
    "b1_m",
    "b2_m",
    "length_m",
    "link_x_m",
    "p",
    "theta_max_deg",
    "dt_s",
    "v1_mps",
    "v2_mps",
    "scenario",
    "lambda_per_min",
    "n_people",
    "duration_s",
    "seed",
}

_REQUIRED_KEYS = _KNOWN_KEYS - {"lambda_per_min", "n_people"}


def _parse_float(raw: str, key: str) -> float:
    try:
        return float(raw)
    except ValueError:
        raise ConfigError(f"key '{key}': cannot parse '{raw}' as a number") from None


def parse_scenario(text: str, source: str = "<string>") -> ScenarioConfig:
    """Parse the key/value scenario format into a validated config."""
    values: dict[str, str] = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value', got '{line}'")
        key, _, raw = line.partition("=")
        key = key.strip()
        if key not in _KNOWN_KEYS:
            raise ConfigError(f"{source}:{lineno}: unknown key '{key}'")
        if key in values:
            raise ConfigError(f"{source}:{lineno}: duplicate key '{key}'")
        values[key] = raw.strip()

    missing = sorted(_REQUIRED_KEYS - values.keys())
    if missing:
        raise ConfigError(f"{source}: missing required keys: {', '.join(missing)}")

    scenario_raw = values["scenario"].lower()
    try:
        scenario = Scenario(scenario_raw)
    except ValueError:
        raise ConfigError(f"{source}: scenario must be 'closed' or 'open', got '{scenario_raw}'")
    if scenario is Scenario.OPEN and "lambda_per_min" not in values:
        raise ConfigError(f"{source}: open scenario requires lambda_per_min")

    link_parts = values["link_x_m"].split(",")
    if len(link_parts) != 2:
        raise ValidationError("link_positions", "link_x_m must be a comma pair 'X1, X2'")
    links = tuple(_parse_float(part.strip(), "link_x_m") for part in link_parts)

    geometry = AreaGeometry(
        region1_width=_parse_float(values["b1_m"], "b1_m"),
        region2_width=_parse_float(values["b2_m"], "b2_m"),
        corridor_length=_parse_float(values["length_m"], "length_m"),
        link_positions=links,  # type: ignore[arg-type]
    )

    lam = None
    if "lambda_per_min" in values:
        lam = _parse_float(values["lambda_per_min"], "lambda_per_min") / 60.0
    motion = MotionParams(
        heading_persistence=_parse_float(values["p"], "p"),
        theta_max=math.radians(_parse_float(values["theta_max_deg"], "theta_max_deg")),
        time_step=_parse_float(values["dt_s"], "dt_s"),
        speed_region1=_parse_float(values["v1_mps"], "v1_mps"),
        speed_region2=_parse_float(values["v2_mps"], "v2_mps"),
        scenario=scenario,
        arrival_rate=lam,
    )

    population = None
    if "n_people" in values:
        population = _parse_float(values["n_people"], "n_people")

    seed_raw = values["seed"]
    try:
        seed = int(seed_raw)
    except ValueError:
        raise ValidationError("seed", f"must be an integer, got '{seed_raw}'")

    return ScenarioConfig(
        geometry=geometry,
        motion=motion,
        population=population,
        duration=_parse_float(values["duration_s"], "duration_s"),
        rng_seed=seed,
    )


def load_scenario(path: str | Path) -> ScenarioConfig:
    """Load and validate a scenario config file."""
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read scenario file {path}: {exc}") from exc
    return parse_scenario(text, source=str(path))


def _exact_inverse(value: float, forward, scale_guess: float) -> float:
    # Emit y with forward(y) == value bit-exactly; the naive inverse can be
    # one ulp off, so probe its float neighbours.
    y = value * scale_guess
    if forward(y) == value:
        return y
    for direction in (math.inf, -math.inf):
        cand = y
        for _ in range(4):
            cand = math.nextafter(cand, direction)
            if forward(cand) == value:
                return cand
    return y  # give up; round-trip test will catch a real mismatch


def serialize_scenario(config: ScenarioConfig) -> str:
    """Render a config in the same key/value format ``parse_scenario`` reads."""
    theta_deg = _exact_inverse(config.motion.theta_max, math.radians, 180.0 / math.pi)
    lines = [
        "# crowdspeed scenario config",
        f"b1_m = {config.geometry.region1_width!r}",
        f"b2_m = {config.geometry.region2_width!r}",
        f"length_m = {config.geometry.corridor_length!r}",
        f"link_x_m = {config.geometry.link_positions[0]!r}, {config.geometry.link_positions[1]!r}",
        f"p = {config.motion.heading_persistence!r}",
        f"theta_max_deg = {theta_deg!r}",
        f"dt_s = {config.motion.time_step!r}",
        f"v1_mps = {config.motion.speed_region1!r}",
        f"v2_mps = {config.motion.speed_region2!r}",
        f"scenario = {config.motion.scenario.value}",
    ]
    if config.motion.arrival_rate is not None:
        per_min = _exact_inverse(config.motion.arrival_rate, lambda x: x / 60.0, 60.0)
        lines.append(f"lambda_per_min = {per_min!r}")
    if config.population is not None:
        lines.append(f"n_people = {config.population!r}")
    lines.append(f"duration_s = {config.duration!r}")
    lines.append(f"seed = {config.rng_seed}")
    return "\n".join(lines) + "\n"


def available_presets() -> list[str]:
    files = resources.files("crowdspeed").joinpath("presets")
    return sorted(p.name[: -len(".cfg")] for p in files.iterdir() if p.name.endswith(".cfg"))


def preset_scenario(name: str) -> ScenarioConfig:
    """Load one of the bundled scenario presets by name."""
    res = resources.files("crowdspeed").joinpath("presets", f"{name}.cfg")
    if not res.is_file():
        raise ConfigError(
            f"unknown preset '{name}' (available: {', '.join(available_presets())})"
        )
    return parse_scenario(res.read_text(encoding="utf-8"), source=f"preset:{name}")
