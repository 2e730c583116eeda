import math

import pytest
from hypothesis import given, strategies as st

from crowdspeed.errors import ConfigError, ValidationError
from crowdspeed.geometry import (
    AreaGeometry,
    DirectionMode,
    MotionParams,
    Scenario,
    ScenarioConfig,
    available_presets,
    parse_scenario,
    preset_scenario,
    serialize_scenario,
)

OUTDOOR_TEXT = """
b1_m = 5.5
b2_m = 8.8
length_m = 4.26
link_x_m = 2.5, 3.7
p = 0.95
theta_max_deg = 45
dt_s = 0.05
v1_mps = 0.8
v2_mps = 0.3
scenario = closed
n_people = 5
duration_s = 600
seed = 1
"""


def test_outdoor_config_parses():
    cfg = parse_scenario(OUTDOOR_TEXT)
    assert cfg.geometry.region1_width == 5.5
    assert cfg.geometry.region2_width == 8.8
    assert cfg.geometry.link_positions == (2.5, 3.7)
    assert cfg.motion.scenario is Scenario.CLOSED
    assert cfg.motion.direction_mode is DirectionMode.BIDIRECTIONAL
    assert cfg.motion.theta_max == pytest.approx(math.pi / 4)


def test_indoor_config_parses():
    text = OUTDOOR_TEXT.replace("5.5", "7").replace("8.8", "13")
    text = text.replace("link_x_m = 2.5, 3.7", "link_x_m = 2.5, 4")
    cfg = parse_scenario(text)
    assert cfg.geometry.region1_width == 7
    assert cfg.geometry.region2_width == 13


def test_link_beyond_region1_names_field():
    text = OUTDOOR_TEXT.replace("link_x_m = 2.5, 3.7", "link_x_m = 2.5, 6.0")
    with pytest.raises(ValidationError) as err:
        parse_scenario(text)
    assert err.value.field == "link_positions"


@pytest.mark.parametrize(
    "key,bad",
    [
        ("b1_m", "-1"),
        ("b2_m", "0"),
        ("length_m", "-3"),
        ("p", "1.5"),
        ("theta_max_deg", "0"),
        ("theta_max_deg", "91"),
        ("dt_s", "0"),
        ("v1_mps", "-0.2"),
        ("v2_mps", "0"),
        ("n_people", "0"),
        ("n_people", "2.5"),
        ("duration_s", "0"),
        ("seed", "1.5"),
    ],
)
def test_each_invalid_field_is_named(key, bad):
    lines = []
    for line in OUTDOOR_TEXT.strip().splitlines():
        if line.startswith(f"{key} ="):
            line = f"{key} = {bad}"
        lines.append(line)
    with pytest.raises(ValidationError) as err:
        parse_scenario("\n".join(lines))
    # the offending field must be identifiable from the error
    field_aliases = {
        "b1_m": "region1_width",
        "b2_m": "region2_width",
        "length_m": "corridor_length",
    }
    assert err.value.field in (key, field_aliases.get(key, key))


def test_unknown_key_rejected():
    with pytest.raises(ConfigError, match="unknown key"):
        parse_scenario(OUTDOOR_TEXT + "\nwind_mps = 3\n")


def test_missing_key_rejected():
    text = "\n".join(
        line for line in OUTDOOR_TEXT.strip().splitlines() if not line.startswith("p =")
    )
    with pytest.raises(ConfigError, match="missing required keys"):
        parse_scenario(text)


def test_duplicate_key_rejected():
    with pytest.raises(ConfigError, match="duplicate"):
        parse_scenario(OUTDOOR_TEXT + "\nseed = 2\n")


def test_open_requires_arrival_rate():
    text = OUTDOOR_TEXT.replace("scenario = closed", "scenario = open")
    with pytest.raises(ConfigError, match="lambda_per_min"):
        parse_scenario(text)


def test_open_scenario_parses_and_converts_rate():
    text = OUTDOOR_TEXT.replace("scenario = closed", "scenario = open")
    text += "lambda_per_min = 3\n"
    cfg = parse_scenario(text)
    assert cfg.motion.arrival_rate == pytest.approx(3 / 60)
    assert cfg.motion.direction_mode is DirectionMode.FORWARD_ONLY


@pytest.mark.parametrize("name", ["outdoor", "indoor", "museum", "costco-aisle"])
def test_preset_round_trip_identical(name):
    cfg = preset_scenario(name)
    assert parse_scenario(serialize_scenario(cfg)) == cfg


def test_available_presets():
    assert set(available_presets()) >= {"outdoor", "indoor", "museum", "costco-aisle"}


def test_unknown_preset():
    with pytest.raises(ConfigError, match="unknown preset"):
        preset_scenario("mall")


@given(
    theta_deg=st.floats(1.0, 90.0),
    p=st.floats(0.0, 1.0),
    v1=st.floats(0.05, 3.0),
    v2=st.floats(0.05, 3.0),
    seed=st.integers(0, 2**31 - 1),
)
def test_round_trip_identity_fuzzed(theta_deg, p, v1, v2, seed):
    text = OUTDOOR_TEXT
    for key, value in [
        ("theta_max_deg", theta_deg),
        ("p", p),
        ("v1_mps", v1),
        ("v2_mps", v2),
        ("seed", seed),
    ]:
        lines = []
        for line in text.strip().splitlines():
            if line.startswith(f"{key} ="):
                line = f"{key} = {value!r}"
            lines.append(line)
        text = "\n".join(lines)
    cfg = parse_scenario(text)
    assert parse_scenario(serialize_scenario(cfg)) == cfg


def test_with_overrides_rederives_direction_mode(outdoor):
    opened = outdoor.with_overrides(
        scenario=Scenario.OPEN, arrival_rate=0.1, population=None
    )
    assert opened.motion.direction_mode is DirectionMode.FORWARD_ONLY
    assert opened.motion.arrival_rate == 0.1


def test_geometry_requires_two_links():
    with pytest.raises(ValidationError) as err:
        AreaGeometry(5.5, 8.8, 4.26, (2.5,))  # type: ignore[arg-type]
    assert err.value.field == "link_positions"


def test_population_rules():
    geom = AreaGeometry(5.5, 8.8, 4.26, (2.5, 3.7))
    motion = MotionParams(0.95, math.pi / 4, 0.05, 0.8, 0.3, Scenario.CLOSED)
    with pytest.raises(ValidationError) as err:
        ScenarioConfig(geom, motion, population=None, duration=10, rng_seed=0)
    assert err.value.field == "n_people"
    open_motion = MotionParams(
        0.95, math.pi / 4, 0.05, 0.8, 0.3, Scenario.OPEN, arrival_rate=0.1
    )
    cfg = ScenarioConfig(geom, open_motion, population=None, duration=10, rng_seed=0)
    assert cfg.population is None
