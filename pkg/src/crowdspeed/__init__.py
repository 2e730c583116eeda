"""Passive crowd-speed estimation for two adjacent regions.

Simulate pedestrians with region-dependent speeds, derive the
link-crossing statistics a pair of sensing links in one region would
observe, extract crossing events from RSSI traces, and invert the
statistics for the per-region average speeds (plus the arrival rate in
open, flow-through areas).
"""

from .geometry import (
    AreaGeometry,
    DirectionMode,
    MotionParams,
    Scenario,
    ScenarioConfig,
    available_presets,
    load_scenario,
    parse_scenario,
    preset_scenario,
    serialize_scenario,
)
from .analytic import (
    CrossingProbability,
    p_cross_given_region1,
    p_cross_n_closed,
    p_cross_open,
    p_cross_single,
    sinc,
    time_avg,
)
from .simulate import (
    CrossCorrelation,
    EventSequence,
    cross_correlation,
    model_cross_correlation,
    simulate_closed,
    simulate_open,
)
from .rssi import (
    CalibrationTable,
    DipSettings,
    ExperimentalStats,
    RssiTrace,
    detect_dips,
    experiment_stats,
    experimental_p_cross,
    synth_rssi,
    to_event_sequence,
)
from .estimate import (
    EvaluationReport,
    SpeedClass,
    SpeedEstimate,
    SpeedGrid,
    classify,
    estimate_closed,
    estimate_open,
    evaluate,
    sensitivity_sweep,
)

__version__ = "0.1.0"
