"""Closed-form link-crossing probabilities.

These are the quantities the estimator inverts: the per-step probability
that a pedestrian crosses a link in region 1, conditioned on being there;
the unconditional single-pedestrian probability; its N-person extension
for closed areas; and the arrival-rate form for open areas.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
import math

from .errors import ModelDomainError
from .geometry import AreaGeometry

__all__ = [
    "CrossContext",
    "CrossingProbability",
    "sinc",
    "p_cross_given_region1",
    "p_cross_single",
    "p_cross_n_closed",
    "p_cross_open",
    "time_avg",
]


class CrossContext(Enum):
    CONDITIONAL_REGION1 = "conditional-region1"
    SINGLE_PERSON_CLOSED = "single-person-closed"
    N_PERSON_CLOSED = "n-person-closed"
    OPEN_AREA = "open-area"


@dataclass(frozen=True)
class CrossingProbability:
    """Per-step crossing probability, optionally convertible to a rate."""

    per_step: float
    context: CrossContext
    time_step: float | None = None

    def __post_init__(self):
        if not 0.0 <= self.per_step <= 1.0:
            raise ModelDomainError(f"crossing probability {self.per_step} outside [0, 1]")

    @property
    def rate(self) -> float:
        """Events per second (per_step / time_step)."""
        if self.time_step is None:
            raise ModelDomainError("no time step attached; rate undefined")
        return self.per_step / self.time_step


def sinc(theta: float) -> float:
    """sin(theta)/theta with the removable singularity handled (1 at 0)."""
    if abs(theta) < 1e-9:
        return 1.0
    return math.sin(theta) / theta


def _check_heading(theta_max: float):
    if not 0.0 <= theta_max <= math.pi / 2:
        raise ModelDomainError(f"theta_max={theta_max} outside [0, pi/2]")


def p_cross_given_region1(
    v1: float, dt: float, b1: float, theta_max: float
) -> CrossingProbability:
    """Crossing probability per step, given the pedestrian is in region 1.

    Equals v1*dt*sinc(theta_max)/b1.  Requires the one-step displacement to
    fit inside the region (v1*dt < b1), otherwise the derivation's crossing
    band sticks out of the region and the expression is meaningless.
    """
    if v1 <= 0 or dt <= 0 or b1 <= 0:
        raise ModelDomainError("v1, dt, b1 must all be positive")
    _check_heading(theta_max)
    if v1 * dt >= b1:
        raise ModelDomainError(
            f"per-step displacement v1*dt={v1 * dt} must be < region width {b1}"
        )
    value = v1 * dt * sinc(theta_max) / b1
    return CrossingProbability(value, CrossContext.CONDITIONAL_REGION1, dt)


def p_cross_single(
    v1: float, v2: float, dt: float, geom: AreaGeometry, theta_max: float
) -> CrossingProbability:
    """Per-step probability that one pedestrian crosses a region-1 link.

    v1*v2*dt*sinc(theta_max)/(v1*B2 + v2*B1); independent of where in
    region 1 the link sits, and symmetric under swapping (v1,B1)<->(v2,B2).
    """
    if v1 <= 0 or v2 <= 0 or dt <= 0:
        raise ModelDomainError("speeds and dt must be positive")
    _check_heading(theta_max)
    b1, b2 = geom.region1_width, geom.region2_width
    if v1 * dt >= b1:
        raise ModelDomainError(f"v1*dt={v1 * dt} must be < region-1 width {b1}")
    if v2 * dt >= b2:
        raise ModelDomainError(f"v2*dt={v2 * dt} must be < region-2 width {b2}")
    value = v1 * v2 * dt * sinc(theta_max) / (v1 * b2 + v2 * b1)
    return CrossingProbability(value, CrossContext.SINGLE_PERSON_CLOSED, dt)


def p_cross_n_closed(p_single: float, n: int) -> CrossingProbability:
    """Probability that at least one of n independent pedestrians crosses."""
    if not 0.0 <= p_single <= 1.0:
        raise ModelDomainError(f"p_single={p_single} outside [0, 1]")
    if n < 1:
        raise ModelDomainError("n must be >= 1")
    value = 1.0 - (1.0 - p_single) ** n
    return CrossingProbability(value, CrossContext.N_PERSON_CLOSED)


def p_cross_open(
    v1: float, v2: float, dt: float, geom: AreaGeometry, n_avg: float
) -> CrossingProbability:
    """Per-step crossing probability for an open area with mean occupancy n_avg.

    n_avg*v1*v2*dt/(v1*B2 + v2*B1): mean occupancy over the average transit
    time, so the implied arrival rate is recoverable as ``.rate``.
    """
    if v1 <= 0 or v2 <= 0 or dt <= 0 or n_avg <= 0:
        raise ModelDomainError("speeds, dt and n_avg must be positive")
    value = n_avg * v1 * v2 * dt / (v1 * geom.region2_width + v2 * geom.region1_width)
    return CrossingProbability(value, CrossContext.OPEN_AREA, dt)


def time_avg(v1: float, v2: float, geom: AreaGeometry) -> float:
    """Average forward-transit time through both regions: B1/v1 + B2/v2."""
    if v1 <= 0 or v2 <= 0:
        raise ModelDomainError("speeds must be positive")
    return geom.region1_width / v1 + geom.region2_width / v2
