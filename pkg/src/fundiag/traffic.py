"""Road network data model: links, observations, events, speed limits.

Density is derived per minute as flow / speed; minutes slower than a
configurable threshold are dropped rather than imputed.  Variable speed
limits come from overhead sign readings: a batch of readings at one
instant is averaged and snapped to the feasible set {40, 50, 60, 70} mph,
and the resolved limit holds until the next batch (step semantics).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from datetime import datetime, timezone
from enum import Enum
from fractions import Fraction


class EventCategory(Enum):
    ACCIDENT = "accident"
    VEHICLE_OBSTRUCTION = "vehicle_obstruction"
    GENERAL_OBSTRUCTION = "general_obstruction"
    ABNORMAL_TRAFFIC = "abnormal_traffic"
    OTHER = "other"


#: The grouping used for reporting: accidents and obstructions together,
#: abnormal traffic on its own.
INCIDENT_CATEGORIES = frozenset({
    EventCategory.ACCIDENT,
    EventCategory.VEHICLE_OBSTRUCTION,
    EventCategory.GENERAL_OBSTRUCTION,
})
ABNORMAL_CATEGORIES = frozenset({EventCategory.ABNORMAL_TRAFFIC})


class SpeedLimit(Enum):
    """Active speed-limit state on a link; National means no restriction."""

    L40 = 40
    L50 = 50
    L60 = 60
    L70 = 70
    NATIONAL = 0

    @property
    def value_kmh(self) -> float | None:
        """Displayed limit in km/h; None when unrestricted."""
        return _MPH_TO_KMH.get(self.value)


#: The feasible displayed limits, mph -> km/h, as used on the signs.
_MPH_TO_KMH = {40: 64.4, 50: 80.5, 60: 96.6, 70: 112.7}
FEASIBLE_LIMITS_MPH = (40, 50, 60, 70)


@dataclass(frozen=True)
class Link:
    """One motorway section with constant lane count."""

    id: str
    length_m: float
    lanes: int

    def __post_init__(self) -> None:
        if not self.id:
            raise ValueError("link id must be non-empty")
        if not self.length_m > 0:
            raise ValueError(f"link {self.id}: length must be positive")
        if self.lanes < 1:
            raise ValueError(f"link {self.id}: lanes must be >= 1")


@dataclass(frozen=True)
class Observation:
    """One minute-level reading of average speed and flow."""

    timestamp: datetime
    speed_kmh: float
    flow_vph: float

    def __post_init__(self) -> None:
        _check_utc(self.timestamp)
        for name, x in (("speed", self.speed_kmh), ("flow", self.flow_vph)):
            if not (math.isfinite(x) and x >= 0):
                raise ValueError(f"{name} must be non-negative and finite")


@dataclass(frozen=True)
class FlowDensityPoint:
    """A derived (density, flow, speed) sample; density = flow / speed."""

    density: float
    flow: float
    speed: float
    timestamp: datetime

    def __post_init__(self) -> None:
        if self.density < 0:
            raise ValueError("density must be non-negative")
        if abs(self.density * self.speed - self.flow) > 1e-9 * max(1.0, abs(self.flow)):
            raise ValueError("density * speed must equal flow")


@dataclass(frozen=True)
class EventRecord:
    link_id: str
    category: EventCategory
    start: datetime
    end: datetime

    def __post_init__(self) -> None:
        _check_utc(self.start)
        _check_utc(self.end)
        if self.start > self.end:
            raise ValueError("event start must not be after end")


@dataclass(frozen=True)
class SignReading:
    """One overhead-sign reading; one sign per lane, read as a batch."""

    link_id: str
    timestamp: datetime
    sign_id: str
    limit_mph: int

    def __post_init__(self) -> None:
        _check_utc(self.timestamp)
        if self.limit_mph not in FEASIBLE_LIMITS_MPH:
            raise ValueError(
                f"displayed limit {self.limit_mph} not in {FEASIBLE_LIMITS_MPH}"
            )


@dataclass(frozen=True)
class LinkSeries:
    """A link with its time-ordered observations, events and sign readings.

    Immutable after construction; all operations over it are pure.
    """

    link: Link
    observations: tuple[Observation, ...]
    events: tuple[EventRecord, ...] = ()
    signs: tuple[SignReading, ...] = ()

    def __post_init__(self) -> None:
        for a, b in zip(self.observations, self.observations[1:]):
            if a.timestamp >= b.timestamp:
                raise ValueError(
                    f"link {self.link.id}: observations must be strictly "
                    "increasing in timestamp"
                )
        for ev in self.events:
            if ev.link_id != self.link.id:
                raise ValueError(f"event link_id {ev.link_id} != {self.link.id}")
        for sr in self.signs:
            if sr.link_id != self.link.id:
                raise ValueError(f"sign link_id {sr.link_id} != {self.link.id}")


def _check_utc(ts: datetime) -> None:
    if ts.tzinfo is None or ts.utcoffset() != timezone.utc.utcoffset(None):
        raise ValueError("timestamps must be timezone-aware UTC")


DEFAULT_MIN_SPEED_KMH = 1.0


def compute_density(obs: Observation, min_speed: float = DEFAULT_MIN_SPEED_KMH) -> FlowDensityPoint | None:
    """Derive a flow-density point, or None when speed < min_speed.

    Dropping slow minutes avoids the division blow-up at near-zero speed;
    absence encodes the degenerate case rather than an error.
    """
    if not min_speed > 0:
        raise ValueError("min_speed must be positive")
    if obs.speed_kmh < min_speed:
        return None
    return FlowDensityPoint(
        density=obs.flow_vph / obs.speed_kmh,
        flow=obs.flow_vph,
        speed=obs.speed_kmh,
        timestamp=obs.timestamp,
    )


def derive_points(series: LinkSeries, min_speed: float = DEFAULT_MIN_SPEED_KMH) -> list[FlowDensityPoint]:
    """All retained flow-density points of a series, in time order."""
    out = []
    for obs in series.observations:
        p = compute_density(obs, min_speed)
        if p is not None:
            out.append(p)
    return out


def resolve_speed_limit(readings: list[SignReading]) -> SpeedLimit:
    """Resolve one batch of simultaneous sign readings to a limit state.

    Empty input means no active restriction (National).  Otherwise the
    mean displayed limit is snapped to the nearest feasible value; exact
    ties snap to the lower limit.  The tie comparison is done in exact
    rational arithmetic so no float rounding can flip it.
    """
    if not readings:
        return SpeedLimit.NATIONAL
    link_ids = {r.link_id for r in readings}
    instants = {r.timestamp for r in readings}
    if len(link_ids) > 1 or len(instants) > 1:
        raise ValueError("sign readings in a batch must share link and instant")
    mean = Fraction(sum(r.limit_mph for r in readings), len(readings))
    best = None
    best_dist = None
    for cand in FEASIBLE_LIMITS_MPH:
        dist = abs(mean - cand)
        if best_dist is None or dist < best_dist:
            best, best_dist = cand, dist
        # equal distance: keep the lower candidate already held
    return SpeedLimit(best)


def limit_timeline(signs: tuple[SignReading, ...] | list[SignReading]) -> list[tuple[datetime, SpeedLimit]]:
    """Per-instant resolved limits, sorted by time.

    Readings sharing a timestamp form one batch.  Each resolved limit
    holds from its instant (inclusive) until the next batch.
    """
    batches: dict[datetime, list[SignReading]] = {}
    for r in signs:
        batches.setdefault(r.timestamp, []).append(r)
    return [(t, resolve_speed_limit(batch)) for t, batch in sorted(batches.items())]


def segment_by_limit(
    series: LinkSeries, min_speed: float = DEFAULT_MIN_SPEED_KMH
) -> dict[SpeedLimit, list[FlowDensityPoint]]:
    """Partition the retained points by the limit active at each minute.

    Points before the first sign reading fall under National.  Only
    non-empty segments appear in the result, and every retained point is
    assigned to exactly one segment.
    """
    timeline = limit_timeline(series.signs)
    segments: dict[SpeedLimit, list[FlowDensityPoint]] = {}
    idx = 0
    current = SpeedLimit.NATIONAL
    for point in derive_points(series, min_speed):
        while idx < len(timeline) and timeline[idx][0] <= point.timestamp:
            current = timeline[idx][1]
            idx += 1
        segments.setdefault(current, []).append(point)
    return segments


@dataclass(frozen=True)
class ScaledPoint:
    """A flow-density point after division by characteristic scales."""

    density: float
    flow: float
    speed: float
    timestamp: datetime | None = None


@dataclass(frozen=True)
class PointScales:
    """Characteristic scales of one link's diagram.

    ``rho_crit`` is the empirical critical density: the density of the
    observation where the maximum flow occurs (first such point on ties).
    """

    max_speed: float
    max_flow: float
    rho_crit: float

    def __post_init__(self) -> None:
        if not (self.max_speed > 0 and self.max_flow > 0 and self.rho_crit > 0):
            raise ValueError("scales must be positive")

    @classmethod
    def from_points(cls, points: list[FlowDensityPoint]) -> "PointScales":
        if not points:
            raise ValueError("cannot derive scales from an empty point set")
        best = max(points, key=lambda p: p.flow)
        return cls(
            max_speed=max(p.speed for p in points),
            max_flow=best.flow,
            rho_crit=best.density,
        )


def scale_points(
    points: list[FlowDensityPoint],
    max_speed: float,
    max_flow: float,
    rho_crit: float,
) -> list[ScaledPoint]:
    """Divide each coordinate by its characteristic scale.

    After scaling, a point at (rho_crit, max_flow) maps to (1, 1).
    """
    if not (max_speed > 0 and max_flow > 0 and rho_crit > 0):
        raise ValueError("scales must be positive")
    return [
        ScaledPoint(
            density=p.density / rho_crit,
            flow=p.flow / max_flow,
            speed=p.speed / max_speed,
            timestamp=p.timestamp,
        )
        for p in points
    ]


def count_events(series: LinkSeries, categories: frozenset[EventCategory] | set[EventCategory]) -> int:
    """Number of event records whose category falls in the given set."""
    return sum(1 for ev in series.events if ev.category in categories)
