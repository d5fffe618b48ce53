"""Seeded synthetic link datasets with known ground truth.

Densities are drawn from a two-component mixture (a low-density and a
high-density mode, each a point mass plus Gaussian jitter, clipped to the
valid density range).  Flow is the generating model's flux plus optional
zero-mean Gaussian noise scaled as a fraction of the peak flow, clamped
at zero; speed is flow / density, so every generated point satisfies the
flow = density * speed identity.  A density clipped to exactly zero is an
empty-road minute and carries zero flow and speed.

Generation uses numpy's PCG64 generator seeded through SeedSequence, so
fixtures are bit-reproducible for a fixed seed.  With a per-limit mode
table, each segment re-seeds the same stream and only the mode locations
change, so an identity table yields identical segment clouds.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from datetime import datetime, timedelta, timezone

import numpy as np

from .models import FdModelKind, FdModelParams, PARAM_NAMES, flux, validate
from .traffic import (
    EventCategory,
    EventRecord,
    FlowDensityPoint,
    Link,
    LinkSeries,
    Observation,
    SignReading,
    SpeedLimit,
)

_EPOCH = datetime(2020, 1, 1, tzinfo=timezone.utc)
_SEGMENT_GAP_MINUTES = 10


@dataclass(frozen=True)
class SynthSpec:
    """One link's generating recipe: model truth plus sampling law."""

    params: FdModelParams
    n_points: int
    rng_seed: int
    low_mode: float
    high_mode: float
    low_jitter: float
    high_jitter: float
    low_weight: float = 0.5
    noise_frac: float = 0.0
    max_density: float | None = None  # defaults to rho_max, else 4 * rho_crit
    limit_modes: dict[SpeedLimit, tuple[float, float]] = field(default_factory=dict)

    def __post_init__(self) -> None:
        bad = validate(self.params)
        if bad:
            raise ValueError(f"invalid generating parameters: {bad}")
        if self.n_points < 1:
            raise ValueError("n_points must be >= 1")
        if not 0.0 <= self.low_weight <= 1.0:
            raise ValueError("low_weight must lie in [0, 1]")
        if self.noise_frac < 0:
            raise ValueError("noise_frac must be non-negative")
        if self.low_jitter < 0 or self.high_jitter < 0:
            raise ValueError("jitter must be non-negative")
        cap = self.density_cap
        modes = [(self.low_mode, self.high_mode)]
        modes.extend(self.limit_modes.values())
        for low, high in modes:
            if not (0 <= low <= cap and 0 <= high <= cap):
                raise ValueError(f"modes must lie within [0, {cap}]")

    @property
    def density_cap(self) -> float:
        if self.max_density is not None:
            return self.max_density
        values = self.params.values
        if "rho_max" in values:
            return values["rho_max"]
        return 4.0 * values["rho_crit"]

    @property
    def peak_flow(self) -> float:
        grid = np.linspace(0.0, self.density_cap, 4097)
        peak = float(np.max(flux(self.params, grid)))
        if "max_flow" in self.params.values:
            peak = max(peak, self.params.values["max_flow"])
        return peak


def _draw_points(spec: SynthSpec, modes: tuple[float, float], rng,
                 t_start: datetime) -> list[FlowDensityPoint]:
    n = spec.n_points
    low = rng.random(n) < spec.low_weight
    centers = np.where(low, modes[0], modes[1])
    jitter = np.where(low, spec.low_jitter, spec.high_jitter)
    density = np.clip(centers + jitter * rng.standard_normal(n), 0.0, spec.density_cap)

    flow = flux(spec.params, density)
    noise_std = spec.noise_frac * spec.peak_flow
    flow = np.maximum(0.0, flow + noise_std * rng.standard_normal(n))
    # a zero-clipped density is an empty-road minute: no vehicles, no
    # meaningful speed (the ingest path drops such minutes, as intended)
    empty = density == 0.0
    flow[empty] = 0.0
    with np.errstate(invalid="ignore"):
        speed = np.where(empty, 0.0, flow / np.where(empty, 1.0, density))

    return [
        FlowDensityPoint(density=float(d), flow=float(q), speed=float(v),
                         timestamp=t_start + timedelta(minutes=i))
        for i, (d, q, v) in enumerate(zip(density, flow, speed))
    ]


def generate(spec: SynthSpec) -> tuple[list[FlowDensityPoint], dict]:
    """Sample flow-density points from the spec; returns (points, truth)."""
    rng = np.random.default_rng(np.random.SeedSequence(spec.rng_seed))
    points = _draw_points(spec, (spec.low_mode, spec.high_mode), rng, _EPOCH)
    return points, _truth_dict(spec)


def segment_order(spec: SynthSpec) -> list[SpeedLimit]:
    """Segments in emission order: National (if present) always first,
    since sign semantics cannot return to unrestricted once a reading
    exists."""
    return sorted(spec.limit_modes, key=lambda s: s.value)


def generate_segmented(spec: SynthSpec) -> tuple[dict[SpeedLimit, list[FlowDensityPoint]], list[SignReading], dict]:
    """Per-limit clouds following the mode table, plus matching signs.

    Each segment occupies its own time window; a batch of two sign
    readings (limit-displaying) opens every non-National window, so
    ingesting the emitted fixture and segmenting reproduces the clouds.
    Every segment re-seeds the same generator stream: an identity table
    produces identical clouds across segments.
    """
    if not spec.limit_modes:
        points, truth = generate(spec)
        return {SpeedLimit.NATIONAL: points}, [], truth

    by_limit: dict[SpeedLimit, list[FlowDensityPoint]] = {}
    signs: list[SignReading] = []
    window = spec.n_points + _SEGMENT_GAP_MINUTES
    for index, limit in enumerate(segment_order(spec)):
        t_start = _EPOCH + timedelta(minutes=index * window)
        if limit is not SpeedLimit.NATIONAL:
            for sign_index in (1, 2):
                signs.append(SignReading(
                    link_id="", timestamp=t_start,
                    sign_id=f"S{sign_index}", limit_mph=limit.value,
                ))
        rng = np.random.default_rng(np.random.SeedSequence(spec.rng_seed))
        by_limit[limit] = _draw_points(spec, spec.limit_modes[limit], rng, t_start)
    return by_limit, signs, _truth_dict(spec)


def _truth_dict(spec: SynthSpec) -> dict:
    truth = {
        "model": spec.params.kind.value,
        "params": {n: spec.params.values[n] for n in PARAM_NAMES[spec.params.kind]},
        "rng_seed": spec.rng_seed,
        "n_points": spec.n_points,
        "low_mode": spec.low_mode,
        "high_mode": spec.high_mode,
        "low_weight": spec.low_weight,
        "low_jitter": spec.low_jitter,
        "high_jitter": spec.high_jitter,
        "noise_frac": spec.noise_frac,
        "peak_flow": spec.peak_flow,
        "density_cap": spec.density_cap,
    }
    if spec.limit_modes:
        truth["limit_modes"] = {
            limit.name: list(spec.limit_modes[limit])
            for limit in segment_order(spec)
        }
    return truth


@dataclass(frozen=True)
class LinkSynthSpec:
    """A link plus its generating spec and fabricated event counts."""

    link: Link
    spec: SynthSpec
    event_counts: dict[EventCategory, int] = field(default_factory=dict)


def build_series(link_spec: LinkSynthSpec) -> tuple[LinkSeries, dict]:
    """Assemble a LinkSeries fixture (observations, signs, events).

    Events are spread deterministically over the observation window
    using a child seed, ten minutes long each.
    """
    spec = link_spec.spec
    link = link_spec.link
    by_limit, signs, truth = generate_segmented(spec)

    observations = []
    for points in by_limit.values():
        for p in points:
            observations.append(Observation(timestamp=p.timestamp,
                                            speed_kmh=p.speed, flow_vph=p.flow))
    observations.sort(key=lambda o: o.timestamp)
    t_first = observations[0].timestamp
    t_last = observations[-1].timestamp

    events = []
    n_events = sum(link_spec.event_counts.values())
    if n_events:
        rng = np.random.default_rng(np.random.SeedSequence(spec.rng_seed).spawn(1)[0])
        window = max(1, int((t_last - t_first).total_seconds() // 60))
        starts = np.sort(rng.integers(0, window, size=n_events))
        i = 0
        for category in sorted(link_spec.event_counts, key=lambda c: c.value):
            for _ in range(link_spec.event_counts[category]):
                t0 = t_first + timedelta(minutes=int(starts[i]))
                events.append(EventRecord(link_id=link.id, category=category,
                                          start=t0, end=t0 + timedelta(minutes=10)))
                i += 1

    series = LinkSeries(
        link=link,
        observations=tuple(observations),
        events=tuple(sorted(events, key=lambda e: (e.start, e.end, e.category.value))),
        signs=tuple(SignReading(link_id=link.id, timestamp=s.timestamp,
                                sign_id=s.sign_id, limit_mph=s.limit_mph)
                    for s in signs),
    )
    truth = dict(truth)
    truth["link_id"] = link.id
    truth["event_counts"] = {c.value: n for c, n in sorted(
        link_spec.event_counts.items(), key=lambda kv: kv[0].value)}
    return series, truth


def spec_from_json_dict(obj: dict) -> LinkSynthSpec:
    """Parse one link entry of a synth spec file."""
    kind = FdModelKind(obj["model"])
    params = FdModelParams(kind, {n: float(obj["params"][n]) for n in PARAM_NAMES[kind]})
    limit_modes = {}
    for key, pair in obj.get("limit_modes", {}).items():
        limit = SpeedLimit.NATIONAL if key.lower() == "national" else SpeedLimit(int(key))
        limit_modes[limit] = (float(pair[0]), float(pair[1]))
    spec = SynthSpec(
        params=params,
        n_points=int(obj["n_points"]),
        rng_seed=int(obj["rng_seed"]),
        low_mode=float(obj["low_mode"]),
        high_mode=float(obj["high_mode"]),
        low_jitter=float(obj["low_jitter"]),
        high_jitter=float(obj["high_jitter"]),
        low_weight=float(obj.get("low_weight", 0.5)),
        noise_frac=float(obj.get("noise_frac", 0.0)),
        max_density=(float(obj["max_density"]) if "max_density" in obj else None),
        limit_modes=limit_modes,
    )
    events = {EventCategory(c): int(n) for c, n in obj.get("events", {}).items()}
    link = Link(id=obj["link_id"], length_m=float(obj["length_m"]),
                lanes=int(obj["lanes"]))
    return LinkSynthSpec(link=link, spec=spec, event_counts=events)


def load_spec_file(path) -> list[LinkSynthSpec]:
    """Read a synth spec JSON file: {"links": [...]}."""
    with open(path) as fh:
        obj = json.load(fh)
    links = obj.get("links")
    if not links:
        raise ValueError(f"{path}: spec file needs a non-empty 'links' array")
    specs = [spec_from_json_dict(entry) for entry in links]
    ids = [s.link.id for s in specs]
    if len(set(ids)) != len(ids):
        raise ValueError(f"{path}: duplicate link ids in spec file")
    return specs
