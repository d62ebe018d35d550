"""Traffic-flow composition: event schedules, timeline mixing, labeled segments.

Pass-by events are sampled per (class, direction, hour) from Poisson
rates, rendered as 30 s CPA-centered recordings, summed linearly into a
continuous multichannel timeline, and cut into fixed-length labeled
segments. A segment's label counts the events whose closest-approach
instant falls inside it (ties at a boundary go to the later segment).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterator

import numpy as np
from scipy.stats import truncnorm

from .errors import DomainError
from .propagation import (
    ArrayGeometry,
    Direction,
    Environment,
    PassbyRecording,
    make_trajectory,
    simulate_passby,
)
from .sources import EngineModelParams, RollingNoiseTable, VehicleClass, build_vehicle_sources
from .util import derive_seed

MAX_SPEED_KMH = 100.0
MIN_SPEED_KMH = 30.0
MAX_LANE_RATE_PER_H = 1000.0
DEFAULT_EVENT_DURATION_S = 30.0
DEFAULT_SEGMENT_LEN_S = 60.0

CATEGORIES: tuple[tuple[VehicleClass, Direction], ...] = (
    (VehicleClass.CAR, Direction.L2R),
    (VehicleClass.CAR, Direction.R2L),
    (VehicleClass.CV, Direction.L2R),
    (VehicleClass.CV, Direction.R2L),
)

CATEGORY_NAMES = ("car_l2r", "car_r2l", "cv_l2r", "cv_r2l")


def category_index(vehicle_class: VehicleClass, direction: Direction) -> int:
    return CATEGORIES.index((vehicle_class, direction))


@dataclass(frozen=True)
class VehicleEvent:
    """One pass-by: what drove by, which way, how fast, and when."""

    vehicle_class: VehicleClass
    direction: Direction
    speed_kmh: float
    cpa_time_s: float

    def __post_init__(self):
        if not (0.0 < self.speed_kmh <= MAX_SPEED_KMH):
            raise DomainError(f"event speed must be in (0, {MAX_SPEED_KMH}] km/h")
        if self.cpa_time_s < 0.0:
            raise DomainError("CPA time must be non-negative")

    @property
    def category(self) -> int:
        return category_index(self.vehicle_class, self.direction)


@dataclass(frozen=True)
class LaneLayout:
    """Lane-center offsets from the array line; direction implies lane."""

    near_y_m: float = 5.75
    far_y_m: float = 9.25

    def __post_init__(self):
        if not (0.0 < self.near_y_m < self.far_y_m):
            raise DomainError("need 0 < near lane y < far lane y")

    def y_for(self, direction: Direction) -> float:
        return self.near_y_m if direction is Direction.L2R else self.far_y_m


@dataclass(frozen=True)
class TrafficProfile:
    """Hourly event rates per category plus the speed distribution."""

    hourly_rates: dict[tuple[VehicleClass, Direction], np.ndarray]
    speed_mean_kmh: float = 80.0
    speed_std_kmh: float = 10.0

    def __post_init__(self):
        rates: dict[tuple[VehicleClass, Direction], np.ndarray] = {}
        for key in CATEGORIES:
            r = np.asarray(self.hourly_rates.get(key, np.zeros(24)), dtype=float)
            if r.ndim == 0:
                r = np.full(24, float(r))
            if r.shape != (24,):
                raise DomainError("hourly rates must be a scalar or a 24-entry sequence")
            if np.any(r < 0.0):
                raise DomainError("hourly rates must be non-negative")
            rates[key] = r
        for direction in Direction:
            lane_total = sum(rates[(c, direction)] for c in VehicleClass)
            if np.any(lane_total > MAX_LANE_RATE_PER_H):
                raise DomainError(f"per-lane rate exceeds {MAX_LANE_RATE_PER_H}/hour")
        if self.speed_std_kmh < 0.0:
            raise DomainError("speed std must be non-negative")
        object.__setattr__(self, "hourly_rates", rates)

    @classmethod
    def constant(
        cls,
        car_l2r: float = 0.0,
        car_r2l: float = 0.0,
        cv_l2r: float = 0.0,
        cv_r2l: float = 0.0,
        speed_mean_kmh: float = 80.0,
        speed_std_kmh: float = 10.0,
    ) -> "TrafficProfile":
        values = (car_l2r, car_r2l, cv_l2r, cv_r2l)
        return cls(
            hourly_rates={key: np.full(24, v) for key, v in zip(CATEGORIES, values)},
            speed_mean_kmh=speed_mean_kmh,
            speed_std_kmh=speed_std_kmh,
        )

    def rate(self, vehicle_class: VehicleClass, direction: Direction, hour: int) -> float:
        return float(self.hourly_rates[(vehicle_class, direction)][hour % 24])


@dataclass(frozen=True)
class SegmentLabel:
    """Ground-truth counts ordered (car-l2r, car-r2l, cv-l2r, cv-r2l)."""

    counts: tuple[int, int, int, int]

    def __post_init__(self):
        if len(self.counts) != 4 or any(c < 0 for c in self.counts):
            raise DomainError("label must hold 4 non-negative counts")
        object.__setattr__(self, "counts", tuple(int(c) for c in self.counts))


@dataclass(frozen=True)
class LabeledSegment:
    """One fixed-length slice of the timeline with its counts."""

    audio: np.ndarray
    label: SegmentLabel
    segment_index: int
    provenance: tuple[int, ...]  # indices into the schedule of contributing events


def _check_timeline_duration(total_duration_s: float) -> None:
    if total_duration_s <= 0.0 or abs(total_duration_s / 60.0 - round(total_duration_s / 60.0)) > 1e-9:
        raise DomainError("total duration must be a positive multiple of 60 s")


def sample_schedule(profile: TrafficProfile, total_duration_s: float, seed: int) -> list[VehicleEvent]:
    """Draw a pass-by schedule from the profile; deterministic under seed.

    Counts are Poisson per (class, direction, hour), CPA instants uniform
    within the hour, speeds normal truncated to [30, 100] km/h. Events are
    returned sorted by CPA time.
    """
    _check_timeline_duration(total_duration_s)
    rng = np.random.default_rng(seed)
    events: list[VehicleEvent] = []
    n_hours = int(np.ceil(total_duration_s / 3600.0))
    for hour in range(n_hours):
        start = hour * 3600.0
        covered = min(3600.0, total_duration_s - start)
        for vclass, direction in CATEGORIES:
            mean = profile.rate(vclass, direction, hour) * covered / 3600.0
            count = int(rng.poisson(mean)) if mean > 0.0 else 0
            if count == 0:
                continue
            times = rng.uniform(start, start + covered, size=count)
            if profile.speed_std_kmh > 0.0:
                a = (MIN_SPEED_KMH - profile.speed_mean_kmh) / profile.speed_std_kmh
                b = (MAX_SPEED_KMH - profile.speed_mean_kmh) / profile.speed_std_kmh
                speeds = truncnorm.rvs(
                    a, b, loc=profile.speed_mean_kmh, scale=profile.speed_std_kmh,
                    size=count, random_state=rng,
                )
            else:
                speeds = np.full(count, np.clip(profile.speed_mean_kmh, MIN_SPEED_KMH, MAX_SPEED_KMH))
            for t, s in zip(times, speeds):
                events.append(VehicleEvent(vclass, direction, float(s), float(t)))
    events.sort(key=lambda e: e.cpa_time_s)
    return events


def render_event(
    event: VehicleEvent,
    event_index: int,
    seed: int,
    array: ArrayGeometry,
    env: Environment,
    sample_rate: int,
    *,
    lanes: LaneLayout | None = None,
    event_duration_s: float = DEFAULT_EVENT_DURATION_S,
    table: RollingNoiseTable | None = None,
    engine_params: EngineModelParams | None = None,
) -> tuple[int, PassbyRecording]:
    """Render one scheduled event; returns (timeline start sample, recording).

    The per-event seed is derived from (seed, event_index), so results do
    not depend on rendering order.
    """
    lanes = lanes or LaneLayout()
    event_seed = derive_seed(seed, event_index)
    pair = build_vehicle_sources(
        event.vehicle_class, event.speed_kmh, event_duration_s, sample_rate, event_seed,
        table=table, engine_params=engine_params,
    )
    trajectory = make_trajectory(
        lanes.y_for(event.direction),
        event.direction,
        event.speed_kmh,
        event_duration_s,
        array_centroid_x_m=float(array.centroid_m[0]),
    )
    recording = simulate_passby(pair, trajectory, array, env, event=event)
    start = int(round((event.cpa_time_s - event_duration_s / 2.0) * sample_rate))
    return start, recording


def mix_into(timeline: np.ndarray, start_sample: int, channels: np.ndarray) -> None:
    """Add a rendering into the timeline in place, clipping at the edges."""
    n = timeline.shape[1]
    length = channels.shape[1]
    lo = max(0, start_sample)
    hi = min(n, start_sample + length)
    if hi <= lo:
        return
    timeline[:, lo:hi] += channels[:, lo - start_sample : hi - start_sample]


def render_timeline(
    schedule: list[VehicleEvent],
    array: ArrayGeometry,
    env: Environment,
    total_duration_s: float,
    seed: int,
    *,
    sample_rate: int = 48_000,
    lanes: LaneLayout | None = None,
    event_duration_s: float = DEFAULT_EVENT_DURATION_S,
    table: RollingNoiseTable | None = None,
    engine_params: EngineModelParams | None = None,
) -> np.ndarray:
    """Render and mix every scheduled event into one continuous timeline.

    Events are summed in schedule order (fixed-order reduction), so the
    result is bit-reproducible for a given (schedule, seed).
    """
    _check_timeline_duration(total_duration_s)
    n = int(round(total_duration_s * sample_rate))
    timeline = np.zeros((array.num_mics, n))
    for i, event in enumerate(schedule):
        start, rec = render_event(
            event, i, seed, array, env, sample_rate,
            lanes=lanes, event_duration_s=event_duration_s,
            table=table, engine_params=engine_params,
        )
        mix_into(timeline, start, rec.channels)
    return timeline


def segment_label_counts(
    schedule: list[VehicleEvent], total_duration_s: float, segment_len_s: float = DEFAULT_SEGMENT_LEN_S
) -> np.ndarray:
    """(num_segments, 4) counts; an event belongs to the segment holding its CPA."""
    n_segments = int(round(total_duration_s / segment_len_s))
    if abs(n_segments * segment_len_s - total_duration_s) > 1e-9 or n_segments <= 0:
        raise DomainError("total duration must be a positive multiple of the segment length")
    counts = np.zeros((n_segments, 4), dtype=int)
    for event in schedule:
        k = int(np.floor(event.cpa_time_s / segment_len_s))
        if k >= n_segments:
            raise DomainError(f"event CPA {event.cpa_time_s} s beyond the timeline")
        counts[k, event.category] += 1
    return counts


def segment_provenance(
    schedule: list[VehicleEvent],
    n_segments: int,
    segment_len_s: float,
    event_duration_s: float = DEFAULT_EVENT_DURATION_S,
) -> list[tuple[int, ...]]:
    """Per segment: schedule indices whose audio window overlaps it."""
    prov: list[list[int]] = [[] for _ in range(n_segments)]
    half = event_duration_s / 2.0
    for i, event in enumerate(schedule):
        k_lo = max(0, int(np.floor((event.cpa_time_s - half) / segment_len_s)))
        k_hi = min(n_segments - 1, int(np.floor((event.cpa_time_s + half) / segment_len_s)))
        for k in range(k_lo, k_hi + 1):
            if (k + 1) * segment_len_s > event.cpa_time_s - half and k * segment_len_s < event.cpa_time_s + half:
                prov[k].append(i)
    return [tuple(p) for p in prov]


def segment_timeline(
    timeline: np.ndarray,
    schedule: list[VehicleEvent],
    sample_rate: int,
    segment_len_s: float = DEFAULT_SEGMENT_LEN_S,
    event_duration_s: float = DEFAULT_EVENT_DURATION_S,
) -> list[LabeledSegment]:
    """Cut a timeline into fixed-length labeled segments."""
    if timeline.ndim != 2:
        raise DomainError("timeline must be (channels, samples)")
    total_duration_s = timeline.shape[1] / sample_rate
    seg_samples = int(round(segment_len_s * sample_rate))
    if seg_samples <= 0 or timeline.shape[1] % seg_samples != 0:
        raise DomainError("timeline duration must be a multiple of the segment length")
    n_segments = timeline.shape[1] // seg_samples
    counts = segment_label_counts(schedule, total_duration_s, segment_len_s)
    prov = segment_provenance(schedule, n_segments, segment_len_s, event_duration_s)
    segments = []
    for k in range(n_segments):
        segments.append(
            LabeledSegment(
                audio=timeline[:, k * seg_samples : (k + 1) * seg_samples],
                label=SegmentLabel(tuple(counts[k])),
                segment_index=k,
                provenance=prov[k],
            )
        )
    return segments


def iter_event_renders(
    schedule: list[VehicleEvent],
    array: ArrayGeometry,
    env: Environment,
    seed: int,
    sample_rate: int,
    *,
    lanes: LaneLayout | None = None,
    event_duration_s: float = DEFAULT_EVENT_DURATION_S,
    table: RollingNoiseTable | None = None,
    engine_params: EngineModelParams | None = None,
) -> Iterator[tuple[int, int, PassbyRecording]]:
    """Yield (event_index, start_sample, recording) in schedule order."""
    for i, event in enumerate(schedule):
        start, rec = render_event(
            event, i, seed, array, env, sample_rate,
            lanes=lanes, event_duration_s=event_duration_s,
            table=table, engine_params=engine_params,
        )
        yield i, start, rec
