"""Generation config: YAML with nested tables for profile, environment, geometry."""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml

from .composer import CATEGORIES, LaneLayout, TrafficProfile
from .errors import ConfigurationError
from .features import DEFAULT_FRAME_LEN, DEFAULT_HOP, DEFAULT_MAX_LAG
from .propagation import ArrayGeometry, Direction, Environment
from .sources import VehicleClass


@dataclass(frozen=True)
class FeatureConfig:
    enabled: bool = True
    frame_len: int = DEFAULT_FRAME_LEN
    hop: int = DEFAULT_HOP
    max_lag: int = DEFAULT_MAX_LAG


@dataclass(frozen=True)
class GenerationConfig:
    profile: TrafficProfile
    environment: Environment = Environment()
    array: ArrayGeometry = field(default_factory=ArrayGeometry.default)
    lanes: LaneLayout = LaneLayout()
    hours: float = 1.0
    seed: int = 0
    segment_len_s: float = 60.0
    event_duration_s: float = 30.0
    sim_sample_rate: int = 48_000
    dataset_sample_rate: int = 16_000
    audio_format: str = "float32"
    features: FeatureConfig = FeatureConfig()
    workers: int = 1
    output_dir: Path | None = None

    def __post_init__(self):
        if self.hours <= 0:
            raise ConfigurationError("total hours must be positive")
        total_s = self.hours * 3600.0
        if abs(total_s / self.segment_len_s - round(total_s / self.segment_len_s)) > 1e-9:
            raise ConfigurationError("hours must give a whole number of segments")
        if self.audio_format not in ("float32", "int16"):
            raise ConfigurationError("audio_format must be float32 or int16")
        if self.dataset_sample_rate != 16_000:
            raise ConfigurationError("dataset sample rate is fixed at 16 kHz")
        if self.seed < 0:
            raise ConfigurationError("seed must be non-negative")

    @property
    def total_duration_s(self) -> float:
        return self.hours * 3600.0

    @property
    def num_segments(self) -> int:
        return int(round(self.total_duration_s / self.segment_len_s))


def _rates_from_mapping(node: dict) -> dict:
    rates = {}
    for vclass, direction in CATEGORIES:
        sub = node.get(vclass.value, {})
        if not isinstance(sub, dict):
            raise ConfigurationError(f"profile.hourly_rates.{vclass.value} must be a mapping")
        value = sub.get(direction.value, 0.0)
        rates[(vclass, direction)] = np.asarray(value, dtype=float)
    return rates


def profile_from_dict(node: dict) -> TrafficProfile:
    try:
        return TrafficProfile(
            hourly_rates=_rates_from_mapping(node.get("hourly_rates", {})),
            speed_mean_kmh=float(node.get("speed_mean_kmh", 80.0)),
            speed_std_kmh=float(node.get("speed_std_kmh", 10.0)),
        )
    except (TypeError, ValueError) as exc:
        raise ConfigurationError(f"invalid traffic profile: {exc}") from exc


def load_generation_config(path: str | Path, **overrides) -> GenerationConfig:
    """Parse a YAML generation config; keyword overrides win over the file."""
    path = Path(path)
    try:
        doc = yaml.safe_load(path.read_text())
    except OSError as exc:
        raise ConfigurationError(f"cannot read config {path}: {exc}") from exc
    except yaml.YAMLError as exc:
        raise ConfigurationError(f"malformed YAML in {path}: {exc}") from exc
    if not isinstance(doc, dict):
        raise ConfigurationError(f"{path}: top level must be a mapping")

    env_node = doc.get("environment", {})
    arr_node = doc.get("array", {})
    lane_node = doc.get("lanes", {})
    gen_node = doc.get("generation", {})
    feat_node = doc.get("features", {})

    try:
        profile = profile_from_dict(doc.get("profile", {}))
        environment = Environment(
            speed_of_sound_mps=float(env_node.get("speed_of_sound_mps", 343.0)),
            temperature_c=float(env_node.get("temperature_c", 20.0)),
            relative_humidity_pct=float(env_node.get("relative_humidity_pct", 50.0)),
            ground_reflection_coeff=float(env_node.get("ground_reflection_coeff", 0.9)),
        )
        array = ArrayGeometry.default(
            num_mics=int(arr_node.get("num_mics", 4)),
            aperture_m=float(arr_node.get("aperture_m", 0.24)),
            height_m=float(arr_node.get("height_m", 2.7)),
        )
        lanes = LaneLayout(
            near_y_m=float(lane_node.get("near_y_m", 5.75)),
            far_y_m=float(lane_node.get("far_y_m", 9.25)),
        )
        features = FeatureConfig(
            enabled=bool(feat_node.get("enabled", True)),
            frame_len=int(feat_node.get("frame_len", DEFAULT_FRAME_LEN)),
            hop=int(feat_node.get("hop", DEFAULT_HOP)),
            max_lag=int(feat_node.get("max_lag", DEFAULT_MAX_LAG)),
        )
        kwargs = dict(
            profile=profile,
            environment=environment,
            array=array,
            lanes=lanes,
            features=features,
            hours=float(gen_node.get("hours", doc.get("hours", 1.0))),
            seed=int(gen_node.get("seed", doc.get("seed", 0))),
            segment_len_s=float(gen_node.get("segment_len_s", 60.0)),
            event_duration_s=float(gen_node.get("event_duration_s", 30.0)),
            sim_sample_rate=int(gen_node.get("sim_sample_rate", 48_000)),
            dataset_sample_rate=int(gen_node.get("dataset_sample_rate", 16_000)),
            audio_format=str(gen_node.get("audio_format", "float32")),
            workers=int(gen_node.get("workers", 1)),
            output_dir=Path(gen_node["output_dir"]) if "output_dir" in gen_node else None,
        )
        kwargs.update(overrides)
        return GenerationConfig(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigurationError(f"{path}: {exc}") from exc
