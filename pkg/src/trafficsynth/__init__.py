"""Synthetic multichannel traffic-noise datasets and counting metrics."""

__version__ = "0.1.0"

from .composer import (
    CATEGORY_NAMES,
    LabeledSegment,
    LaneLayout,
    SegmentLabel,
    TrafficProfile,
    VehicleEvent,
    render_timeline,
    sample_schedule,
    segment_timeline,
)
from .errors import ConfigurationError, DomainError, TrafficSynthError, ValidationError
from .evaluation import (
    EvalReport,
    accuracy,
    aggregate_folds,
    evaluate_counts,
    mae_misclassified,
    merge_directions,
    round_predictions,
)
from .features import (
    FrameParams,
    GccPhatTensor,
    SpectrogramTensor,
    gcc_phat,
    peak_normalize,
    resample_to_16k,
    stft_magnitude,
)
from .propagation import (
    ArrayGeometry,
    Direction,
    Environment,
    PassbyRecording,
    Trajectory,
    air_absorption_db_per_m,
    make_trajectory,
    simulate_moving_source,
    simulate_passby,
)
from .sources import (
    SourceSignalPair,
    ThirdOctaveSpectrum,
    VehicleClass,
    build_vehicle_sources,
    normalize_engine_to_rolling,
    rolling_noise_spectrum,
    synthesize_engine_noise,
    synthesize_shaped_noise,
)

__all__ = [
    "__version__",
    "ArrayGeometry",
    "CATEGORY_NAMES",
    "ConfigurationError",
    "Direction",
    "DomainError",
    "EvalReport",
    "Environment",
    "FrameParams",
    "GccPhatTensor",
    "LabeledSegment",
    "LaneLayout",
    "PassbyRecording",
    "SegmentLabel",
    "SourceSignalPair",
    "SpectrogramTensor",
    "ThirdOctaveSpectrum",
    "TrafficProfile",
    "TrafficSynthError",
    "Trajectory",
    "ValidationError",
    "VehicleClass",
    "VehicleEvent",
    "accuracy",
    "aggregate_folds",
    "air_absorption_db_per_m",
    "build_vehicle_sources",
    "evaluate_counts",
    "gcc_phat",
    "mae_misclassified",
    "make_trajectory",
    "merge_directions",
    "normalize_engine_to_rolling",
    "peak_normalize",
    "render_timeline",
    "resample_to_16k",
    "rolling_noise_spectrum",
    "round_predictions",
    "sample_schedule",
    "segment_timeline",
    "simulate_moving_source",
    "simulate_passby",
    "stft_magnitude",
    "synthesize_engine_noise",
    "synthesize_shaped_noise",
]
