from .live import (
    LiveAgentSpec,
    LiveBackendError,
    LiveResponse,
    is_rejection,
    live_batch,
    live_query,
)
from .synthetic import (
    REFERENCE_ACCURACIES,
    REFERENCE_COSTS,
    CalibrationError,
    DifficultyDistribution,
    SyntheticPool,
    SyntheticPoolSpec,
    calibrate_skills,
    expected_accuracy,
    generate_synthetic,
)

__all__ = [
    "LiveAgentSpec",
    "LiveBackendError",
    "LiveResponse",
    "is_rejection",
    "live_batch",
    "live_query",
    "REFERENCE_ACCURACIES",
    "REFERENCE_COSTS",
    "CalibrationError",
    "DifficultyDistribution",
    "SyntheticPool",
    "SyntheticPoolSpec",
    "calibrate_skills",
    "expected_accuracy",
    "generate_synthetic",
]
