"""Sleep features from staged wearable records and their association with PHQ-8 scores."""

from .cohort import (
    CohortDataset,
    NightRecord,
    ParticipantProfile,
    Phq8Record,
    SleepEpisode,
    SleepStage,
    assemble_nights,
    ingest_cohort,
    write_cohort,
)
from .features import (
    FEATURE_NAMES,
    FeatureVector,
    NightMetrics,
    apply_inclusion,
    extract_features,
    night_metrics,
    window_features,
)
from .lmm import ModelFit, ModelSpec, fit_lmm
from .stats import bh_adjust, boxcox, spearman

__version__ = "0.1.0"

__all__ = [
    "CohortDataset",
    "NightRecord",
    "ParticipantProfile",
    "Phq8Record",
    "SleepEpisode",
    "SleepStage",
    "assemble_nights",
    "ingest_cohort",
    "write_cohort",
    "FEATURE_NAMES",
    "FeatureVector",
    "NightMetrics",
    "apply_inclusion",
    "extract_features",
    "night_metrics",
    "window_features",
    "ModelFit",
    "ModelSpec",
    "fit_lmm",
    "bh_adjust",
    "boxcox",
    "spearman",
]
