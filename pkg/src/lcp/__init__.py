"""Localized conformal prediction."""

from .engine import (
    BandBatch,
    CalibrationSet,
    LcpState,
    PredictionBand,
    SplitLCP,
    approx_conditional_band,
    naive_band,
    randomized_threshold,
    split_cp_threshold,
    split_lcp_fast,
)
from .localizer import (
    ConstantLocalizer,
    Euclidean,
    HardBall,
    LocalizerSpec,
    WeightTable,
    composite_dissimilarity,
    cumulative_matrix,
    hard_threshold_dissimilarity,
    kernel_eval,
    weight_row,
)
from .wdist import WeightedDist, membership_equivalent, quantile, replace_last_with_infinity

__all__ = [
    "BandBatch",
    "CalibrationSet",
    "ConstantLocalizer",
    "Euclidean",
    "HardBall",
    "LcpState",
    "LocalizerSpec",
    "PredictionBand",
    "SplitLCP",
    "WeightTable",
    "WeightedDist",
    "approx_conditional_band",
    "composite_dissimilarity",
    "cumulative_matrix",
    "hard_threshold_dissimilarity",
    "kernel_eval",
    "membership_equivalent",
    "naive_band",
    "quantile",
    "randomized_threshold",
    "replace_last_with_infinity",
    "split_cp_threshold",
    "split_lcp_fast",
    "weight_row",
]
