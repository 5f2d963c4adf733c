"""Generalized integrative PCA for block-wise missing multi-source data."""
from .data_model import ModelParams, MultiSourceDataset, ObservationPattern, RankSpec, SourceSpec, log_likelihood
from .fitter import FitConfig, FitReport, fit, regularize
from .imputation import diff_r_miss, impute
from .rank_selection import stepwise_select

__version__ = "0.1.0"

__all__ = [
    "ModelParams", "MultiSourceDataset", "ObservationPattern", "RankSpec", "SourceSpec",
    "log_likelihood", "FitConfig", "FitReport", "fit", "regularize", "diff_r_miss",
    "impute", "stepwise_select",
]
