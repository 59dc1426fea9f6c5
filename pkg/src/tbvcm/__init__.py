"""Tree boosted varying coefficient models."""

from .boost import FitConfig, FitTrace, fit, residual_norm
from .core import (ActionSchema, Column, Dataset, Loss, Scheme, StandardizationParams, Task, VcmModel,
                   coefficient_at, fit_glm, linear_predictor, predict, pseudo_gradient)
from .errors import DataError, ModelFormatError, NumericError, UnseenLevelError, UsageError, VcmError
from .eval import (CvReport, GlobalLinear, PlainGbm, RecoveryReport, SaturatedLinear, benchmark,
                   cross_validate, fit_baseline, metric, recovery)
from .tree import DecisionTree, TreeConfig, fit_tree

__version__ = "0.1.0"

__all__ = [
    "ActionSchema", "Column", "CvReport", "DataError", "Dataset", "DecisionTree", "FitConfig", "FitTrace",
    "GlobalLinear", "Loss", "ModelFormatError", "NumericError", "PlainGbm", "RecoveryReport",
    "SaturatedLinear", "Scheme", "StandardizationParams", "Task", "TreeConfig", "UnseenLevelError",
    "UsageError", "VcmError", "VcmModel", "benchmark", "coefficient_at", "cross_validate", "fit",
    "fit_baseline", "fit_glm", "fit_tree", "linear_predictor", "metric", "predict", "pseudo_gradient",
    "recovery", "residual_norm",
]
