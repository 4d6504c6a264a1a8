"""Deep imbalanced learning toolkit: balanced metrics, re-balancing losses,
samplers, splits and a small numpy MLP trainer."""

from .core import ClassStats, ConfusionMatrix, Dataset, build_class_stats, \
    confusion_from_predictions, make_rng
from .metrics import MetricReport, balanced_accuracy, balanced_f1, balanced_precision

__version__ = "0.1.0"
