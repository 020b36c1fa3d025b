"""FERI: fairness-aware multitask training with dynamic per-subgroup task weighting."""
from .errors import FeriError
from .optim import FeriHyper, FeriState, train_epoch_baseline, train_epoch_feri

__all__ = ["FeriError", "FeriHyper", "FeriState", "train_epoch_baseline", "train_epoch_feri"]
__version__ = "0.1.0"
