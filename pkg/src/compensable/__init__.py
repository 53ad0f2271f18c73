"""Projector compensation with surface-aware adaptation of stylized images."""

from .compensate import CompensationResult, invert_analytic, invert_iterative
from .metrics import MetricsTriple, evaluate
from .photomodel import FitConfig, PhotometricModel, fit, predict
from .psa import PSAConfig, ThetaAdapt, run_psa

__version__ = "0.1.0"

__all__ = [
    "CompensationResult",
    "FitConfig",
    "MetricsTriple",
    "PSAConfig",
    "PhotometricModel",
    "ThetaAdapt",
    "evaluate",
    "fit",
    "invert_analytic",
    "invert_iterative",
    "predict",
    "run_psa",
]
