"""Copula-augmented deep variational information bottleneck.

Normal-score copula transforms, a small dense encoder/decoder trained on the
variational IB objective, the sparse Gaussian IB diagonal bound, and drivers
for the synthetic spiral and Communities-and-Crime experiments.
"""
from .copula import CopulaTransform, fit, from_normal_scores, gaussian_copula_mi, to_normal_scores
from .errors import CopulaDIBError, DataError, DomainError, NumericError, UsageError
from .experiments import InfoCurve, SweepConfig, run_sweep
from .ib_model import CurvePoint, IbModel, build_model, ib_loss
from .kernels import BACKEND

__version__ = "0.1.0"

__all__ = [
    "BACKEND",
    "CopulaDIBError",
    "CopulaTransform",
    "CurvePoint",
    "DataError",
    "DomainError",
    "IbModel",
    "InfoCurve",
    "NumericError",
    "SweepConfig",
    "UsageError",
    "build_model",
    "fit",
    "from_normal_scores",
    "gaussian_copula_mi",
    "ib_loss",
    "run_sweep",
    "to_normal_scores",
]
