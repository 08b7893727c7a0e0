"""Hyperbolic neural networks on the Poincare ball with Euclidean feature clipping."""

from . import geometry, mlr, net, rng
from .geometry import BallDomainError
from .mlr import ClipConfig, LinearHead, MlrHead, NumericalError

__all__ = ["geometry", "mlr", "net", "rng", "BallDomainError", "ClipConfig", "LinearHead",
           "MlrHead", "NumericalError"]
__version__ = "0.1.0"
