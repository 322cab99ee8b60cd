"""Homodyned-K envelope simulation, variational Bayesian parameter estimation
and epistemic/aleatoric uncertainty decomposition."""

from hkq.errors import HkqError
from hkq.hk_model import EnvelopeSet, HkParams

__all__ = ["EnvelopeSet", "HkParams", "HkqError"]
__version__ = "0.1.0"
