"""Shakeout: stochastic weight-perturbation regularization.

Training randomly reverses each input unit's contribution to a
sign-flipped constant or enhances it, leaving the pre-activation unbiased
while implicitly penalizing a combination of the L0, L1 and L2 norms of
the weights.
"""

from .core import RngStream, bernoulli_switches, matmul
from .glm import GLMSpec, shakeout_reg_exact, shakeout_reg_mc
from .noise import NoiseKind, ShakeoutParams, SwitchTensor

__all__ = [
    "RngStream",
    "bernoulli_switches",
    "matmul",
    "GLMSpec",
    "shakeout_reg_exact",
    "shakeout_reg_mc",
    "NoiseKind",
    "ShakeoutParams",
    "SwitchTensor",
]

__version__ = "0.1.0"
