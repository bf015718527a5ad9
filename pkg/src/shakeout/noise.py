"""Weight/input perturbation rules.

The core rule randomly replaces each weight w by either a sign-flipped
constant -c*sgn(w) (switch r = 0, probability tau) or by the enhanced value
(w + c*tau*sgn(w)) / (1 - tau) (switch r = 1/(1-tau)).  Both branches keep
zero weights at zero and the expectation over the switch equals w, so the
weighted sum stays unbiased.  Dropout is the c = 0 special case; Gaussian
dropout (multiplicative Normal(1, tau/(1-tau)) noise) is kept as a
comparison baseline.
"""

import enum
import math
from dataclasses import dataclass

import numpy as np

from .core import RngStream, bernoulli_switches


class NoiseKind(str, enum.Enum):
    SHAKEOUT = "shakeout"
    DROPOUT = "dropout"
    GAUSSIAN_DROPOUT = "gaussian-dropout"
    NONE = "none"


@dataclass(frozen=True)
class ShakeoutParams:
    """Hyper-parameters of the stochastic regularizer.

    tau is the switch-off probability in (0, 1); c >= 0 scales the
    sign-dependent component.  kind=dropout behaves exactly like
    kind=shakeout with c forced to 0.
    """

    tau: float = 0.5
    c: float = 0.0
    kind: NoiseKind = NoiseKind.SHAKEOUT

    def __post_init__(self):
        kind = NoiseKind(self.kind)
        object.__setattr__(self, "kind", kind)
        if kind is not NoiseKind.NONE and not 0.0 < self.tau < 1.0:
            raise ValueError(f"tau must lie in (0, 1), got {self.tau}")
        if self.c < 0.0:
            raise ValueError(f"c must be nonnegative, got {self.c}")
        if kind is not NoiseKind.SHAKEOUT and self.c != 0.0:
            # dropout == shakeout at c=0; silently honouring a nonzero c
            # here would change the semantics of the kind selector.
            object.__setattr__(self, "c", 0.0)

    @property
    def active(self) -> bool:
        return self.kind is not NoiseKind.NONE


@dataclass(frozen=True)
class SwitchTensor:
    """Realized switches for one forward pass, with their stream of origin."""

    values: np.ndarray
    stream: RngStream


def draw_switches(stream: RngStream, shape, tau: float) -> SwitchTensor:
    values = bernoulli_switches(stream, shape, tau)
    return SwitchTensor(values=values, stream=stream)


def _check_switch(r: float, tau: float) -> None:
    keep = 1.0 / (1.0 - tau)
    if not (r == 0.0 or math.isclose(r, keep, rel_tol=1e-12)):
        raise ValueError(f"switch value {r} is neither 0 nor 1/(1-tau)={keep}")


def perturb_weight(w: float, s: float, r: float, params: ShakeoutParams) -> float:
    """Apply one realized switch to one weight.

    r=0 reverses the weight to -c*s; r=1/(1-tau) rescales and biases it to
    (w + c*tau*s)/(1-tau).  s must be sgn(w) with sgn(0)=0, which makes
    both branches return exactly 0 for a zero weight.
    """
    _check_switch(r, params.tau)
    if r == 0.0:
        return -params.c * s
    return (w + params.c * params.tau * s) / (1.0 - params.tau)


def perturb_weights(w: np.ndarray, r: np.ndarray, params: ShakeoutParams) -> np.ndarray:
    """Vectorized form of :func:`perturb_weight` with s = sgn(w)."""
    s = np.sign(w)
    kept = (w + params.c * params.tau * s) / (1.0 - params.tau)
    return np.where(r == 0.0, -params.c * s, kept)


def expected_perturbed_weight(w: float, params: ShakeoutParams) -> float:
    """E_r[perturbed weight]; analytically equal to w (unbiasedness)."""
    tau, c = params.tau, params.c
    s = float(np.sign(w))
    return tau * (-c * s) + (1.0 - tau) * (w + c * tau * s) / (1.0 - tau)


def input_scale_factor(r: float, w: float, c: float) -> float:
    """The input-space view: x is scaled by gamma = r + c(r-1)/|w|.

    Only defined for w != 0; a zero weight has no input-space equivalent
    and the weight-space rule must be used instead.
    """
    if w == 0.0:
        raise ValueError("input scale factor is undefined for w = 0")
    return r + c * (r - 1.0) / abs(w)


def gaussian_dropout_sigma2(tau: float) -> float:
    """Variance of the matched multiplicative Gaussian noise, tau/(1-tau)."""
    if not 0.0 < tau < 1.0:
        raise ValueError(f"tau must lie in (0, 1), got {tau}")
    return tau / (1.0 - tau)


def gaussian_dropout_scale(stream: RngStream, tau: float, shape=None):
    """Draw multiplicative noise from Normal(1, tau/(1-tau))."""
    sigma = math.sqrt(gaussian_dropout_sigma2(tau))
    draw = stream.generator().normal(loc=1.0, scale=sigma, size=shape)
    return float(draw) if shape is None else draw
