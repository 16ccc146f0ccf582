"""Rate constraint (saturating tanh) and range constraint (scaled sigmoid).

The rate constraint bounds the time derivative of each solver state by
``alpha``; the range constraint squashes solver states into ``(0, p)`` for
the mean and ``(0, q)`` for the standard deviation.  Which of the two are
active is selected by :attr:`ConstraintConfig.mode`:

========================  ==========  ===========
mode                      rate bound  range bound
========================  ==========  ===========
``none`` (D-NODE)         no          no
``rate_only`` (CD-NODE)   yes         no
``rate_and_range``        yes         yes
========================  ==========  ===========
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import expit, logit

from .beta import bell_sigma_bound

_TINY = np.finfo(float).tiny

MODES = ("none", "rate_only", "rate_and_range")


@dataclass(frozen=True)
class ConstraintConfig:
    alpha_mu: float = 0.5
    alpha_sigma: float = 10.0
    p: float = 0.75
    q: float = 0.15
    mode: str = "rate_and_range"
    # per-frame sigma <- min(sigma, 0.999 * bell bound(mu)); only in rate_and_range
    validity_clamp: bool = True
    # feed gamma(state) instead of the raw state into the governing network
    constrained_state_input: bool = False

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"unknown constraint mode {self.mode!r}; expected one of {MODES}")
        if not (self.alpha_mu > 0 and self.alpha_sigma > 0):
            raise ValueError("rate bounds alpha_mu and alpha_sigma must be positive")
        if not 0.0 < self.p <= 1.0:
            raise ValueError(f"range scale p must lie in (0, 1], got {self.p}")
        if not self.q > 0.0:
            raise ValueError(f"range scale q must be positive, got {self.q}")
        if self.mode == "rate_and_range":
            bound = q_bound(self.p)
            if self.q > bound:
                raise ValueError(
                    f"q={self.q} violates the bell-shape admissibility bound q <= {bound:.6f} at p={self.p}"
                )

    @property
    def rate(self) -> bool:
        return self.mode != "none"

    @property
    def range(self) -> bool:
        return self.mode == "rate_and_range"

    @property
    def alphas(self) -> np.ndarray:
        return np.array([self.alpha_mu, self.alpha_sigma])

    @property
    def scales(self) -> np.ndarray:
        return np.array([self.p, self.q])


def q_bound(p: float) -> float:
    """Largest admissible ``q`` for range scale ``p`` (0 when ``p == 1``)."""
    if p >= 1.0:
        return 0.0
    return bell_sigma_bound(p)


def phi(z, alpha):
    """Rate constraint ``alpha * tanh(z / alpha)``; output lies in ``(-alpha, alpha)``.

    ``tanh`` rounds to exactly 1 in double precision once its argument passes
    about 19, so saturated values are pulled back one ulp inside the interval.
    """
    edge = np.nextafter(alpha, 0.0)
    return np.clip(alpha * np.tanh(np.divide(z, alpha)), -edge, edge)


def phi_grad(z, alpha):
    """``d phi / dz = sech^2(z / alpha)``.

    Written as ``4 e / (1 + e)^2`` with ``e = exp(-2|z/alpha|)``; ``1 - tanh^2``
    loses its relative accuracy to cancellation once the slope gets small.
    """
    e = np.exp(-2.0 * np.abs(np.divide(z, alpha)))
    return 4.0 * e / (1.0 + e) ** 2


def gamma(z, scale):
    """Range constraint ``scale * sigmoid(z)``; output lies in ``(0, scale)``.

    Saturated values are kept strictly inside the open interval.
    """
    return np.clip(scale * expit(z), _TINY, np.nextafter(scale, 0.0))


def gamma_grad(z, scale):
    return scale * expit(z) * expit(np.negative(z))


def gamma_mu(z, p):
    return gamma(z, p)


def gamma_sigma(z, q):
    return gamma(z, q)


def invert_gamma(target, scale):
    """Raw state whose range-constrained image is ``target``: ``logit(target / scale)``."""
    target = np.asarray(target, dtype=float)
    if np.any((target <= 0.0) | (target >= scale)):
        raise ValueError(f"target must lie strictly inside (0, {scale}), got {target}")
    out = logit(target / scale)
    return float(out) if out.ndim == 0 else out
