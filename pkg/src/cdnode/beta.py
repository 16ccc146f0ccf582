"""Beta distribution parameterizations and the bell-shape validity region.

Three equivalent parameterizations are supported:

* ``BetaShape``     shape parameters ``(a, b)``
* ``BetaMoments``   mean ``mu`` and standard deviation ``sigma``
* ``BetaModeConc``  mode ``w`` and concentration ``k``

``sigma`` is always a standard deviation, never a variance.  The model works
in ``(mu, sigma)``; conversion to ``(a, b)`` happens only when a density is
evaluated.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import gammaln

__all__ = [
    "BetaShape",
    "BetaMoments",
    "BetaModeConc",
    "moments_to_shape",
    "shape_to_moments",
    "shape_to_mode_conc",
    "log_pdf",
    "log_beta",
    "bell_sigma_bound",
    "bell_sigma_bound_grad",
    "is_bell_shaped",
]


@dataclass(frozen=True)
class BetaShape:
    a: float
    b: float

    def __post_init__(self):
        if not (self.a > 0 and self.b > 0):
            raise ValueError(f"shape parameters must be positive, got a={self.a}, b={self.b}")


@dataclass(frozen=True)
class BetaMoments:
    mu: float
    sigma: float

    def __post_init__(self):
        if not 0.0 < self.mu < 1.0:
            raise ValueError(f"mean must lie in (0, 1), got {self.mu}")
        if not self.sigma > 0.0:
            raise ValueError(f"standard deviation must be positive, got {self.sigma}")
        if self.sigma**2 >= self.mu * (1.0 - self.mu):
            raise ValueError(
                f"no Beta distribution has mean {self.mu} and sd {self.sigma}: "
                f"variance must be below mu*(1-mu) = {self.mu * (1.0 - self.mu)}"
            )


@dataclass(frozen=True)
class BetaModeConc:
    w: float
    k: float

    def __post_init__(self):
        if not 0.0 < self.w < 1.0:
            raise ValueError(f"mode must lie in (0, 1), got {self.w}")
        if not self.k > 2.0:
            raise ValueError(f"concentration must exceed 2 for a bell shape, got {self.k}")


def moments_to_shape(m: BetaMoments) -> BetaShape:
    """Moment matching: ``a = mu*nu``, ``b = (1-mu)*nu`` with ``nu = mu(1-mu)/sigma^2 - 1``."""
    nu = m.mu * (1.0 - m.mu) / m.sigma**2 - 1.0
    return BetaShape(m.mu * nu, (1.0 - m.mu) * nu)


def shape_to_moments(s: BetaShape) -> BetaMoments:
    total = s.a + s.b
    var = s.a * s.b / (total**2 * (total + 1.0))
    return BetaMoments(s.a / total, math.sqrt(var))


def shape_to_mode_conc(s: BetaShape) -> BetaModeConc:
    if not is_bell_shaped(s):
        raise ValueError(f"mode/concentration needs a > 1 and b > 1, got a={s.a}, b={s.b}")
    k = s.a + s.b
    return BetaModeConc((s.a - 1.0) / (k - 2.0), k)


def log_beta(a, b):
    """``ln B(a, b)`` via log-gamma; broadcasts over arrays."""
    return gammaln(a) + gammaln(b) - gammaln(np.add(a, b))


def log_pdf(x: float, s: BetaShape) -> float:
    if not 0.0 < x < 1.0:
        raise ValueError(f"Beta density is evaluated on the open interval (0, 1), got x={x}")
    return float(
        (s.a - 1.0) * math.log(x) + (s.b - 1.0) * math.log1p(-x) - log_beta(s.a, s.b)
    )


def bell_sigma_bound(mu):
    """Supremum of the standard deviation for which the Beta with mean ``mu`` keeps ``a > 1`` and ``b > 1``.

    Works elementwise on arrays.  At ``mu = p`` this is the right-hand side of
    the admissibility condition on the range scale ``q``.
    """
    mu = np.asarray(mu, dtype=float)
    if np.any((mu <= 0.0) | (mu >= 1.0)):
        raise ValueError("mean must lie in (0, 1)")
    var = np.minimum(mu**2 * (1.0 - mu) / (1.0 + mu), (1.0 - mu) ** 2 * mu / (2.0 - mu))
    out = np.sqrt(var)
    return float(out) if out.ndim == 0 else out


def bell_sigma_bound_grad(mu):
    """Derivative of :func:`bell_sigma_bound` with respect to ``mu`` (one-sided at the branch switch)."""
    mu = np.asarray(mu, dtype=float)
    g1 = mu**2 * (1.0 - mu) / (1.0 + mu)
    g2 = (1.0 - mu) ** 2 * mu / (2.0 - mu)
    # d/dmu of each branch, quotient rule
    dg1 = ((2.0 * mu - 3.0 * mu**2) * (1.0 + mu) - mu**2 * (1.0 - mu)) / (1.0 + mu) ** 2
    dg2 = ((1.0 - mu) * (1.0 - 3.0 * mu) * (2.0 - mu) + (1.0 - mu) ** 2 * mu) / (2.0 - mu) ** 2
    use1 = g1 <= g2
    g = np.where(use1, g1, g2)
    dg = np.where(use1, dg1, dg2)
    out = dg / (2.0 * np.sqrt(g))
    return float(out) if out.ndim == 0 else out


def is_bell_shaped(s: BetaShape) -> bool:
    return s.a > 1.0 and s.b > 1.0
