"""Per-frame Beta labels from multi-rater continuous annotations.

Pipeline: map raw ratings from [-1, 1] into (0, 1), gather the ratings of
neighbouring frames into a window, then take the maximum a posteriori
``(mu, sigma)`` over a fixed grid, with either a flat prior or a Gaussian
KDE prior fitted to first-pass maximum-likelihood labels.

The grid search uses sufficient statistics: for a window ``y`` the
log-likelihood of ``Beta(a, b)`` is
``(a-1) sum(ln y) + (b-1) sum(ln(1-y)) - n ln B(a, b)``, so each frame costs
one pass over the grid regardless of window size.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .beta import BetaMoments, bell_sigma_bound, log_beta

RATING_SCALE = 0.4975
RATING_OFFSET = 0.5


@dataclass
class RaterMatrix:
    """Ratings, frames by raters.  ``mapped`` marks values already in (0, 1)."""

    values: np.ndarray
    frame_period: float = 0.04
    mapped: bool = False

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.ndim != 2:
            raise ValueError("ratings must be a frames x raters matrix")
        n, m = self.values.shape
        if n < 1:
            raise ValueError("ratings need at least one frame")
        if m < 2:
            raise ValueError("at least 2 raters are required")
        lo, hi = (0.0, 1.0) if self.mapped else (-1.0, 1.0)
        bad = ~((self.values >= lo) & (self.values <= hi))
        if bad.any():
            r, c = np.argwhere(bad)[0]
            raise ValueError(
                f"rating {self.values[r, c]} at frame {r}, rater {c} outside [{lo}, {hi}]"
            )

    @property
    def n_frames(self) -> int:
        return self.values.shape[0]

    @property
    def n_raters(self) -> int:
        return self.values.shape[1]


@dataclass(frozen=True)
class WindowConfig:
    F: int = 6

    def __post_init__(self):
        if self.F < 0:
            raise ValueError("window half-width must be >= 0")


@dataclass
class MomentSequence:
    """Per-frame Beta ``(mu, sigma)`` labels."""

    mu: np.ndarray
    sigma: np.ndarray
    frame_period: float = 0.04
    start_frame: int = 0

    def __post_init__(self):
        self.mu = np.asarray(self.mu, dtype=float)
        self.sigma = np.asarray(self.sigma, dtype=float)
        if self.mu.shape != self.sigma.shape or self.mu.ndim != 1:
            raise ValueError("mu and sigma must be 1-d arrays of equal length")
        ok = (self.mu > 0) & (self.mu < 1) & (self.sigma > 0) & (self.sigma**2 < self.mu * (1 - self.mu))
        if not ok.all():
            i = int(np.argmin(ok))
            raise ValueError(
                f"frame {self.start_frame + i}: (mu={self.mu[i]}, sigma={self.sigma[i]}) is not a valid Beta"
            )

    def __len__(self):
        return self.mu.size

    def __getitem__(self, i) -> BetaMoments:
        return BetaMoments(float(self.mu[i]), float(self.sigma[i]))

    @property
    def frame_index(self) -> np.ndarray:
        return self.start_frame + np.arange(len(self))

    @classmethod
    def from_moments(cls, frames, frame_period=0.04):
        frames = list(frames)
        return cls([m.mu for m in frames], [m.sigma for m in frames], frame_period)


@dataclass(frozen=True)
class FitGrid:
    mu_step: float = 0.005
    sigma_step: float = 0.0025
    sigma_min: float = 0.01
    mu_lo: float = 0.0025
    mu_hi: float = 0.9975

    def axes(self):
        n_mu = int(round((self.mu_hi - self.mu_lo) / self.mu_step)) + 1
        mu = self.mu_lo + self.mu_step * np.arange(n_mu)
        top = float(np.max(bell_sigma_bound(mu)))
        n_sigma = int(np.floor((top - self.sigma_min) / self.sigma_step)) + 1
        sigma = self.sigma_min + self.sigma_step * np.arange(n_sigma)
        return mu, sigma


@dataclass
class PriorDensity:
    """Prior over ``(mu, sigma)``: flat, or a product-Gaussian KDE."""

    kind: str = "uniform"
    samples: np.ndarray = field(default_factory=lambda: np.empty((0, 2)))
    bandwidths: tuple = (1.0, 1.0)

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=float).reshape(-1, 2)
        if self.kind not in ("uniform", "kde"):
            raise ValueError(f"unknown prior kind {self.kind!r}")
        if self.kind == "kde":
            if len(self.samples) < 2:
                raise ValueError("a KDE prior needs at least 2 samples")
            if min(self.bandwidths) <= 0:
                raise ValueError("KDE bandwidths must be positive")

    def density(self, mu, sigma):
        if self.kind == "uniform":
            return np.ones(np.broadcast(mu, sigma).shape)[()]
        mu = np.asarray(mu, dtype=float)
        sigma = np.asarray(sigma, dtype=float)
        hm, hs = self.bandwidths
        zm = (mu[..., None] - self.samples[:, 0]) / hm
        zs = (sigma[..., None] - self.samples[:, 1]) / hs
        k = np.exp(-0.5 * (zm**2 + zs**2)) / (2 * np.pi * hm * hs)
        return k.mean(axis=-1)

    def log_density_grid(self, mu_axis, sigma_axis) -> np.ndarray:
        """Log prior on the (sigma, mu) grid, shape (len(sigma_axis), len(mu_axis))."""
        if self.kind == "uniform":
            return np.zeros((len(sigma_axis), len(mu_axis)))
        hm, hs = self.bandwidths
        # product kernel => density matrix is a single matrix product
        km = np.exp(-0.5 * ((mu_axis[:, None] - self.samples[:, 0]) / hm) ** 2) / (np.sqrt(2 * np.pi) * hm)
        ks = np.exp(-0.5 * ((sigma_axis[:, None] - self.samples[:, 1]) / hs) ** 2) / (np.sqrt(2 * np.pi) * hs)
        dens = ks @ km.T / len(self.samples)
        return np.log(np.maximum(dens, np.finfo(float).tiny))


BANDWIDTH_FLOOR = 1e-3


def silverman_bandwidth(x) -> float:
    x = np.asarray(x, dtype=float)
    s = np.std(x, ddof=1)
    h = 1.06 * s * len(x) ** (-0.2)
    return max(h, BANDWIDTH_FLOOR)


def fit_prior_kde(samples) -> PriorDensity:
    samples = np.asarray(samples, dtype=float).reshape(-1, 2)
    if len(samples) < 2:
        raise ValueError("a KDE prior needs at least 2 samples")
    bw = (silverman_bandwidth(samples[:, 0]), silverman_bandwidth(samples[:, 1]))
    return PriorDensity("kde", samples, bw)


def map_raw_ratings(r: RaterMatrix) -> RaterMatrix:
    if r.mapped:
        return r
    return RaterMatrix(RATING_SCALE * r.values + RATING_OFFSET, r.frame_period, mapped=True)


def unmap_rating(y):
    """Inverse of the rating map: label space back to [-1, 1]."""
    return (np.asarray(y) - RATING_OFFSET) / RATING_SCALE


def build_window(r: RaterMatrix, n: int, cfg: WindowConfig) -> np.ndarray:
    """Ratings of frames ``n-F .. n+F``, truncated at the sequence edges, flattened frame-major."""
    if not 0 <= n < r.n_frames:
        raise IndexError(f"frame {n} outside 0..{r.n_frames - 1}")
    lo, hi = max(0, n - cfg.F), min(r.n_frames, n + cfg.F + 1)
    return r.values[lo:hi].ravel()


class GridFitter:
    """MAP search over a fixed ``(mu, sigma)`` grid, reused across frames.

    The flattened grid is ordered sigma-major, so ``argmax`` (first maximum)
    breaks ties toward smaller sigma, then smaller mu.
    """

    def __init__(self, prior: PriorDensity = PriorDensity(), grid: FitGrid = FitGrid()):
        self.grid = grid
        mu, sigma = grid.axes()
        self.mu_axis, self.sigma_axis = mu, sigma
        M, S = np.meshgrid(mu, sigma)  # (n_sigma, n_mu)
        valid = S < bell_sigma_bound(M)
        nu = np.where(valid, M * (1 - M) / S**2 - 1, 2.0)
        a, b = M * nu, (1 - M) * nu
        self.valid = valid.ravel()
        self.am1 = (a - 1).ravel()
        self.bm1 = (b - 1).ravel()
        self.lnB = log_beta(a, b).ravel()
        self.log_prior = prior.log_density_grid(mu, sigma).ravel()
        self.M, self.S = M.ravel(), S.ravel()

    def fit_stats(self, s1, s2, n, block=256):
        """Argmax for many windows at once given ``sum ln y``, ``sum ln(1-y)`` and counts."""
        s1, s2, n = np.atleast_1d(s1), np.atleast_1d(s2), np.atleast_1d(n)
        out = np.empty(len(s1), dtype=int)
        for lo in range(0, len(s1), block):
            sl = slice(lo, lo + block)
            score = (
                np.outer(s1[sl], self.am1)
                + np.outer(s2[sl], self.bm1)
                - np.outer(n[sl], self.lnB)
                + self.log_prior
            )
            score[:, ~self.valid] = -np.inf
            out[sl] = np.argmax(score, axis=1)
        return self.M[out], self.S[out]

    def fit(self, window) -> BetaMoments:
        window = np.asarray(window, dtype=float).ravel()
        if window.size == 0:
            raise ValueError("cannot fit an empty window")
        if np.any((window <= 0) | (window >= 1)):
            raise ValueError("window values must lie in the open interval (0, 1)")
        mu, sigma = self.fit_stats(np.log(window).sum(), np.log1p(-window).sum(), window.size)
        return BetaMoments(float(mu[0]), float(sigma[0]))


def map_fit(window, prior: PriorDensity = PriorDensity(), grid: FitGrid = FitGrid()) -> BetaMoments:
    """MAP ``(mu, sigma)`` of a window of mapped ratings.  Builds a fresh :class:`GridFitter`."""
    return GridFitter(prior, grid).fit(window)


def _window_stats(r: RaterMatrix, F: int):
    """Window sums of ln y and ln(1-y) and window sizes for every frame, via cumulative sums."""
    l1 = np.log(r.values).sum(axis=1)
    l2 = np.log1p(-r.values).sum(axis=1)
    c1 = np.concatenate([[0.0], np.cumsum(l1)])
    c2 = np.concatenate([[0.0], np.cumsum(l2)])
    n = np.arange(r.n_frames)
    lo = np.maximum(0, n - F)
    hi = np.minimum(r.n_frames, n + F + 1)
    return c1[hi] - c1[lo], c2[hi] - c2[lo], (hi - lo) * r.n_raters


def fit_sequence(
    r: RaterMatrix,
    cfg: WindowConfig = WindowConfig(),
    prior: PriorDensity = PriorDensity(),
    grid: FitGrid = FitGrid(),
    fitter: GridFitter | None = None,
) -> MomentSequence:
    """MAP label for every frame of ``r`` (mapped to (0, 1) first if needed)."""
    r = map_raw_ratings(r)
    fitter = fitter or GridFitter(prior, grid)
    s1, s2, n = _window_stats(r, cfg.F)
    mu, sigma = fitter.fit_stats(s1, s2, n)
    return MomentSequence(mu, sigma, r.frame_period)


def fit_partition(ratings, cfg: WindowConfig = WindowConfig(), grid: FitGrid = FitGrid(), use_kde=True):
    """Two-pass labelling of a set of utterances.

    Pass one fits each frame by maximum likelihood (flat prior); the pooled
    ``(mu, sigma)`` results seed a KDE prior; pass two refits by MAP.
    Returns ``(labels, prior)``.
    """
    ml = fit_many(ratings, cfg, PriorDensity(), grid)
    if not use_kde:
        return ml, PriorDensity()
    samples = np.concatenate([np.column_stack([m.mu, m.sigma]) for m in ml])
    prior = fit_prior_kde(samples)
    return fit_many(ratings, cfg, prior, grid), prior


def fit_many(ratings, cfg, prior, grid=FitGrid()):
    fitter = GridFitter(prior, grid)
    return [fit_sequence(r, cfg, fitter=fitter) for r in ratings]
