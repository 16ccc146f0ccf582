"""Evaluation protocol: delay compensation, smoothing, CCC and RMSE by SD decile."""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .training import ccc


@dataclass
class EvalReport:
    ccc_mu: float
    ccc_sigma: float
    rmse_by_decile: list
    decile_edges: list
    decile_counts: list
    frame_count: int
    per_utterance: dict | None = None

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d) -> "EvalReport":
        return cls(**d)


def delay_frames(delay_s: float, frame_period: float = 0.04) -> int:
    return int(round(delay_s / frame_period))


def delay_compensate(features, labels, delay_s: float = 4.0, frame_period: float = 0.04):
    """Pair ``features[n]`` with ``labels[n + d]``; the unalignable tail is dropped.

    ``labels`` is any sliceable sequence of the same length (array or
    :class:`~cdnode.labels.MomentSequence`).
    """
    n = len(features)
    if len(labels) != n:
        raise ValueError(f"features have {n} frames but labels have {len(labels)}")
    d = delay_frames(delay_s, frame_period)
    if d == 0:
        return features, labels
    if n <= d:
        raise ValueError(f"sequence of {n} frames is too short for a {d}-frame delay")
    return features[: n - d], _shift(labels, d)


def _shift(labels, d):
    from .labels import MomentSequence

    if isinstance(labels, MomentSequence):
        return MomentSequence(labels.mu[d:], labels.sigma[d:], labels.frame_period, labels.start_frame + d)
    return labels[d:]


def moving_average(seq, window: int = 12) -> np.ndarray:
    """Trailing mean over the last ``window`` frames (fewer during warm-up)."""
    if window < 1:
        raise ValueError("window must be >= 1")
    x = np.asarray(seq, dtype=float)
    # explicit windows rather than a running sum, so window=1 is exactly the identity
    pad = np.full((window - 1,) + x.shape[1:], np.nan)
    win = np.lib.stride_tricks.sliding_window_view(np.concatenate([pad, x]), window, axis=0)
    return np.nanmean(win, axis=-1)


def rmse_by_decile(pred_mu, truth_mu, truth_sigma):
    """RMSE of the mean, bucketed by deciles of the ground-truth SD.

    Returns ``(rmse, edges, counts)``.  Edges are linear-interpolation
    quantiles at 0, 10, ..., 100 %; bucket ``d`` holds frames with
    ``edges[d] <= sd < edges[d+1]`` and the last bucket is closed.  Empty
    buckets report NaN.
    """
    pred_mu, truth_mu, truth_sigma = (np.asarray(v, dtype=float) for v in (pred_mu, truth_mu, truth_sigma))
    if not (pred_mu.shape == truth_mu.shape == truth_sigma.shape):
        raise ValueError("pred_mu, truth_mu and truth_sigma must have equal lengths")
    if pred_mu.size < 10:
        raise ValueError("decile bucketing needs at least 10 frames")
    edges = np.quantile(truth_sigma, np.linspace(0, 1, 11))
    idx = np.clip(np.searchsorted(edges, truth_sigma, side="right") - 1, 0, 9)
    sq = (pred_mu - truth_mu) ** 2
    counts = np.bincount(idx, minlength=10)
    sums = np.bincount(idx, weights=sq, minlength=10)
    with np.errstate(invalid="ignore"):
        rmse = np.sqrt(sums / counts)
    return rmse, edges, counts


def evaluate(pred, truth, window: int = 12) -> EvalReport:
    """Score predictions against labels.

    ``pred`` and ``truth`` are (N, 2) arrays ordered (mu, sigma), or lists of
    them, one per utterance.  Predictions are smoothed per utterance, then
    CCC and decile RMSE are computed over all frames pooled.
    """
    if isinstance(pred, np.ndarray) and pred.ndim == 2:
        pred, truth = [pred], [truth]
    if len(pred) != len(truth):
        raise ValueError("prediction and label lists differ in length")
    smoothed = []
    for p, t in zip(pred, truth):
        p = np.asarray(p, dtype=float)
        if p.shape != np.shape(t):
            raise ValueError(f"prediction shape {p.shape} differs from label shape {np.shape(t)}")
        smoothed.append(moving_average(p, window))
    P = np.concatenate(smoothed)
    T = np.concatenate([np.asarray(t, dtype=float) for t in truth])
    rmse, edges, counts = rmse_by_decile(P[:, 0], T[:, 0], T[:, 1])
    per_utt = None
    if len(smoothed) > 1:
        per_utt = {
            "ccc_mu": [float(ccc(p[:, 0], np.asarray(t)[:, 0])) for p, t in zip(smoothed, truth)],
            "ccc_sigma": [float(ccc(p[:, 1], np.asarray(t)[:, 1])) for p, t in zip(smoothed, truth)],
        }
    return EvalReport(
        ccc_mu=float(ccc(P[:, 0], T[:, 0])),
        ccc_sigma=float(ccc(P[:, 1], T[:, 1])),
        rmse_by_decile=[float(v) for v in rmse],
        decile_edges=[float(v) for v in edges],
        decile_counts=[int(v) for v in counts],
        frame_count=int(len(P)),
        per_utterance=per_utt,
    )
