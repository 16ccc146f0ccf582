"""Synthetic multi-rater dataset with known ground-truth Beta moments.

Two independent latent signals drive everything:

* ``z1(t)``, a sum of slow sinusoids, sets the true mean
  ``mu*(t) = 0.5 + 0.25 tanh(z1)``;
* ``z2(t)``, built the same way, sets the true spread
  ``sigma*(t) = 0.05 + 0.05 sigmoid(z2)``.

Each rater reports ``mu*`` plus a fixed bias plus AR(1) noise whose marginal
SD is ``rater_noise_sd * sigma*``, mapped back to the [-1, 1] rating scale
and clipped to +-0.99.  Ratings lag the latent state by ``annotation_delay_s``
like human annotators do.  Features are a noisy affine-plus-tanh transform
of ``(z1, z2)`` at the same instant, so the labels are learnable from them
once the delay is compensated.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.special import expit

from . import data
from .labels import MomentSequence, unmap_rating
from .metrics import delay_frames

AR_COEF = 0.9


@dataclass(frozen=True)
class SynthSpec:
    utterance_count: int = 18
    frames_per_utterance: int = 1500
    rater_count: int = 6
    feature_dim: int = 16
    latent_sinusoid_count: int = 4
    rater_noise_sd: float = 1.0
    rater_bias_sd: float = 0.02
    feature_noise_sd: float = 0.1
    annotation_delay_s: float = 4.0
    frame_period: float = 0.04
    dev_fraction: float = 0.5
    seed: int = 0

    def __post_init__(self):
        counts = (self.utterance_count, self.frames_per_utterance, self.rater_count,
                  self.feature_dim, self.latent_sinusoid_count)
        if min(counts) < 1:
            raise ValueError("all synthetic counts must be >= 1")
        if min(self.rater_noise_sd, self.rater_bias_sd, self.feature_noise_sd, self.annotation_delay_s) < 0:
            raise ValueError("noise levels and delay must be >= 0")
        if not 0 <= self.dev_fraction < 1:
            raise ValueError("dev_fraction must lie in [0, 1)")


@dataclass
class SynthUtterance:
    id: str
    features: np.ndarray
    ratings: np.ndarray
    truth: MomentSequence


def _latent(rng, t, K):
    freq = rng.uniform(0.01, 0.2, K)
    amp = rng.uniform(0.3, 0.8, K)
    phase = rng.uniform(0, 2 * np.pi, K)
    return (amp * np.sin(2 * np.pi * freq * t[:, None] + phase)).sum(axis=1)


def generate(spec: SynthSpec = SynthSpec()) -> list:
    """In-memory synthetic utterances, deterministic in ``spec.seed``."""
    rng = np.random.default_rng(spec.seed)
    D, M, N = spec.feature_dim, spec.rater_count, spec.frames_per_utterance
    mix = rng.normal(size=(D, 2))
    offset = rng.normal(scale=0.5, size=D)
    d = delay_frames(spec.annotation_delay_s, spec.frame_period)
    out = []
    for u in range(spec.utterance_count):
        t = spec.frame_period * np.arange(-d, N)
        z1 = _latent(rng, t, spec.latent_sinusoid_count)
        z2 = _latent(rng, t, spec.latent_sinusoid_count)
        mu = 0.5 + 0.25 * np.tanh(z1)
        sd = 0.05 + 0.05 * expit(z2)
        # annotators react d frames late
        mu_lab, sd_lab = mu[:N], sd[:N]
        z1, z2 = z1[d:], z2[d:]
        feats = np.tanh(np.column_stack([z1, z2]) @ mix.T + offset)
        feats = feats + spec.feature_noise_sd * rng.normal(size=feats.shape)

        bias = spec.rater_bias_sd * rng.normal(size=M)
        eps = np.empty((N, M))
        eps[0] = rng.normal(size=M)
        innov = np.sqrt(1 - AR_COEF**2) * rng.normal(size=(N, M))
        for n in range(1, N):
            eps[n] = AR_COEF * eps[n - 1] + innov[n]
        value = mu_lab[:, None] + bias + spec.rater_noise_sd * sd_lab[:, None] * eps
        ratings = np.clip(unmap_rating(value), -0.99, 0.99)
        out.append(SynthUtterance(f"utt{u:03d}", feats, ratings, MomentSequence(mu_lab, sd_lab, spec.frame_period)))
    return out


def write_dataset(out_dir, spec: SynthSpec = SynthSpec()) -> Path:
    """Write features, ratings, ground truth and a manifest; returns the manifest path."""
    out_dir = Path(out_dir)
    utts = generate(spec)
    n_dev = int(round(spec.dev_fraction * len(utts)))
    n_train = len(utts) - n_dev
    entries = []
    for i, u in enumerate(utts):
        feat, rate, truth = f"features/{u.id}.csv", f"ratings/{u.id}.csv", f"truth/{u.id}.csv"
        data.write_features(out_dir / feat, u.features)
        data.write_ratings(out_dir / rate, u.ratings)
        data.write_labels(out_dir / truth, u.truth)
        part = "train" if i < n_train else "dev"
        entries.append(data.ManifestEntry(u.id, part, feat, rate, None, truth))
    manifest = out_dir / "manifest.json"
    data.write_manifest(manifest, data.DatasetManifest(entries, spec.frame_period, out_dir))
    return manifest
