"""CCC loss, Adam, and the chunked training loop."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from . import ode
from .constraints import ConstraintConfig, invert_gamma
from .labels import MomentSequence
from .net import SIGMA, GoverningNetwork, head_size, shared_size

log = logging.getLogger(__name__)

MIN_TAIL_CHUNK = 10


class TrainingError(RuntimeError):
    pass


@dataclass(frozen=True)
class LossConfig:
    lambda1: float = 1.0
    lambda2: float = 10.0

    def __post_init__(self):
        if self.lambda1 < 0 or self.lambda2 < 0 or (self.lambda1 == 0 and self.lambda2 == 0):
            raise ValueError("loss weights must be non-negative and not both zero")


@dataclass(frozen=True)
class TrainConfig:
    # one tenth of the published rates; 0.01 saturates the rate constraint
    # on single-chunk updates and the gradients die
    lr_mu: float = 0.001
    lr_sigma: float = 0.0001
    lr_decay: float = 0.9
    epochs: int = 60
    chunk_frames: int = 100
    chunks_per_batch: int = 1
    seed: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def __post_init__(self):
        if self.lr_mu < 0 or self.lr_sigma < 0:
            raise ValueError("learning rates must be non-negative")
        if self.chunk_frames < 2:
            raise ValueError("chunk_frames must be >= 2")
        if self.epochs < 0 or self.chunks_per_batch < 1:
            raise ValueError("epochs must be >= 0 and chunks_per_batch >= 1")


# --- concordance correlation -------------------------------------------------


def ccc(a, b):
    """Concordance correlation over the last axis, population moments.

    Two constant sequences give 1 when equal and 0 otherwise.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape or a.shape[-1] < 2:
        raise ValueError("ccc needs two sequences of equal length >= 2")
    ma, mb = a.mean(-1, keepdims=True), b.mean(-1, keepdims=True)
    da, db = a - ma, b - mb
    cov = (da * db).mean(-1)
    den = (da**2).mean(-1) + (db**2).mean(-1) + (ma - mb)[..., 0] ** 2
    with np.errstate(invalid="ignore", divide="ignore"):
        out = np.where(den > 0, 2 * cov / np.where(den > 0, den, 1.0), 1.0)
    return float(out) if out.ndim == 0 else out


def ccc_grad(a, b):
    """Gradient of ``ccc(a, b)`` with respect to ``a`` (last axis)."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    n = a.shape[-1]
    ma, mb = a.mean(-1, keepdims=True), b.mean(-1, keepdims=True)
    da, db = a - ma, b - mb
    cov = (da * db).mean(-1, keepdims=True)
    den = (da**2).mean(-1, keepdims=True) + (db**2).mean(-1, keepdims=True) + (ma - mb) ** 2
    safe = np.where(den > 0, den, 1.0)
    g = (2 * db / n * safe - 2 * cov * 2 * (a - mb) / n) / safe**2
    return np.where(den > 0, g, 0.0)


def _as_pairs(x):
    if isinstance(x, MomentSequence):
        return np.column_stack([x.mu, x.sigma])
    return np.asarray(x, dtype=float)


def multitask_loss(pred, truth, lc: LossConfig = LossConfig()):
    """``lambda1 (1 - ccc_mu) + lambda2 (1 - ccc_sigma)`` and its gradient on ``pred``.

    ``pred`` / ``truth`` are (..., N, 2) arrays ordered (mu, sigma), or
    :class:`MomentSequence`.  Leading axes are independent sequences; the
    returned loss has their shape.
    """
    p, t = _as_pairs(pred), _as_pairs(truth)
    if p.shape != t.shape:
        raise ValueError(f"prediction shape {p.shape} differs from truth shape {t.shape}")
    pm, ps = p[..., 0], p[..., 1]
    tm, ts = t[..., 0], t[..., 1]
    loss = lc.lambda1 * (1 - ccc(pm, tm)) + lc.lambda2 * (1 - ccc(ps, ts))
    grad = np.empty_like(p)
    grad[..., 0] = -lc.lambda1 * ccc_grad(pm, tm)
    grad[..., 1] = -lc.lambda2 * ccc_grad(ps, ts) if lc.lambda2 else 0.0
    return loss, grad


# --- Adam --------------------------------------------------------------------


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    t: int = 0

    @classmethod
    def zeros(cls, n):
        return cls(np.zeros(n), np.zeros(n), 0)


def adam_step(params, grads, state: AdamState, lr, beta1=0.9, beta2=0.999, eps=1e-8):
    """One bias-corrected Adam update; ``lr`` may be a per-parameter array."""
    params = np.asarray(params, dtype=float)
    grads = np.asarray(grads, dtype=float)
    if params.shape != grads.shape or state.m.shape != params.shape:
        raise ValueError("params, grads and optimizer state must share a shape")
    t = state.t + 1
    m = beta1 * state.m + (1 - beta1) * grads
    v = beta2 * state.v + (1 - beta2) * grads * grads
    mhat = m / (1 - beta1**t)
    vhat = v / (1 - beta2**t)
    new = params - lr * mhat / (np.sqrt(vhat) + eps)
    return new, AdamState(m, v, t)


def learning_rates(net: GoverningNetwork, lr_mu, lr_sigma) -> np.ndarray:
    """Per-parameter rates: the shared layer and mean head use ``lr_mu``."""
    lr = np.full(net.size, float(lr_mu))
    start = shared_size(net.d_in) + SIGMA * head_size(net.hidden)
    lr[start:] = lr_sigma
    return lr


# --- data and the loop -------------------------------------------------------


@dataclass
class Utterance:
    """Aligned features (N, D) and per-frame labels of one recording."""

    id: str
    features: np.ndarray
    labels: MomentSequence

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=float)
        if len(self.features) != len(self.labels):
            raise ValueError(f"utterance {self.id}: {len(self.features)} feature frames vs {len(self.labels)} labels")

    @property
    def targets(self) -> np.ndarray:
        return np.column_stack([self.labels.mu, self.labels.sigma])


def chunk_bounds(n_frames: int, chunk: int, min_tail: int = MIN_TAIL_CHUNK):
    """Non-overlapping consecutive windows; a short tail is kept when it has ``min_tail`` frames."""
    out = [(lo, lo + chunk) for lo in range(0, n_frames - chunk + 1, chunk)]
    tail = n_frames - (out[-1][1] if out else 0)
    if tail >= max(min_tail, 2):
        out.append((n_frames - tail, n_frames))
    return out


def initial_state(first, cc: ConstraintConfig):
    """Raw solver state whose output equals the (mu, sigma) pair ``first``.

    Under the range constraint targets outside ``(0, p) x (0, q)`` are pulled
    just inside before inversion.
    """
    first = np.asarray(first, dtype=float)
    if not cc.range:
        return first.copy()
    scales = cc.scales
    tgt = np.clip(first, 1e-3 * scales, (1 - 1e-3) * scales)
    return np.stack([invert_gamma(tgt[..., 0], scales[0]), invert_gamma(tgt[..., 1], scales[1])], axis=-1)


def eval_initial_state(cc: ConstraintConfig):
    """Start of every evaluation solve: rating-space zero for the mean, ``q/2`` for the sd."""
    return initial_state(np.array([0.5, cc.q / 2]), cc)


def predict(net, cc, features, sc: ode.SolveConfig, init=None) -> np.ndarray:
    """Outputs (N, 2) for a whole utterance, started from the test-phase state unless ``init`` is given."""
    init = eval_initial_state(cc) if init is None else init
    return ode.solve_cdnode(net, cc, features, init, sc).outputs[0]


@dataclass
class TrainResult:
    net: GoverningNetwork
    best_epoch: int
    history: list = field(default_factory=list)
    final_net: GoverningNetwork | None = None


def _batches(chunks, size):
    """Consecutive groups of at most ``size`` chunks sharing one length."""
    batch = []
    for c in chunks:
        if batch and (len(batch) == size or c[2] - c[1] != batch[0][2] - batch[0][1]):
            yield batch
            batch = []
        batch.append(c)
    if batch:
        yield batch


def train(
    dataset,
    net: GoverningNetwork,
    cc: ConstraintConfig = ConstraintConfig(),
    tc: TrainConfig = TrainConfig(),
    lc: LossConfig = LossConfig(),
    sc: ode.SolveConfig = ode.SolveConfig(),
    dev=None,
    dev_sc: ode.SolveConfig | None = None,
    on_epoch=None,
) -> TrainResult:
    """Train ``net`` in place on chunked utterances.

    Each epoch shuffles the chunks (seeded), solves every batch from its
    first-frame label, backpropagates the multitask CCC loss through the RK4
    solve and takes one Adam step.  Both learning rates decay by
    ``lr_decay`` after every epoch.  The epoch log carries the mean loss and
    the CCC of all chunk predictions pooled together, plus full-utterance
    dev CCC when ``dev`` is given.  The returned ``net`` is the copy from the
    epoch with the lowest mean training loss.
    """
    dataset = list(dataset)
    if not dataset:
        raise TrainingError("training set is empty")
    if sc.method != "rk4_fixed":
        raise TrainingError("training requires the rk4_fixed solver")
    chunks = [
        (u_i, lo, hi)
        for u_i, u in enumerate(dataset)
        for lo, hi in chunk_bounds(len(u.labels), tc.chunk_frames)
    ]
    if not chunks:
        raise TrainingError(f"no utterance is long enough for a chunk of {MIN_TAIL_CHUNK} frames")
    rng = np.random.default_rng(tc.seed)
    state = AdamState.zeros(net.size)
    lr_mu, lr_sigma = tc.lr_mu, tc.lr_sigma
    history = []
    best = (np.inf, 0, net.copy())
    for epoch in range(1, tc.epochs + 1):
        order = rng.permutation(len(chunks))
        lr = learning_rates(net, lr_mu, lr_sigma)
        losses, preds, truths = [], [], []
        for b_i, batch in enumerate(_batches([chunks[i] for i in order], tc.chunks_per_batch)):
            X = np.stack([dataset[u].features[lo:hi] for u, lo, hi in batch])
            Y = np.stack([dataset[u].targets[lo:hi] for u, lo, hi in batch])
            init = initial_state(Y[:, 0], cc)
            try:
                traj = ode.solve_cdnode(net, cc, X, init, sc, keep_tape=True)
            except ode.SolverError as exc:
                raise TrainingError(f"epoch {epoch}, batch {b_i}: {exc}") from exc
            loss, gout = multitask_loss(traj.outputs, Y, lc)
            if not np.all(np.isfinite(loss)):
                u, lo, hi = batch[int(np.argmin(np.isfinite(loss)))]
                raise TrainingError(
                    f"non-finite loss at epoch {epoch}, chunk {dataset[u].id}[{lo}:{hi}]"
                )
            B = len(batch)
            grad, _ = ode.backprop_through_solve(traj, gout / B)
            net.params, state = adam_step(net.params, grad, state, lr, tc.beta1, tc.beta2, tc.eps)
            losses.extend(np.atleast_1d(loss).tolist())
            preds.append(traj.outputs.reshape(-1, 2))
            truths.append(Y.reshape(-1, 2))
        P, T = np.concatenate(preds), np.concatenate(truths)
        rec = {
            "epoch": epoch,
            "loss": float(np.mean(losses)),
            "ccc_mu": float(ccc(P[:, 0], T[:, 0])),
            "ccc_sigma": float(ccc(P[:, 1], T[:, 1])),
            "lr_mu": lr_mu,
            "lr_sigma": lr_sigma,
        }
        if dev:
            rec.update(evaluate_utterances(net, cc, dev, dev_sc or sc))
        history.append(rec)
        log.info("epoch %d loss %.4f ccc_mu %.3f ccc_sigma %.3f", epoch, rec["loss"], rec["ccc_mu"], rec["ccc_sigma"])
        if on_epoch is not None:
            on_epoch(rec, net)
        if rec["loss"] < best[0]:
            best = (rec["loss"], epoch, net.copy())
        lr_mu *= tc.lr_decay
        lr_sigma *= tc.lr_decay
    return TrainResult(best[2], best[1], history, net.copy())


def evaluate_utterances(net, cc, utterances, sc) -> dict:
    """Pooled full-utterance CCC of raw (unsmoothed) predictions, keys prefixed ``dev_``."""
    P = np.concatenate([predict(net, cc, u.features, sc) for u in utterances])
    T = np.concatenate([u.targets for u in utterances])
    return {"dev_ccc_mu": float(ccc(P[:, 0], T[:, 0])), "dev_ccc_sigma": float(ccc(P[:, 1], T[:, 1]))}
