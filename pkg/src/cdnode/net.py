"""Governing networks for the mean and standard-deviation dynamics.

One shared feature layer (``D_in -> 64``, tanh) feeds two task heads.  Each
head takes the 64 features concatenated with its own scalar state and runs
three dense layers ``65 -> H -> H -> 1`` (tanh, tanh, linear).  The rate
constraint is applied by the caller, not here.

All parameters live in one flat vector laid out as
``[shared | head_mu | head_sigma]``; the parameter vector of task ``i`` is
``[shared | head_i]``.

Besides the single-frame :func:`forward` / :func:`backward` pair, the module
exposes batched helpers used by the ODE engine.  The shared layer and the
feature half of the first head layer do not depend on the state, so they are
evaluated once per time point (:func:`feature_projection`) and only the
state-dependent remainder runs inside the solver (:func:`heads_forward`).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

FEATURE_WIDTH = 64
MU, SIGMA = 0, 1
TASKS = (MU, SIGMA)


def shared_size(d_in: int) -> int:
    return d_in * FEATURE_WIDTH + FEATURE_WIDTH


def head_size(hidden: int) -> int:
    return (FEATURE_WIDTH + 1) * hidden + hidden + hidden * hidden + hidden + hidden + 1


def parameter_count(d_in: int, hidden: int) -> int:
    return shared_size(d_in) + 2 * head_size(hidden)


def _split(vec, d_in, hidden):
    """Named views into a flat parameter (or gradient) vector."""
    out = {}
    pos = 0

    def take(shape):
        nonlocal pos
        n = int(np.prod(shape))
        view = vec[pos : pos + n].reshape(shape)
        pos += n
        return view

    out["Ws"] = take((FEATURE_WIDTH, d_in))
    out["bs"] = take((FEATURE_WIDTH,))
    heads = []
    for _ in TASKS:
        heads.append(
            {
                "W1": take((hidden, FEATURE_WIDTH + 1)),
                "b1": take((hidden,)),
                "W2": take((hidden, hidden)),
                "b2": take((hidden,)),
                "W3": take((1, hidden)),
                "b3": take((1,)),
            }
        )
    out["heads"] = heads
    return out


@dataclass
class GoverningNetwork:
    d_in: int
    hidden: int
    seed: int
    params: np.ndarray = field(repr=False)

    def __post_init__(self):
        self.params = np.asarray(self.params, dtype=float)
        expected = parameter_count(self.d_in, self.hidden)
        if self.params.shape != (expected,):
            raise ValueError(
                f"parameter vector has shape {self.params.shape}, expected ({expected},) "
                f"for d_in={self.d_in}, hidden={self.hidden}"
            )

    @property
    def size(self) -> int:
        return self.params.size

    def views(self, vec=None):
        return _split(self.params if vec is None else vec, self.d_in, self.hidden)

    def task_index(self, task: int) -> np.ndarray:
        """Indices into :attr:`params` of the parameters task ``task`` depends on."""
        ns, nh = shared_size(self.d_in), head_size(self.hidden)
        start = ns + task * nh
        return np.concatenate([np.arange(ns), np.arange(start, start + nh)])

    def theta(self, task: int) -> np.ndarray:
        return self.params[self.task_index(task)]

    def set_theta(self, task: int, theta) -> None:
        self.params[self.task_index(task)] = theta

    def copy(self) -> "GoverningNetwork":
        return GoverningNetwork(self.d_in, self.hidden, self.seed, self.params.copy())


FINAL_SCALE = 0.1


def init_network(d_in: int, hidden: int = 64, seed: int = 0, final_scale: float = FINAL_SCALE) -> GoverningNetwork:
    """Glorot-uniform weights and zero biases, deterministic in ``seed``.

    The linear output layer of each head is further multiplied by
    ``final_scale`` so the initial vector field is close to zero.  A full-size
    random drift tends to push the rate constraint into saturation within the
    first epoch, where its gradient vanishes.
    """
    if d_in < 1 or hidden < 1:
        raise ValueError(f"d_in and hidden must be >= 1, got {d_in}, {hidden}")
    rng = np.random.default_rng(seed)
    params = np.zeros(parameter_count(d_in, hidden))
    v = _split(params, d_in, hidden)

    def glorot(w):
        fan_out, fan_in = w.shape
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        w[...] = rng.uniform(-limit, limit, size=w.shape)

    glorot(v["Ws"])
    for h in v["heads"]:
        for name in ("W1", "W2", "W3"):
            glorot(h[name])
        h["W3"] *= final_scale
    return GoverningNetwork(d_in, hidden, seed, params)


def _check_finite(x, psi):
    if not np.all(np.isfinite(x)) or not np.isfinite(psi):
        raise ValueError("network inputs must be finite")


def forward(net: GoverningNetwork, task: int, x, psi: float) -> float:
    """Pre-constraint network output ``f_task(x, psi)`` for a single frame."""
    x = np.asarray(x, dtype=float)
    if x.shape != (net.d_in,):
        raise ValueError(f"feature frame must have length {net.d_in}, got shape {x.shape}")
    _check_finite(x, psi)
    v = net.views()
    h = np.tanh(v["Ws"] @ x + v["bs"])
    p = v["heads"][task]
    a1 = np.tanh(p["W1"] @ np.append(h, psi) + p["b1"])
    a2 = np.tanh(p["W2"] @ a1 + p["b2"])
    return float((p["W3"] @ a2 + p["b3"])[0])


def backward(net: GoverningNetwork, task: int, x, psi: float, upstream: float):
    """Reverse-mode gradient of ``upstream * f_task(x, psi)``.

    Returns ``(grad_theta, grad_psi)`` where ``grad_theta`` is ordered like
    :meth:`GoverningNetwork.theta` (shared layer first, then the task head).
    """
    x = np.asarray(x, dtype=float)
    if x.shape != (net.d_in,):
        raise ValueError(f"feature frame must have length {net.d_in}, got shape {x.shape}")
    _check_finite(x, psi)
    v = net.views()
    p = v["heads"][task]
    h = np.tanh(v["Ws"] @ x + v["bs"])
    inp = np.append(h, psi)
    a1 = np.tanh(p["W1"] @ inp + p["b1"])
    a2 = np.tanh(p["W2"] @ a1 + p["b2"])

    grad = np.zeros_like(net.params)
    g = net.views(grad)
    gp = g["heads"][task]
    gz = np.array([upstream], dtype=float)
    gp["b3"][...] = gz
    gp["W3"][...] = np.outer(gz, a2)
    d2 = (p["W3"].T @ gz) * (1.0 - a2**2)
    gp["b2"][...] = d2
    gp["W2"][...] = np.outer(d2, a1)
    d1 = (p["W2"].T @ d2) * (1.0 - a1**2)
    gp["b1"][...] = d1
    gp["W1"][...] = np.outer(d1, inp)
    ginp = p["W1"].T @ d1
    dh = ginp[:FEATURE_WIDTH] * (1.0 - h**2)
    g["bs"][...] = dh
    g["Ws"][...] = np.outer(dh, x)
    return grad[net.task_index(task)], float(ginp[FEATURE_WIDTH])


def lipschitz_bound(net: GoverningNetwork, task: int) -> float:
    """Upper bound on ``|f(x + d) - f(x)| / |d|`` from spectral norms (tanh slope <= 1)."""
    v = net.views()
    p = v["heads"][task]
    norms = [
        np.linalg.norm(v["Ws"], 2),
        np.linalg.norm(p["W1"][:, :FEATURE_WIDTH], 2),
        np.linalg.norm(p["W2"], 2),
        np.linalg.norm(p["W3"], 2),
    ]
    return float(np.prod(norms))


# --- batched helpers for the solver ------------------------------------------


class StackedHeads:
    """Both task heads stacked along a leading task axis for vectorized evaluation."""

    def __init__(self, net: GoverningNetwork):
        v = net.views()
        heads = v["heads"]
        self.net = net
        self.Ws, self.bs = v["Ws"], v["bs"]
        self.W1h = np.stack([h["W1"][:, :FEATURE_WIDTH] for h in heads])  # (2, H, 64)
        self.w_state = np.stack([h["W1"][:, FEATURE_WIDTH] for h in heads])  # (2, H)
        self.b1 = np.stack([h["b1"] for h in heads])
        self.W2 = np.stack([h["W2"] for h in heads])  # (2, H, H)
        self.b2 = np.stack([h["b2"] for h in heads])
        self.w3 = np.stack([h["W3"][0] for h in heads])  # (2, H)
        self.b3 = np.array([h["b3"][0] for h in heads])


def shared_features(net: GoverningNetwork, X) -> np.ndarray:
    v = net.views()
    return np.tanh(np.asarray(X) @ v["Ws"].T + v["bs"])


def feature_projection(sh: StackedHeads, Hf) -> np.ndarray:
    """State-independent part of the first head layer: ``(..., 64) -> (..., 2, H)``."""
    return np.einsum("...f,khf->...kh", Hf, sh.W1h) + sh.b1


def heads_forward(sh: StackedHeads, U, s):
    """Head outputs for both tasks.  ``U``: (B, 2, H) projection, ``s``: (B, 2) head inputs."""
    a1 = np.tanh(U + s[..., None] * sh.w_state)
    a2 = np.tanh(np.einsum("bkh,kgh->bkg", a1, sh.W2) + sh.b2)
    z = np.einsum("bkh,kh->bk", a2, sh.w3) + sh.b3
    return z, (s, a1, a2)


def heads_backward(sh: StackedHeads, cache, gz, gacc):
    """Backprop ``gz`` (B, 2) through :func:`heads_forward`.

    Head-parameter gradients (except the feature half of the first layer and
    its bias, which flow through ``gU``) are accumulated into ``gacc``, a
    dict of arrays shaped like the stacked weights.  Returns ``(gU, gs)``.
    """
    s, a1, a2 = cache
    gacc["b3"] += gz.sum(axis=0)
    gacc["w3"] += np.einsum("bk,bkh->kh", gz, a2)
    d2 = gz[..., None] * sh.w3 * (1.0 - a2**2)
    gacc["b2"] += d2.sum(axis=0)
    gacc["W2"] += np.einsum("bkg,bkh->kgh", d2, a1)
    d1 = np.einsum("bkg,kgh->bkh", d2, sh.W2) * (1.0 - a1**2)
    gacc["w_state"] += np.einsum("bkh,bk->kh", d1, s)
    gs = np.einsum("bkh,kh->bk", d1, sh.w_state)
    return d1, gs


def new_accumulator(sh: StackedHeads) -> dict:
    return {
        "w_state": np.zeros_like(sh.w_state),
        "b1": np.zeros_like(sh.b1),
        "W1h": np.zeros_like(sh.W1h),
        "W2": np.zeros_like(sh.W2),
        "b2": np.zeros_like(sh.b2),
        "w3": np.zeros_like(sh.w3),
        "b3": np.zeros_like(sh.b3),
        "Ws": np.zeros_like(sh.Ws),
        "bs": np.zeros_like(sh.bs),
    }


def projection_backward(sh: StackedHeads, X, Hf, gU, gacc) -> None:
    """Finish the backward pass from ``gU`` (..., 2, H) down to the shared layer."""
    gU2 = gU.reshape(-1, *gU.shape[-2:])
    Hf2 = Hf.reshape(-1, Hf.shape[-1])
    X2 = np.asarray(X).reshape(-1, X.shape[-1])
    gacc["b1"] += gU2.sum(axis=0)
    gacc["W1h"] += np.einsum("nkh,nf->khf", gU2, Hf2)
    gH = np.einsum("nkh,khf->nf", gU2, sh.W1h)
    dpre = gH * (1.0 - Hf2**2)
    gacc["bs"] += dpre.sum(axis=0)
    gacc["Ws"] += dpre.T @ X2


def flatten_accumulator(net: GoverningNetwork, gacc) -> np.ndarray:
    """Scatter a stacked-gradient accumulator into a flat vector shaped like ``net.params``."""
    grad = np.zeros_like(net.params)
    g = net.views(grad)
    g["Ws"][...] = gacc["Ws"]
    g["bs"][...] = gacc["bs"]
    for k, h in enumerate(g["heads"]):
        h["W1"][:, :FEATURE_WIDTH] = gacc["W1h"][k]
        h["W1"][:, FEATURE_WIDTH] = gacc["w_state"][k]
        h["b1"][...] = gacc["b1"][k]
        h["W2"][...] = gacc["W2"][k]
        h["b2"][...] = gacc["b2"][k]
        h["W3"][0] = gacc["w3"][k]
        h["b3"][0] = gacc["b3"][k]
    return grad
