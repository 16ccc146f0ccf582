"""ODE integration of the constrained dynamics.

Generic explicit integrators (Euler, classical RK4, Dormand-Prince 5(4)) work
on any ``f(t, y)``.  The model-specific solver :func:`solve_cdnode` integrates

    ds_i/dt = phi_i(f_i(x(t), s_i))        i in {mu, sigma}

over the frame grid, where ``x(t)`` interpolates the frame features.  The
fixed-step RK4 path records a tape so that :func:`backprop_through_solve`
returns exact gradients of the discrete solution (discretize-then-optimize).
The adaptive Dormand-Prince path is forward-only.

Every solver routine is batched over a leading axis of independent sequences
of equal length.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import net as nn
from .beta import bell_sigma_bound, bell_sigma_bound_grad
from .constraints import ConstraintConfig, gamma, gamma_grad, phi, phi_grad

CLAMP_FACTOR = 0.999


class SolverError(RuntimeError):
    """Numerical failure inside an ODE solve."""


@dataclass(frozen=True)
class TimeGrid:
    t0: float = 0.0
    step: float = 0.04
    count: int = 2

    def __post_init__(self):
        if not self.step > 0:
            raise ValueError("time step must be positive")
        if self.count < 2:
            raise ValueError("a time grid needs at least two points")

    @property
    def times(self) -> np.ndarray:
        return self.t0 + self.step * np.arange(self.count)


@dataclass(frozen=True)
class SolveConfig:
    method: str = "rk4_fixed"
    substeps_per_frame: int = 1
    rtol: float = 1e-7
    atol: float = 1e-13
    feature_interp: str = "linear"
    frame_period: float = 0.04
    max_steps_per_frame: int = 10_000

    def __post_init__(self):
        if self.method not in ("rk4_fixed", "dopri5"):
            raise ValueError(f"unknown solver method {self.method!r}")
        if self.feature_interp not in ("linear", "piecewise_constant"):
            raise ValueError(f"unknown feature interpolation {self.feature_interp!r}")
        if self.substeps_per_frame < 1:
            raise ValueError("substeps_per_frame must be >= 1")
        if not (self.rtol > 0 and self.atol > 0):
            raise ValueError("solver tolerances must be positive")
        if not self.frame_period > 0:
            raise ValueError("frame period must be positive")


# --- generic integrators ------------------------------------------------------

_DP_C = np.array([0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0, 1.0])
_DP_A = [
    [],
    [1 / 5],
    [3 / 40, 9 / 40],
    [44 / 45, -56 / 15, 32 / 9],
    [19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729],
    [9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656],
    [35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84],
]
_DP_B5 = np.array([35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84, 0.0])
_DP_B4 = np.array(
    [5179 / 57600, 0.0, 7571 / 16695, 393 / 640, -92097 / 339200, 187 / 2100, 1 / 40]
)
_DP_E = _DP_B5 - _DP_B4


def euler_step(f, t, y, h):
    return y + h * f(t, y)


def rk4_step(f, t, y, h):
    k1 = f(t, y)
    k2 = f(t + h / 2, y + h / 2 * k1)
    k3 = f(t + h / 2, y + h / 2 * k2)
    k4 = f(t + h, y + h * k3)
    return y + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)


def dopri5_step(f, t, y, h):
    """One Dormand-Prince step; returns ``(y5, err)`` with ``err`` the embedded 5-4 difference."""
    ks = []
    for i in range(7):
        yi = y
        for j, a in enumerate(_DP_A[i]):
            if a != 0.0:
                yi = yi + h * a * ks[j]
        ks.append(f(t + _DP_C[i] * h, yi))
        if i == 5:
            y5 = y + h * sum(b * k for b, k in zip(_DP_B5, ks) if b != 0.0)
    # stage 7 is evaluated at y5 (first-same-as-last)
    err = h * sum(e * k for e, k in zip(_DP_E, ks) if e != 0.0)
    return y5, err


_FIXED = {
    "euler": euler_step,
    "rk4": rk4_step,
    "rk4_fixed": rk4_step,
    "dopri5": lambda f, t, y, h: dopri5_step(f, t, y, h)[0],
}


def integrate_fixed(f, y0, t0, t1, n_steps, method="rk4"):
    step = _FIXED[method]
    h = (t1 - t0) / n_steps
    y = np.asarray(y0, dtype=float)
    for i in range(n_steps):
        y = step(f, t0 + i * h, y, h)
    return y


def _error_norm(err, y0, y1, rtol, atol):
    scale = atol + rtol * np.maximum(np.abs(y0), np.abs(y1))
    return float(np.sqrt(np.mean((err / scale) ** 2)))


def _initial_step(f, t0, y0, t1, rtol, atol):
    f0 = f(t0, y0)
    scale = atol + rtol * np.abs(y0)
    d0 = np.sqrt(np.mean((y0 / scale) ** 2))
    d1 = np.sqrt(np.mean((f0 / scale) ** 2))
    h = 1e-6 if d0 < 1e-5 or d1 < 1e-5 else 0.01 * d0 / d1
    return min(h, abs(t1 - t0))


def integrate_adaptive(f, y0, t0, t1, rtol=1e-7, atol=1e-13, h0=None, max_steps=100_000):
    """Adaptive Dormand-Prince from ``t0`` to exactly ``t1``.

    Returns ``(y1, h_next, n_accepted, n_rejected)``; ``h_next`` is the step
    size proposal to continue with.
    """
    y = np.asarray(y0, dtype=float)
    t = t0
    h = _initial_step(f, t0, y, t1, rtol, atol) if h0 is None else h0
    accepted = rejected = 0
    while t < t1:
        if accepted + rejected >= max_steps:
            raise SolverError(f"step budget exhausted at t={t:.6g}")
        truncated = t + h >= t1
        h_try = t1 - t if truncated else h
        if h_try <= 16 * np.finfo(float).eps * max(abs(t), 1.0):
            raise SolverError(f"step size underflow at t={t:.6g}")
        y_new, err = dopri5_step(f, t, y, h_try)
        if not np.all(np.isfinite(y_new)):
            raise SolverError(f"non-finite state at t={t:.6g}")
        en = _error_norm(err, y, y_new, rtol, atol)
        if en <= 1.0:
            t = t1 if truncated else t + h_try
            y = y_new
            accepted += 1
            factor = 5.0 if en == 0.0 else min(5.0, max(0.2, 0.9 * en ** (-0.2)))
            # a step shortened to hit t1 says little about a larger step
            h = max(h, h_try * factor) if truncated and factor >= 1.0 else h_try * factor
        else:
            rejected += 1
            h = h_try * max(0.2, 0.9 * en ** (-0.2))
    h_next = h
    return y, h_next, accepted, rejected


def convergence_order(method: str, n_steps: int | None = None, t1: float = 1.0) -> float:
    """Empirical order of ``method`` on ds/dt = -s, s(0) = 1, from runs at h and h/2."""
    if n_steps is None:
        n_steps = {"euler": 64, "rk4": 16, "rk4_fixed": 16, "dopri5": 8}[method]

    def f(t, y):
        return -y

    exact = math.exp(-t1)
    err_h = abs(integrate_fixed(f, 1.0, 0.0, t1, n_steps, method) - exact)
    err_h2 = abs(integrate_fixed(f, 1.0, 0.0, t1, 2 * n_steps, method) - exact)
    return float(math.log2(err_h / err_h2))


# --- the constrained neural ODE ----------------------------------------------


@dataclass
class StateTrajectory:
    """Per-frame solver states and range-constrained outputs.

    ``raw_states`` and ``outputs`` have shape (B, N, 2) with the last axis
    ordered (mu, sigma); single-sequence solves use B = 1 and expose the
    ``mu`` / ``sigma`` convenience views.
    """

    raw_states: np.ndarray
    outputs: np.ndarray
    method: str
    tape: "_Tape | None" = field(default=None, repr=False)

    @property
    def mu(self) -> np.ndarray:
        return self.outputs[0, :, 0]

    @property
    def sigma(self) -> np.ndarray:
        return self.outputs[0, :, 1]


@dataclass
class _Tape:
    sh: nn.StackedHeads
    X: np.ndarray  # features at stage positions, (B, N-1, 2K+1, D)
    Hf: np.ndarray  # shared features at stage positions
    U: np.ndarray  # first-layer projections, (B, N-1, 2K+1, 2, H)
    cc: ConstraintConfig
    sc: SolveConfig
    stages: list  # per substep: list of 4 (s_stage, head cache, z)
    raw: np.ndarray


def _stage_features(X, K, interp):
    """Features at the 2K+1 half-substep positions of every frame interval: (B, N-1, 2K+1, D)."""
    left, right = X[:, :-1], X[:, 1:]
    c = np.arange(2 * K + 1) / (2 * K)
    if interp == "linear":
        return left[:, :, None, :] + c[None, None, :, None] * (right - left)[:, :, None, :]
    return np.repeat(left[:, :, None, :], 2 * K + 1, axis=2)


def _rhs(sh, cc, U, s, keep):
    """Constrained time derivative for both tasks at one stage; ``U`` (B, 2, H), ``s`` (B, 2)."""
    if cc.constrained_state_input:
        inp = gamma(s, cc.scales) if cc.range else s
    else:
        inp = s
    z, cache = nn.heads_forward(sh, U, inp)
    ds = phi(z, cc.alphas) if cc.rate else z
    return ds, ((s, cache, z) if keep else None)


def _rhs_backward(sh, cc, rec, gds, gacc):
    s, cache, z = rec
    gz = gds * phi_grad(z, cc.alphas) if cc.rate else gds
    gU, ginp = nn.heads_backward(sh, cache, gz, gacc)
    if cc.constrained_state_input and cc.range:
        ginp = ginp * gamma_grad(s, cc.scales)
    return gU, ginp


def apply_output_map(raw, cc: ConstraintConfig):
    """Map raw states (..., 2) to predicted (mu, sigma) under the constraint mode."""
    if not cc.range:
        return raw.copy()
    out = gamma(raw, cc.scales)
    if cc.validity_clamp:
        cap = CLAMP_FACTOR * bell_sigma_bound(out[..., 0])
        out[..., 1] = np.minimum(out[..., 1], cap)
    return out


def _output_map_backward(raw, cc, gout):
    if not cc.range:
        return gout.copy()
    gam = gamma(raw, cc.scales)
    g = gout.copy()
    if cc.validity_clamp:
        cap = CLAMP_FACTOR * bell_sigma_bound(gam[..., 0])
        clamped = gam[..., 1] > cap
        dcap = CLAMP_FACTOR * bell_sigma_bound_grad(gam[..., 0])
        g[..., 0] = g[..., 0] + np.where(clamped, gout[..., 1] * dcap, 0.0)
        g[..., 1] = np.where(clamped, 0.0, gout[..., 1])
    return g * gamma_grad(raw, cc.scales)


def _as_batch(X, init):
    X = np.asarray(X, dtype=float)
    init = np.asarray(init, dtype=float)
    single = X.ndim == 2
    if single:
        X = X[None]
        init = init.reshape(1, 2)
    if init.shape != (X.shape[0], 2):
        raise ValueError(f"initial states must have shape ({X.shape[0]}, 2), got {init.shape}")
    if X.shape[1] < 2:
        raise ValueError("feature sequence needs at least two frames")
    if not np.all(np.isfinite(X)) or not np.all(np.isfinite(init)):
        raise ValueError("features and initial states must be finite")
    return X, init


def solve_cdnode(
    net: nn.GoverningNetwork,
    cc: ConstraintConfig,
    X,
    init,
    sc: SolveConfig = SolveConfig(),
    keep_tape: bool = False,
) -> StateTrajectory:
    """Integrate both task states across the frames of ``X``.

    ``X`` is (N, D) or a batch (B, N, D); ``init`` the raw initial states,
    (2,) or (B, 2).  With ``keep_tape=True`` (RK4 only) the stage values are
    kept for :func:`backprop_through_solve`.
    """
    X, init = _as_batch(X, init)
    if X.shape[2] != net.d_in:
        raise ValueError(f"features have dimension {X.shape[2]}, network expects {net.d_in}")
    if sc.method == "dopri5":
        if keep_tape:
            raise ValueError("gradients are only available through the rk4_fixed solver")
        raw = _solve_dopri5(net, cc, X, init, sc)
        return StateTrajectory(raw, apply_output_map(raw, cc), sc.method)
    raw, tape = _solve_rk4(net, cc, X, init, sc, keep_tape)
    return StateTrajectory(raw, apply_output_map(raw, cc), sc.method, tape)


def _solve_rk4(net, cc, X, init, sc, keep):
    B, N, _ = X.shape
    K = sc.substeps_per_frame
    h = sc.frame_period / K
    sh = nn.StackedHeads(net)
    Xs = _stage_features(X, K, sc.feature_interp)
    Hf = nn.shared_features(net, Xs)
    U = nn.feature_projection(sh, Hf)
    raw = np.empty((B, N, 2))
    raw[:, 0] = init
    s = init.copy()
    stages = []
    for n in range(N - 1):
        Un = U[:, n]
        for j in range(K):
            u0, um, u1 = Un[:, 2 * j], Un[:, 2 * j + 1], Un[:, 2 * j + 2]
            k1, r1 = _rhs(sh, cc, u0, s, keep)
            k2, r2 = _rhs(sh, cc, um, s + h / 2 * k1, keep)
            k3, r3 = _rhs(sh, cc, um, s + h / 2 * k2, keep)
            k4, r4 = _rhs(sh, cc, u1, s + h * k3, keep)
            s = s + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
            if keep:
                stages.append((r1, r2, r3, r4))
        if not np.all(np.isfinite(s)):
            t = (n + 1) * sc.frame_period
            raise SolverError(f"non-finite state at t={t:.6g} (frame {n + 1})")
        raw[:, n + 1] = s
    tape = _Tape(sh, Xs, Hf, U, cc, sc, stages, raw) if keep else None
    return raw, tape


def _solve_dopri5(net, cc, X, init, sc):
    B, N, _ = X.shape
    sh = nn.StackedHeads(net)
    dt = sc.frame_period
    raw = np.empty((B, N, 2))
    raw[:, 0] = init
    s = init.copy()
    h = None
    for n in range(N - 1):
        x0, x1 = X[:, n], X[:, n + 1]
        t_left = n * dt

        def f(t, y, x0=x0, x1=x1, t_left=t_left):
            c = (t - t_left) / dt
            x = x0 + c * (x1 - x0) if sc.feature_interp == "linear" else x0
            U = nn.feature_projection(sh, nn.shared_features(net, x))
            return _rhs(sh, cc, U, y, False)[0]

        try:
            s, h, _, _ = integrate_adaptive(
                f, s, t_left, t_left + dt, sc.rtol, sc.atol, h, sc.max_steps_per_frame
            )
        except SolverError as exc:
            raise SolverError(f"{exc} (frame interval {n}->{n + 1})") from None
        raw[:, n + 1] = s
    return raw


def backprop_through_solve(trajectory: StateTrajectory, upstream):
    """Exact gradients of ``sum(upstream * outputs)`` through an RK4 solve.

    ``upstream`` has the shape of ``trajectory.outputs`` (or (N, 2) for a
    single sequence).  Returns ``(grad_params, grad_init)``: ``grad_params``
    is aligned with ``net.params`` (shared layer gradients summed over both
    tasks) and ``grad_init`` has the shape of the initial states (B, 2).
    """
    tape = trajectory.tape
    if tape is None or trajectory.method != "rk4_fixed":
        raise ValueError("trajectory has no RK4 tape; solve with method='rk4_fixed' and keep_tape=True")
    gout = np.asarray(upstream, dtype=float)
    if gout.ndim == 2:
        gout = gout[None]
    if gout.shape != trajectory.outputs.shape:
        raise ValueError(f"upstream shape {gout.shape} does not match outputs {trajectory.outputs.shape}")
    sh, cc, sc = tape.sh, tape.cc, tape.sc
    K = sc.substeps_per_frame
    h = sc.frame_period / K
    N = tape.raw.shape[1]
    gs_frames = _output_map_backward(tape.raw, cc, gout)
    gacc = nn.new_accumulator(sh)
    gU = np.zeros_like(tape.U)
    lam = gs_frames[:, N - 1].copy()
    idx = len(tape.stages)
    for n in range(N - 2, -1, -1):
        for j in range(K - 1, -1, -1):
            idx -= 1
            r1, r2, r3, r4 = tape.stages[idx]
            gk4 = lam * (h / 6)
            gk3 = lam * (h / 3)
            gk2 = lam * (h / 3)
            gk1 = lam * (h / 6)
            gu, gy = _rhs_backward(sh, cc, r4, gk4, gacc)
            gU[:, n, 2 * j + 2] += gu
            lam = lam + gy
            gk3 = gk3 + h * gy
            gu, gy = _rhs_backward(sh, cc, r3, gk3, gacc)
            gU[:, n, 2 * j + 1] += gu
            lam = lam + gy
            gk2 = gk2 + h / 2 * gy
            gu, gy = _rhs_backward(sh, cc, r2, gk2, gacc)
            gU[:, n, 2 * j + 1] += gu
            lam = lam + gy
            gk1 = gk1 + h / 2 * gy
            gu, gy = _rhs_backward(sh, cc, r1, gk1, gacc)
            gU[:, n, 2 * j] += gu
            lam = lam + gy
        lam = lam + gs_frames[:, n]
    nn.projection_backward(sh, tape.X, tape.Hf, gU, gacc)
    return nn.flatten_accumulator(sh.net, gacc), lam


def rate_bound_holds(raw, cc: ConstraintConfig, frame_period: float, slack: float = 1e-9) -> bool:
    """True when every per-frame raw-state change respects ``alpha * frame_period``."""
    steps = np.abs(np.diff(raw, axis=-2))
    return bool(np.all(steps <= cc.alphas * frame_period * (1 + slack)))
