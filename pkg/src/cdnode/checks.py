"""Finite-difference gradient checks for every differentiable piece.

Each check compares an analytic gradient against central differences in
float64 and returns the largest relative error over the checked
coordinates.
"""

from __future__ import annotations

import numpy as np

from . import net as nn
from . import ode
from .constraints import ConstraintConfig
from .training import LossConfig, multitask_loss

FD_STEP = 1e-5


def rel_err(analytic, numeric, floor=1e-5) -> float:
    """Largest coordinate-wise relative error.

    Central differences carry roughly 1e-11 absolute roundoff, so the
    denominator is floored at ``floor`` times the largest gradient entry
    (and at 1e-12) to keep near-zero coordinates from reporting noise.
    """
    analytic, numeric = np.asarray(analytic, dtype=float), np.asarray(numeric, dtype=float)
    scale = max(float(np.max(np.abs(analytic), initial=0.0)) * floor, 1e-12)
    den = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), scale)
    return float(np.max(np.abs(analytic - numeric) / den))


def central_diff(f, x, h=FD_STEP, coords=None):
    """Central differences of scalar ``f`` at ``x`` over ``coords`` (all by default)."""
    x = np.array(x, dtype=float)
    flat = x.reshape(-1)
    coords = range(flat.size) if coords is None else coords
    out = []
    for i in coords:
        old = flat[i]
        flat[i] = old + h
        fp = f(x)
        flat[i] = old - h
        fm = f(x)
        flat[i] = old
        out.append((fp - fm) / (2 * h))
    return np.array(out)


NET_FLOOR = 1e-4


def check_network(d_in=4, hidden=8, trials=10, seed=0, floor=NET_FLOOR) -> float:
    """``net.backward`` against differences of ``net.forward`` over random nets and inputs.

    Entries smaller than ``floor`` times the largest one are compared on an
    absolute scale: with h=1e-5 the difference quotient itself carries about
    1e-11 of roundoff, which is already 1e-6 of a gradient entry near 1e-5.
    """
    rng = np.random.default_rng(seed)
    worst = 0.0
    for trial in range(trials):
        net = nn.init_network(d_in, hidden, seed + trial)
        net.params += 0.1 * rng.normal(size=net.size)
        x = rng.normal(size=d_in)
        psi = float(rng.normal())
        for task in nn.TASKS:
            g_theta, g_psi = nn.backward(net, task, x, psi, 1.0)
            idx = net.task_index(task)
            n2 = net.copy()

            def f_theta(theta):
                n2.params[idx] = theta
                return nn.forward(n2, task, x, psi)

            worst = max(worst, rel_err(g_theta, central_diff(f_theta, net.params[idx]), floor))
            fd_psi = central_diff(lambda p: nn.forward(net, task, x, float(p[0])), [psi])
            worst = max(worst, rel_err([g_psi], fd_psi))
    return worst


def check_loss(n=20, seed=0, lc=LossConfig()) -> float:
    rng = np.random.default_rng(seed)
    pred = rng.uniform(0.1, 0.6, size=(n, 2))
    truth = rng.uniform(0.1, 0.6, size=(n, 2))
    _, g = multitask_loss(pred, truth, lc)
    fd = central_diff(lambda p: float(multitask_loss(p, truth, lc)[0]), pred)
    return rel_err(g.reshape(-1), fd)


def solve_instance(d_in=4, hidden=8, n_frames=20, seed=0, cc=None):
    """A small random model, feature sequence and first-frame label for end-to-end checks."""
    rng = np.random.default_rng(seed)
    net = nn.init_network(d_in, hidden, seed)
    cc = cc or ConstraintConfig(alpha_mu=0.5, alpha_sigma=2.0)
    X = rng.normal(size=(n_frames, d_in))
    truth = np.column_stack([rng.uniform(0.2, 0.6, n_frames), rng.uniform(0.03, 0.12, n_frames)])
    init = np.array([0.3, -0.2])
    return net, cc, X, truth, init


def check_solve(d_in=4, hidden=8, n_frames=20, seed=0, cc=None, sc=ode.SolveConfig(), lc=LossConfig(), coords=None):
    """End-to-end loss gradient (CCC <- gamma <- RK4 <- phi <- network) against differences.

    Returns ``(max_rel_err_params, max_rel_err_init)``.
    """
    net, cc, X, truth, init = solve_instance(d_in, hidden, n_frames, seed, cc)

    def loss(params, s0):
        n2 = nn.GoverningNetwork(net.d_in, net.hidden, net.seed, params)
        out = ode.solve_cdnode(n2, cc, X, s0, sc).outputs[0]
        return float(multitask_loss(out, truth, lc)[0])

    traj = ode.solve_cdnode(net, cc, X, init, sc, keep_tape=True)
    _, gout = multitask_loss(traj.outputs[0], truth, lc)
    g_params, g_init = ode.backprop_through_solve(traj, gout)
    fd_p = central_diff(lambda p: loss(p, init), net.params, coords=coords)
    fd_i = central_diff(lambda s: loss(net.params, s), init)
    sel = g_params if coords is None else g_params[list(coords)]
    return rel_err(sel, fd_p), rel_err(g_init[0], fd_i)


def run_all() -> dict:
    """All suites at their default sizes; values are max relative errors."""
    p_err, i_err = check_solve()
    return {
        "network": check_network(),
        "loss": check_loss(),
        "solve_params": p_err,
        "solve_init": i_err,
    }
