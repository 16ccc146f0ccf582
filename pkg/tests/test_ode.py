import math

import numpy as np
import pytest

from cdnode import checks, ode
from cdnode import net as nn
from cdnode.constraints import ConstraintConfig


def decay(t, y):
    return -y


def test_single_rk4_step():
    # one step of size 0.1 on ds/dt = -s is the degree-4 Taylor polynomial of e^-0.1
    h = 0.1
    expected = 1 - h + h**2 / 2 - h**3 / 6 + h**4 / 24
    assert ode.rk4_step(decay, 0.0, 1.0, h) == pytest.approx(expected, abs=1e-15)


@pytest.mark.parametrize("method,order,tol", [("euler", 1.0, 0.1), ("rk4", 4.0, 0.2), ("dopri5", 5.0, 0.3)])
def test_convergence_orders(method, order, tol):
    assert abs(ode.convergence_order(method) - order) <= tol


def test_adaptive_matches_closed_form():
    y, _, accepted, _ = ode.integrate_adaptive(decay, 1.0, 0.0, 1.0, rtol=1e-7, atol=1e-13)
    assert abs(y - math.exp(-1)) < 1e-6
    assert accepted > 0


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_adaptive_error_names_time():
    def blowup(t, y):
        return np.array([np.inf]) if t > 0.5 else y

    with pytest.raises(ode.SolverError, match="t="):
        ode.integrate_adaptive(blowup, np.array([1.0]), 0.0, 1.0)


def _model(seed=0, mode="rate_and_range", alpha_sigma=2.0):
    net = nn.init_network(3, 6, seed)
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(30, 3))
    return net, ConstraintConfig(alpha_sigma=alpha_sigma, mode=mode), X


def test_solvers_agree():
    net, cc, X = _model()
    init = np.array([0.1, -0.3])
    fine = ode.solve_cdnode(net, cc, X, init, ode.SolveConfig(substeps_per_frame=16)).outputs
    dp = ode.solve_cdnode(net, cc, X, init, ode.SolveConfig(method="dopri5")).outputs
    assert np.max(np.abs(fine - dp)) < 1e-7


def test_batch_equals_individual_solves():
    net, cc, X = _model()
    Xb = np.stack([X, X[::-1]])
    init = np.array([[0.0, 0.0], [0.4, -0.2]])
    batch = ode.solve_cdnode(net, cc, Xb, init).outputs
    for b in range(2):
        single = ode.solve_cdnode(net, cc, Xb[b], init[b]).outputs[0]
        assert np.allclose(batch[b], single, atol=1e-14)


def test_first_output_is_initial_state_image():
    net, cc, X = _model()
    traj = ode.solve_cdnode(net, cc, X, np.zeros(2))
    assert traj.raw_states[0, 0].tolist() == [0.0, 0.0]
    assert traj.mu[0] == pytest.approx(cc.p / 2)


def test_outputs_valid_and_rate_bounded():
    net, cc, X = _model()
    net.params *= 5.0
    traj = ode.solve_cdnode(net, cc, X * 3, np.zeros(2))
    assert ode.rate_bound_holds(traj.raw_states, cc, 0.04)
    assert np.all((traj.mu > 0) & (traj.mu < cc.p))
    assert np.all((traj.sigma > 0) & (traj.sigma < cc.q))


def test_unconstrained_mode_outputs_raw_state():
    net, _, X = _model()
    cc = ConstraintConfig(mode="none")
    traj = ode.solve_cdnode(net, cc, X, np.array([0.3, 0.2]))
    assert np.array_equal(traj.outputs, traj.raw_states)


def test_gradients_through_solve():
    p_err, i_err = checks.check_solve()
    assert p_err < 1e-4 and i_err < 1e-4


@pytest.mark.parametrize("mode", ["none", "rate_only"])
def test_gradients_other_modes(mode):
    cc = ConstraintConfig(mode=mode, alpha_sigma=2.0)
    p_err, i_err = checks.check_solve(cc=cc, coords=range(0, 1538, 37))
    assert p_err < 1e-4 and i_err < 1e-4


def test_substeps_gradients():
    p_err, i_err = checks.check_solve(sc=ode.SolveConfig(substeps_per_frame=3), coords=range(0, 1538, 41))
    assert p_err < 1e-4 and i_err < 1e-4


def test_input_validation():
    net, cc, X = _model()
    with pytest.raises(ValueError):
        ode.solve_cdnode(net, cc, X[:, :2], np.zeros(2))
    with pytest.raises(ValueError):
        ode.solve_cdnode(net, cc, X[:1], np.zeros(2))
    with pytest.raises(ValueError):
        ode.solve_cdnode(net, cc, X, np.zeros(2), ode.SolveConfig(method="dopri5"), keep_tape=True)


def test_zero_weights_hold_state():
    net, cc, X = _model()
    net.params[:] = 0.0
    s0 = np.array([0.4, -1.0])
    traj = ode.solve_cdnode(net, cc, X, s0)
    assert np.all(traj.raw_states[0] == s0)
    from cdnode.constraints import gamma

    assert np.allclose(traj.mu, gamma(0.4, cc.p)) and np.allclose(traj.sigma, gamma(-1.0, cc.q))


def test_zero_upstream_and_zero_weight_init_gradient(rng):
    from cdnode.constraints import gamma_grad

    net, cc, X = _model()
    s0 = np.array([0.4, -1.0])
    traj = ode.solve_cdnode(net, cc, X, s0, keep_tape=True)
    gp, gi = ode.backprop_through_solve(traj, np.zeros_like(traj.outputs))
    assert not np.any(gp) and not np.any(gi)
    net.params[:] = 0.0
    traj = ode.solve_cdnode(net, cc, X, s0, keep_tape=True)
    up = rng.normal(size=traj.outputs.shape)
    _, gi = ode.backprop_through_solve(traj, up)
    expected = up[0].sum(axis=0) * np.array([gamma_grad(0.4, cc.p), gamma_grad(-1.0, cc.q)])
    assert np.allclose(gi[0], expected, rtol=1e-12)


def test_clamped_outputs_are_bell_shaped():
    from cdnode.beta import BetaMoments, is_bell_shaped, moments_to_shape

    net, cc, X = _model()
    net.params *= 4.0
    traj = ode.solve_cdnode(net, cc, 4 * X, np.array([-3.0, 3.0]))
    for mu, sd in zip(traj.mu, traj.sigma):
        assert is_bell_shaped(moments_to_shape(BetaMoments(mu, sd)))


def test_rk4_close_to_dopri5_single_substep():
    from cdnode.net import init_network

    # a trained-scale smooth model: small final layer, unit-scale features
    net = init_network(3, 16, 2)
    X = np.random.default_rng(2).normal(size=(200, 3))
    cc = ConstraintConfig()
    a = ode.solve_cdnode(net, cc, X, np.zeros(2)).raw_states
    b = ode.solve_cdnode(net, cc, X, np.zeros(2), ode.SolveConfig(method="dopri5")).raw_states
    assert np.abs(a - b).max() <= 1e-3


def test_euler_order():
    assert abs(ode.convergence_order("euler") - 1.0) <= 0.2


def test_trajectories_bit_identical():
    net, cc, X = _model()
    a = ode.solve_cdnode(net, cc, X, np.zeros(2)).outputs
    b = ode.solve_cdnode(net, cc, X, np.zeros(2)).outputs
    assert np.array_equal(a, b)
