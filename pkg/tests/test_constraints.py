import numpy as np
import pytest
from hypothesis import given, strategies as st

from cdnode import constraints as C


def test_q_bound_value():
    assert C.q_bound(0.75) == pytest.approx(np.sqrt(0.25**2 * 0.75 / 1.25), abs=1e-12)
    assert C.q_bound(1.0) == 0.0


def test_config_admissibility():
    C.ConstraintConfig(p=0.75, q=0.15)
    with pytest.raises(ValueError, match="admissibility"):
        C.ConstraintConfig(p=0.75, q=0.20)
    # the bound only matters when the range map is on
    C.ConstraintConfig(p=0.75, q=0.20, mode="rate_only")
    with pytest.raises(ValueError):
        C.ConstraintConfig(mode="bogus")
    with pytest.raises(ValueError):
        C.ConstraintConfig(alpha_mu=0.0)


def test_mode_flags():
    assert not C.ConstraintConfig(mode="none").rate
    assert C.ConstraintConfig(mode="rate_only").rate
    assert not C.ConstraintConfig(mode="rate_only").range
    assert C.ConstraintConfig().range


def test_saturated_outputs_stay_open():
    z = np.array([-1e6, -50.0, 50.0, 1e6])
    assert np.all(np.abs(C.phi(z, 0.5)) < 0.5)
    g = C.gamma(z, 0.15)
    assert np.all((g > 0) & (g < 0.15))


def test_derivatives_finite_difference(rng):
    z = rng.normal(scale=2.0, size=50)
    h = 1e-6
    for alpha in (0.5, 10.0):
        fd = (C.phi(z + h, alpha) - C.phi(z - h, alpha)) / (2 * h)
        assert np.allclose(C.phi_grad(z, alpha), fd, rtol=1e-6, atol=1e-9)
    fd = (C.gamma(z + h, 0.75) - C.gamma(z - h, 0.75)) / (2 * h)
    assert np.allclose(C.gamma_grad(z, 0.75), fd, rtol=1e-6, atol=1e-9)


def test_invert_gamma():
    assert C.gamma(C.invert_gamma(0.3, 0.75), 0.75) == pytest.approx(0.3, rel=1e-14)
    with pytest.raises(ValueError):
        C.invert_gamma(0.75, 0.75)


@given(st.floats(-1e3, 1e3), st.floats(1e-3, 1e2))
def test_phi_bounded_and_odd(z, alpha):
    v = C.phi(z, alpha)
    assert abs(v) < alpha
    assert C.phi(-z, alpha) == -v


@given(st.floats(-1e3, 1e3), st.floats(-1e3, 1e3))
def test_gamma_monotone(a, b):
    lo, hi = sorted((a, b))
    assert C.gamma(lo, 0.75) <= C.gamma(hi, 0.75)


def test_phi_values():
    assert C.phi(0.0, 3.0) == 0.0
    assert C.phi(0.5, 0.5) == pytest.approx(0.5 * np.tanh(1.0), abs=1e-12)
    eps = 0.5 - C.phi(1e6, 0.5)
    assert 0 < eps < 1e-12


def test_gamma_values():
    assert C.gamma_mu(0.0, 0.75) == 0.375
    assert C.gamma_mu(np.log(2), 0.75) == pytest.approx(0.5, abs=1e-15)
    assert C.gamma_mu(1e3, 0.75) == pytest.approx(0.75)
    assert C.gamma_sigma(0.0, 0.15) == 0.075
    assert C.gamma_sigma(np.log(9), 0.15) == pytest.approx(0.135, abs=1e-12)
    assert C.gamma_sigma(-1e3, 0.15) < 1e-300
    assert C.invert_gamma(0.5, 0.75) == pytest.approx(np.log(2), abs=1e-12)
    assert C.invert_gamma(0.375, 0.75) == 0.0


def test_phi_near_identity(rng):
    for alpha in (0.5, 10.0):
        z = rng.uniform(-alpha / 100, alpha / 100, 1000)
        z = z[z != 0]
        assert np.all(np.abs(C.phi(z, alpha) - z) / np.abs(z) <= 1e-4)


def test_random_inputs_bounded(rng):
    for alpha in (0.5, 10.0):
        z = rng.normal(scale=50 * alpha, size=10_000)
        assert np.all(np.abs(C.phi(z, alpha)) < alpha)


def test_derivatives_high_precision(rng):
    # complex-step differentiation avoids cancellation, so 1e-8 relative is reachable
    z = rng.normal(scale=2.0, size=200)
    h = 1e-30
    for alpha in (0.5, 10.0):
        cs = np.imag(alpha * np.tanh((z + 1j * h) / alpha)) / h
        assert np.allclose(C.phi_grad(z, alpha), cs, rtol=1e-8, atol=0)
    from scipy.special import expit

    def sig(x):
        return 1 / (1 + np.exp(-x))

    cs = 0.75 * np.imag(sig(z + 1j * h)) / h
    assert np.allclose(C.gamma_grad(z, 0.75), cs, rtol=1e-8, atol=0)
