import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from cdnode import metrics as M
from cdnode.labels import MomentSequence


def test_delay_frames():
    assert M.delay_frames(4.0, 0.04) == 100
    assert M.delay_frames(0.0) == 0


def test_delay_compensate_alignment():
    X = np.arange(300.0).reshape(150, 2)
    lab = MomentSequence(np.linspace(0.3, 0.6, 150), np.full(150, 0.05))
    Xc, Lc = M.delay_compensate(X, lab, 4.0, 0.04)
    assert len(Xc) == len(Lc) == 50
    assert np.array_equal(Xc[0], X[0])
    assert Lc.mu[0] == lab.mu[100]


def test_moving_average_trailing():
    x = np.arange(1.0, 6.0)
    assert np.allclose(M.moving_average(x, 2), [1, 1.5, 2.5, 3.5, 4.5])
    assert np.allclose(M.moving_average(x, 1), x)


def test_decile_rmse_manual():
    sd = np.arange(20.0)
    truth = np.zeros(20)
    pred = np.arange(20.0)
    rmse, edges, counts = M.rmse_by_decile(pred, truth, sd)
    assert counts.tolist() == [2] * 10
    assert rmse[0] == pytest.approx(np.sqrt((0 + 1) / 2))
    assert rmse[9] == pytest.approx(np.sqrt((18**2 + 19**2) / 2))


@settings(deadline=None)
@given(st.integers(10, 300), st.integers(0, 2**31))
def test_pooled_mse_equals_weighted_deciles(n, seed):
    rng = np.random.default_rng(seed)
    pred, truth, sd = rng.normal(size=n), rng.normal(size=n), rng.uniform(0.01, 0.2, n)
    rmse, _, counts = M.rmse_by_decile(pred, truth, sd)
    ok = counts > 0
    weighted = np.sum(counts[ok] * rmse[ok] ** 2) / n
    assert weighted == pytest.approx(np.mean((pred - truth) ** 2), abs=1e-12)


def test_perfect_prediction_report(rng):
    truth = np.column_stack([rng.uniform(0.2, 0.6, 200), rng.uniform(0.02, 0.1, 200)])
    rep = M.evaluate(truth, truth, window=1)
    assert rep.rmse_by_decile == [0.0] * 10
    assert rep.ccc_mu == pytest.approx(1.0, abs=1e-12) and rep.ccc_sigma == pytest.approx(1.0, abs=1e-12)


def test_evaluate_per_utterance_and_shapes(rng):
    a = [rng.uniform(0.2, 0.6, (50, 2)) for _ in range(3)]
    rep = M.evaluate(a, a, window=1)
    assert len(rep.per_utterance["ccc_mu"]) == 3 and rep.frame_count == 150
    with pytest.raises(ValueError):
        M.evaluate(a[0], a[0][:40])


def test_delay_compensate_cases():
    X = np.zeros((300, 2))
    lab = np.column_stack([np.full(300, 0.4), np.full(300, 0.05)])
    Xc, Lc = M.delay_compensate(X, lab, 4.0)
    assert len(Xc) == len(Lc) == 200
    Xi, Li = M.delay_compensate(X, lab, 0.0)
    assert np.array_equal(Xi, X) and np.array_equal(Li, lab)
    with pytest.raises(ValueError):
        M.delay_compensate(X[:100], lab[:100], 4.0)


def test_moving_average_cases():
    assert np.allclose(M.moving_average(np.full(30, 0.3), 12), 0.3, rtol=0, atol=1e-15)
    x = np.zeros(60)
    x[20] = 1.0
    y = M.moving_average(x, 12)
    expected = np.zeros(60)
    expected[20:32] = 1 / 12
    assert np.allclose(y, expected, atol=1e-15)


def test_moving_average_preserves_mean_of_padded_sequence(rng):
    x = np.concatenate([rng.normal(size=500), np.zeros(11)])
    # every sample lands in exactly 12 windows once the tail padding is included
    y = M.moving_average(np.concatenate([np.zeros(11), x]), 12)[11:]
    assert y.mean() == pytest.approx(x.mean(), abs=1e-12)


def test_decile_cases(rng):
    n = 400
    sd = rng.uniform(0.01, 0.2, n)
    truth = rng.uniform(0.2, 0.6, n)
    rmse, _, _ = M.rmse_by_decile(truth + 0.1, truth, sd)
    assert np.allclose(rmse, 0.1, atol=1e-12)
    rmse, _, _ = M.rmse_by_decile(truth + sd, truth, sd)
    assert np.all(np.diff(rmse) >= 0)
    perm = rng.permutation(n)
    e1 = M.rmse_by_decile(truth, truth, sd)[1]
    e2 = M.rmse_by_decile(truth[perm], truth[perm], sd[perm])[1]
    assert np.array_equal(e1, e2)


def test_constant_mean_prediction_has_zero_ccc(rng):
    truth = np.column_stack([rng.uniform(0.2, 0.6, 100), rng.uniform(0.02, 0.1, 100)])
    pred = truth.copy()
    pred[:, 0] = truth[:, 0].mean()
    assert M.evaluate(pred, truth, window=1).ccc_mu == pytest.approx(0.0, abs=1e-12)
