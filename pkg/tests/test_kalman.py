import json

import numpy as np
import pytest

from conftest import lfilter_arma
from oracles import kalman_step
from sstepred.arma import ArmaOrders, ArmaParams, fit_batch, is_stationary
from sstepred.errors import FilterError, InsufficientHistory
from sstepred.kalman import (
    KalmanState,
    init_state,
    kalman_gain,
    learn_by_kf,
    measurement_variance,
    observe_frozen,
    predict_interval,
    predict_time,
    time_prediction,
)


def make_state(phi, H, theta=(), eps=(), P=None, Q=None, r=1.0, mean=0.0):
    p = len(phi)
    return KalmanState(
        phi_hat=np.asarray(phi, dtype=float),
        P=np.ones((p, p)) if P is None else np.asarray(P, dtype=float),
        Q=np.zeros((p, p)) if Q is None else np.asarray(Q, dtype=float),
        r_meas=r,
        theta=np.asarray(theta, dtype=float),
        residuals=np.asarray(eps, dtype=float),
        history=np.asarray(H, dtype=float),
        series_mean=mean,
    )


def random_state(rng):
    p = int(rng.integers(1, 4))
    q = int(rng.integers(0, 3))
    A = rng.normal(size=(p, p))
    return make_state(
        phi=rng.uniform(-0.3, 0.3, p),
        H=rng.normal(size=p),
        theta=rng.uniform(-0.5, 0.5, q),
        eps=rng.normal(size=q),
        P=A @ A.T + 0.1 * np.eye(p),
        Q=rng.uniform(0, 0.1) * np.eye(p),
        r=float(rng.uniform(0.1, 3.0)),
    )


def test_init_state_examples():
    s = init_state(ArmaParams([0.5, 0.2], [], 3.0), [1.0, 2.0, 3.0])
    assert np.array_equal(s.P, np.ones((2, 2)))
    assert np.array_equal(s.Q, np.zeros((2, 2)))
    assert s.r_meas == 3.0
    assert list(s.history) == [3.0, 2.0]
    s = init_state(ArmaParams([0.1], [0.5, 0.5], 2.0), [1.0, 2.0])
    assert s.r_meas == 3.0 and list(s.residuals) == [0.0, 0.0]
    with pytest.raises(InsufficientHistory):
        init_state(ArmaParams([0.5, 0.2], [], 1.0), [1.0])


def test_measurement_variance():
    assert measurement_variance([], 2.0) == 2.0
    assert measurement_variance([0.5, 0.5], 2.0) == 3.0


def test_scalar_gain_and_covariance():
    K, s = kalman_gain(np.ones((1, 1)), np.zeros((1, 1)), np.array([2.0]), 1.0)
    assert s == 5.0 and K[0] == pytest.approx(0.4)
    nxt = learn_by_kf(make_state([0.1], [2.0]), 1.0)
    assert nxt.P[0, 0] == pytest.approx(0.2)


def test_zero_innovation_leaves_phi():
    s = make_state([0.3, -0.2], [4.0, 1.5], P=[[2.0, 0.3], [0.3, 1.0]])
    w = float(s.history @ s.phi_hat)
    assert np.array_equal(learn_by_kf(s, w).phi_hat, s.phi_hat)


def test_matches_matrix_oracle():
    rng = np.random.default_rng(0)
    for _ in range(300):
        s = random_state(rng)
        w = float(rng.normal(scale=2.0))
        K, P, phi = kalman_step(s.phi_hat, s.P, s.Q, s.r_meas, s.history, w, s.theta, s.residuals)
        nxt = learn_by_kf(s, w)
        assert np.allclose(nxt.P, P, atol=1e-10, rtol=0)
        expect = phi if is_stationary(phi) else s.phi_hat
        assert np.allclose(nxt.phi_hat, expect, atol=1e-10, rtol=0)


def test_nonstationary_update_is_discarded():
    s = make_state([0.9], [1.0], P=[[10.0]], r=0.01)
    nxt = learn_by_kf(s, 50.0)
    assert nxt.phi_hat[0] == 0.9
    assert nxt.P[0, 0] < s.P[0, 0]


def test_covariance_symmetric_and_trace_nonincreasing():
    x = lfilter_arma([0.5, 0.2], [], 500, seed=1)
    s = init_state(fit_batch(x[:200], ArmaOrders(2, 0)), x[:200])
    traces = [np.trace(s.P)]
    for v in x[200:]:
        s = learn_by_kf(s, v)
        assert np.allclose(s.P, s.P.T, atol=1e-9)
        assert np.all(np.diag(s.P) >= -1e-9)
        traces.append(np.trace(s.P))
    assert np.all(np.diff(traces) <= 1e-9)


def test_update_is_pure():
    s = make_state([0.2], [3.0], theta=[0.4], eps=[1.0])
    before = s.dumps()
    learn_by_kf(s, 2.0)
    assert s.dumps() == before


def test_non_finite_rolls_back():
    s = make_state([0.2], [1e308], P=[[1e308]])
    before = s.dumps()
    with pytest.raises(FilterError):
        learn_by_kf(s, 1e308)
    with pytest.raises(FilterError):
        learn_by_kf(s, float("nan"))
    assert s.dumps() == before


def test_predict_interval_examples():
    assert predict_interval(make_state([0.5], [100.0])) == 50.0
    assert predict_interval(make_state([0.5], [100.0], theta=[0.3], eps=[10.0])) == pytest.approx(47.0)
    assert predict_interval(make_state([0.0, 0.0], [5.0, 6.0], mean=300.0)) == 300.0


def test_predict_interval_undifferences():
    params = ArmaParams([0.0], [], 1.0, mean=2.0)
    s = init_state(params, [10.0, 12.0, 14.0], d=1)
    assert predict_interval(s) == pytest.approx(16.0)


def test_time_prediction_examples():
    s = make_state([0.0], [1.0], mean=86400.0)
    tp = time_prediction(s, 1_000_000)
    assert tp.event_time_hat == 1_086_400 and not tp.clamped
    tp = time_prediction(make_state([0.0], [1.0], mean=-50.0), 1_000_000, 60)
    assert tp.event_time_hat == 1_000_060 and tp.clamped and tp.interval_hat == -50.0


def test_predict_time_absorbs_interval():
    s = make_state([0.5], [10.0], mean=0.0)
    nxt, tp = predict_time(s, 500.0, 20.0)
    assert list(nxt.history) == [20.0]
    assert tp.event_time_hat == 500.0 + max(predict_interval(nxt), 60.0)
    frozen, _ = predict_time(s, 500.0, 20.0, adaptive=False)
    assert frozen.phi_hat[0] == 0.5


def test_residuals_are_one_step_innovations():
    s = init_state(ArmaParams([0.5], [0.3], 1.0), [4.0])
    xhat = predict_interval(s)
    s2 = learn_by_kf(s, 7.0)
    assert s2.residuals[0] == pytest.approx(7.0 - xhat)


def test_json_round_trip():
    s = make_state([0.2, 0.1], [1.0, 2.0], theta=[0.3], eps=[0.5], mean=7.0)
    s = learn_by_kf(s, 3.0)
    data = json.loads(s.dumps())
    assert {"user", "phi_hat", "P", "theta", "r_meas", "residuals", "history", "mean", "d"} <= set(data)
    back = KalmanState.from_json(data)
    assert back.dumps() == s.dumps()
    assert learn_by_kf(back, 1.5).dumps() == learn_by_kf(s, 1.5).dumps()


def _drift_stream(seed, n=1200):
    rng = np.random.default_rng(seed)
    e = rng.normal(size=n)
    x = np.zeros(n)
    for t in range(1, n):
        phi = 0.3 if t < n // 2 else 0.7
        x[t] = phi * x[t - 1] + e[t]
    return x


@pytest.mark.parametrize("seed", range(3))
def test_kf_beats_frozen_after_shift(seed):
    x = _drift_stream(seed)
    train = x[:400]
    params = fit_batch(train, ArmaOrders(1, 0))
    kf = fz = init_state(params, train)
    err_kf, err_fz = [], []
    for v in x[400:]:
        err_kf.append((predict_interval(kf) - v) ** 2)
        err_fz.append((predict_interval(fz) - v) ** 2)
        kf = learn_by_kf(kf, v)
        fz = observe_frozen(fz, v)
    assert np.mean(err_kf[-200:]) < np.mean(err_fz[-200:])
