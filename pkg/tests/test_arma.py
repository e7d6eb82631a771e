import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays
from scipy import signal

from conftest import lfilter_arma
from oracles import direct_acf, ls_pacf
from sstepred.arma import (
    ArmaOrders,
    aic,
    aic_search,
    classify,
    choose_d,
    css_residuals,
    difference,
    fit_batch,
    fit_interval_model,
    integrate,
    is_invertible,
    is_stationary,
    sample_acf,
    sample_pacf,
    select_orders,
    undifference,
)
from sstepred.errors import DegenerateSeries, InsufficientHistory


def test_difference_examples():
    assert list(difference([1, 3, 6, 10], 1)[0]) == [2, 3, 4]
    assert list(difference([1, 3, 6, 10], 2)[0]) == [1, 1]
    assert list(difference([4, 1, 7], 0)[0]) == [4, 1, 7]
    with pytest.raises(InsufficientHistory):
        difference([1, 2], 2)


def test_undifference_examples():
    assert undifference(4, [3, 10], 1) == 14
    assert undifference(2.5, [1, 2], 0) == 2.5
    assert undifference(1, [6, 10], 2) == 15
    assert list(difference([6, 10, 15], 2)[0]) == [1]


@settings(max_examples=80, deadline=None)
@given(arrays(np.int64, st.integers(3, 40), elements=st.integers(-10**9, 10**9)), st.integers(0, 2))
def test_difference_round_trip_exact(x, d):
    y, rec = difference(x, d)
    assert np.array_equal(integrate(y, rec), x)


@settings(max_examples=80, deadline=None)
@given(arrays(np.int64, st.integers(4, 30), elements=st.integers(-10**6, 10**6)), st.integers(0, 2))
def test_undifference_recovers_next_value(x, d):
    y, _ = difference(x, d)
    assert undifference(float(y[-1]), x[:-1], d) == pytest.approx(float(x[-1]), abs=1e-6)


def test_acf_examples():
    x = [1, -1, 1, -1, 1, -1]
    acf = sample_acf(x, 2)
    assert acf[0] == 1.0
    assert acf[1] < 0
    assert acf[1] == pytest.approx(direct_acf(x, 1))
    with pytest.raises(DegenerateSeries):
        sample_acf([5, 5, 5], 1)


def test_acf_matches_definition():
    x = np.random.default_rng(3).normal(size=60)
    acf = sample_acf(x, 6)
    for k in range(7):
        assert acf[k] == pytest.approx(direct_acf(x, k), abs=1e-12)


def test_pacf_lag_one_is_acf():
    x = lfilter_arma([0.4], [], 300, seed=1)
    assert sample_pacf(x, 3)[0] == pytest.approx(sample_acf(x, 1)[1])


@pytest.mark.parametrize("seed", range(3))
def test_pacf_matches_least_squares(seed):
    x = lfilter_arma([0.5, 0.2], [0.3], 600, seed=seed)
    assert np.allclose(sample_pacf(x, 8), ls_pacf(x, 8), atol=1e-6, rtol=0)


def test_ar1_pacf_lag_two_near_zero():
    # a 2/sqrt(n) band is roughly a 95% interval, so check the rate over seeds
    n, inside = 2000, 0
    for seed in range(40):
        x = lfilter_arma([0.6], [], n, seed=seed)
        pacf = sample_pacf(x, 2)
        assert pacf[1] == pytest.approx(ls_pacf(x, 2)[1], abs=1e-6)
        inside += abs(pacf[1]) <= 2 / math.sqrt(n)
    assert inside / 40 >= 0.9


def test_white_noise_pacf_band_frequency():
    n, lags = 2000, 20
    inside = 0
    for seed in range(100):
        x = np.random.default_rng(seed).normal(size=n)
        inside += np.sum(np.abs(sample_pacf(x, lags)) <= 3 / math.sqrt(n))
    assert inside / (100 * lags) >= 0.95


@settings(max_examples=60, deadline=None)
@given(arrays(float, st.integers(5, 60), elements=st.floats(-1e3, 1e3)))
def test_correlograms_bounded(x):
    try:
        acf = sample_acf(x, 4)
    except DegenerateSeries:
        return
    assert np.all(np.abs(acf) <= 1 + 1e-9)
    assert np.all(np.abs(sample_pacf(x, 4)) <= 1 + 1e-9)


def test_aic_examples():
    assert aic(2.0, 100, 2) < aic(2.0, 100, 3)
    assert aic(1.0, 100, 2) < aic(2.0, 100, 2)
    assert aic(1.0, 100, 0) == 0


def test_ar1_recovery():
    fit = fit_batch(lfilter_arma([0.6], [], 2000, seed=0), ArmaOrders(1, 0))
    assert 0.5 <= fit.phi[0] <= 0.7


def test_ma1_recovery():
    fit = fit_batch(lfilter_arma([], [0.7], 2000, seed=0), ArmaOrders(0, 1))
    assert 0.6 <= fit.theta[0] <= 0.8


def test_white_noise_fit():
    x = np.random.default_rng(2).normal(0.0, 3.0, 2000)
    fit = fit_batch(x, ArmaOrders(1, 0))
    assert -0.1 <= fit.phi[0] <= 0.1
    assert fit.sigma2 == pytest.approx(9.0, rel=0.1)


def test_fit_reports_mean_and_feasible_params():
    x = lfilter_arma([0.5], [0.4], 800, seed=4) + 50.0
    fit = fit_batch(x, ArmaOrders(1, 1))
    assert fit.mean == pytest.approx(x.mean())
    assert is_stationary(fit.phi) and is_invertible(fit.theta)


def test_fit_errors():
    with pytest.raises(InsufficientHistory):
        fit_batch(np.arange(10.0), ArmaOrders(1, 1))
    with pytest.raises(DegenerateSeries):
        fit_batch(np.full(40, 7.0), ArmaOrders(1, 0))


def test_css_residuals_recover_noise():
    rng = np.random.default_rng(0)
    e = rng.normal(size=300)
    x = lfilter_arma([0.5], [0.3], 300, seed=0, burn=0)
    assert np.allclose(x, signal.lfilter([1, -0.3], [1, -0.5], e))
    assert np.allclose(css_residuals(x, [0.5], [0.3]), e)


def test_stationarity_checks():
    assert is_stationary([0.5]) and not is_stationary([1.0]) and not is_stationary([1.2])
    assert is_stationary([0.5, 0.3]) and not is_stationary([0.5, 0.6])
    assert is_invertible([0.7]) and not is_invertible([-1.5])
    assert is_stationary([]) and is_invertible([])
    assert not is_stationary([0.98], margin=0.03)


def test_arma11_takes_aic_path():
    cases = [classify(lfilter_arma([0.5], [0.4], 2000, seed=s))[0] for s in range(15)]
    assert sum(c == 3 for c in cases) > len(cases) / 2


def test_select_orders_basic_cases():
    assert select_orders(lfilter_arma([], [0.7], 2000, seed=0)) == ArmaOrders(0, 1)
    assert select_orders(lfilter_arma([0.5, 0.3], [], 2000, seed=0)) == ArmaOrders(2, 0)
    with pytest.raises(InsufficientHistory):
        select_orders(np.arange(10.0))
    with pytest.raises(DegenerateSeries):
        select_orders(np.ones(30))


def test_aic_search_never_returns_zero_orders():
    x = np.random.default_rng(1).normal(size=200)
    p, q = aic_search(x, 2, 2)
    assert p + q >= 1


def test_choose_d():
    rng = np.random.default_rng(0)
    assert choose_d(rng.normal(size=300)) == 0
    assert choose_d(np.cumsum(rng.normal(size=300)) + np.arange(300) * 0.5) >= 1


def test_fit_interval_model_fallbacks():
    short = fit_interval_model([100.0, 200.0, 150.0])
    assert short.orders == ArmaOrders(1, 0) and short.params.phi[0] == 0.0
    assert short.params.mean == pytest.approx(150.0)
    const = fit_interval_model([60.0] * 30)
    assert const.params.phi[0] == 0.0 and const.params.sigma2 > 0
    with pytest.raises(InsufficientHistory):
        fit_interval_model([1.0])
    fit = fit_interval_model(lfilter_arma([0.6], [], 400, seed=2) + 1000)
    assert fit.orders.p + fit.orders.q >= 1
    assert set(fit.to_json("u")) == {"user", "p", "q", "d", "phi", "theta", "sigma2", "mean"}
