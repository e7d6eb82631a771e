"""ARMA modelling of inter-event interval series.

Sign convention throughout::

    x[t] - phi[0] x[t-1] - ... - phi[p-1] x[t-p]
        = e[t] - theta[0] e[t-1] - ... - theta[q-1] e[t-q]

i.e. both lag polynomials are written ``1 - c1 z - c2 z**2 - ...``.
Series are mean-centred before fitting; the mean is carried in
:class:`ArmaParams` and added back when predicting.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import optimize, signal

from .errors import DegenerateSeries, InsufficientHistory

log = logging.getLogger(__name__)

P_MAX = 5
Q_MAX = 5
MIN_SELECT_LENGTH = 20
BAND_Z = 1.96


@dataclass(frozen=True)
class ArmaOrders:
    p: int
    q: int
    d: int = 0
    # which branch of the selection procedure produced the orders:
    # 1 = ACF cut-off, 2 = PACF cut-off, 3 = AIC grid, 0 = given/fallback
    case: int = field(default=0, compare=False)

    def __post_init__(self):
        if min(self.p, self.q, self.d) < 0:
            raise ValueError("orders must be non-negative")
        if self.d > 2:
            raise ValueError("differencing order is at most 2")


@dataclass(frozen=True)
class ArmaParams:
    phi: np.ndarray
    theta: np.ndarray
    sigma2: float
    mean: float = 0.0
    converged: bool = True

    def __post_init__(self):
        object.__setattr__(self, "phi", np.atleast_1d(np.asarray(self.phi, dtype=float)))
        object.__setattr__(self, "theta", np.atleast_1d(np.asarray(self.theta, dtype=float)))
        if not self.sigma2 > 0:
            raise ValueError("sigma2 must be positive")

    @property
    def p(self):
        return len(self.phi)

    @property
    def q(self):
        return len(self.theta)


@dataclass(frozen=True)
class DifferenceRecord:
    """Leading value of each differencing level, enough to invert exactly."""

    d: int
    heads: tuple = ()


# --------------------------------------------------------------------------
# differencing


def difference(values, d: int):
    """Apply the first-difference operator ``d`` times.

    Returns the differenced array and a :class:`DifferenceRecord` with the
    first value of each intermediate level.
    """
    x = np.asarray(values)
    if len(x) <= d:
        raise InsufficientHistory(f"series of length {len(x)} too short to difference {d} times")
    heads = []
    for _ in range(d):
        heads.append(x[0].item())
        x = np.diff(x)
    return x, DifferenceRecord(d, tuple(heads))


def integrate(diffed, record: DifferenceRecord) -> np.ndarray:
    """Exact inverse of :func:`difference`."""
    x = np.asarray(diffed)
    for head in reversed(record.heads):
        x = np.concatenate([[head], head + np.cumsum(x)])
    return x


def undifference(predicted: float, recent, d: int) -> float:
    """Map a prediction of the ``d``-th difference back to the original scale.

    ``recent`` holds at least the last ``d`` original values, oldest first.
    """
    if d == 0:
        return float(predicted)
    recent = np.asarray(recent, dtype=float)[-d:]
    if len(recent) < d:
        raise InsufficientHistory(f"need {d} recent values to undifference")
    total = float(predicted)
    level = recent
    for _ in range(d):
        total += level[-1]
        level = np.diff(level)
    return total


# --------------------------------------------------------------------------
# correlograms


def sample_acf(values, max_lag: int) -> np.ndarray:
    """Biased sample autocorrelations at lags ``0..max_lag``."""
    x = np.asarray(values, dtype=float)
    n = len(x)
    if n < 2 or n < max_lag + 1:
        raise InsufficientHistory(f"need at least {max(2, max_lag + 1)} values, got {n}")
    xc = x - x.mean()
    gamma0 = np.dot(xc, xc) / n
    if gamma0 <= 1e-12 * max(1.0, np.mean(x * x)):
        raise DegenerateSeries("constant series has no autocorrelation")
    gam = np.array([np.dot(xc[: n - k], xc[k:]) / n for k in range(max_lag + 1)])
    return gam / gam[0]


def pacf_from_acf(rho) -> np.ndarray:
    """Durbin-Levinson recursion; returns partial autocorrelations at lags 1..K."""
    rho = np.asarray(rho, dtype=float)
    K = len(rho) - 1
    out = np.zeros(K)
    prev = np.zeros(0)
    v = 1.0
    for k in range(1, K + 1):
        num = rho[k] - np.dot(prev, rho[k - 1:0:-1]) if k > 1 else rho[1]
        a = num / v if v > 0 else 0.0
        cur = np.empty(k)
        cur[: k - 1] = prev - a * prev[::-1]
        cur[k - 1] = a
        v *= 1.0 - a * a
        out[k - 1] = a
        prev = cur
    return out


def sample_pacf(values, max_lag: int) -> np.ndarray:
    """Partial autocorrelations at lags ``1..max_lag``."""
    return pacf_from_acf(sample_acf(values, max_lag))


def default_max_lag(n: int) -> int:
    return max(1, min(20, n // 4))


def cutoff_lag(corr, band, run: int = 2) -> int:
    """Lag after which a correlogram drops inside its significance band.

    ``corr[k-1]`` is the value at lag ``k`` and ``band`` is a scalar or a
    function of the candidate cut-off ``k`` giving the band for the lags
    beyond it. The cut-off is the smallest ``k >= 0`` such that the next
    ``run`` lags all sit inside the band; isolated exceedances further out
    are treated as sampling noise. When no such run exists the correlogram
    never settles and ``len(corr)`` is returned.
    """
    corr = np.abs(np.asarray(corr))
    L = len(corr)
    for k in range(L):
        b = band(k) if callable(band) else band
        if np.all(corr[k:k + run] <= b):
            return k
    return L


def bartlett_band(acf, n: int, z: float = BAND_Z):
    """Band for ACF lags beyond ``k`` under an MA(k) null (Bartlett's formula)."""
    acf = np.asarray(acf)
    cum = np.concatenate([[0.0], np.cumsum(acf * acf)])
    return lambda k: z * math.sqrt((1.0 + 2.0 * cum[k]) / n)


def classify(values, p_max: int = P_MAX, q_max: int = Q_MAX, max_lag: int | None = None):
    """Return ``(case, p, q)`` from the correlogram shapes alone.

    A correlogram cuts off when it settles inside its band within
    ``p_max`` (PACF) or ``q_max`` (ACF) lags and tails off otherwise.
    ``case`` is 1 when the ACF cuts off after some lag ``q >= 1`` and the
    PACF tails off (MA model), 2 in the mirrored situation (AR model); ``p``
    and ``q`` are then the orders. Otherwise ``case`` is 3 and ``p``, ``q``
    are upper bounds for the AIC search: the cut-off lag of each correlogram
    that cuts off, ``p_max``/``q_max`` for one that tails off, and at
    least 1.
    """
    x = np.asarray(values, dtype=float)
    n = len(x)
    L = max_lag or default_max_lag(n)
    acf = sample_acf(x, L)[1:]
    pacf = pacf_from_acf(np.concatenate([[1.0], acf]))
    q_cut = cutoff_lag(acf, bartlett_band(acf, n))
    p_cut = cutoff_lag(pacf, BAND_Z / math.sqrt(n))
    acf_cuts = q_cut <= q_max
    pacf_cuts = p_cut <= p_max
    if acf_cuts and q_cut >= 1 and not pacf_cuts:
        return 1, 0, q_cut
    if pacf_cuts and p_cut >= 1 and not acf_cuts:
        return 2, p_cut, 0
    p_bound = p_cut if pacf_cuts else p_max
    q_bound = q_cut if acf_cuts else q_max
    # a white-noise-like series still needs p + q >= 1
    return 3, max(p_bound, 1), max(q_bound, 1)


def _is_stationary_level(x) -> bool:
    n = len(x)
    if n < 4:
        return True
    try:
        r1 = sample_acf(x, 1)[1]
    except DegenerateSeries:
        return True
    a, b = x[: n // 2], x[n // 2:]
    pooled = math.sqrt((np.var(a) + np.var(b)) / 2.0)
    if pooled == 0:
        return abs(a.mean() - b.mean()) == 0
    return r1 < 0.9 and abs(a.mean() - b.mean()) < 0.5 * pooled


def choose_d(values, max_d: int = 2) -> int:
    """Smallest differencing order giving a stationary-looking series."""
    x = np.asarray(values, dtype=float)
    for d in range(max_d + 1):
        if len(x) <= d + 3:
            return d
        y = np.diff(x, n=d) if d else x
        if _is_stationary_level(y):
            return d
    return max_d


def aic(sigma2_hat: float, n: int, k: int) -> float:
    """Gaussian AIC without the additive constant: ``n ln(sigma2) + 2k``."""
    return n * math.log(sigma2_hat) + 2 * k


def select_orders(values, p_max: int = P_MAX, q_max: int = Q_MAX) -> ArmaOrders:
    """Pick ``(p, q, d)`` from correlogram shape, falling back to AIC."""
    x = np.asarray(values, dtype=float)
    if len(x) < MIN_SELECT_LENGTH:
        raise InsufficientHistory(f"order selection needs {MIN_SELECT_LENGTH} values, got {len(x)}")
    if np.ptp(x) == 0:
        raise DegenerateSeries("constant series")
    d = choose_d(x)
    y, _ = difference(x, d)
    if len(y) < MIN_SELECT_LENGTH:
        d, y = 0, x
    case, p, q = classify(y, p_max, q_max)
    if case == 3:
        p, q = aic_search(y, p, q)
    return ArmaOrders(p, q, d, case=case)


def aic_search(values, p_max: int = P_MAX, q_max: int = Q_MAX):
    """Grid search over ``(p, q) != (0, 0)``; ties go to smaller ``p+q``, then ``p``."""
    x = np.asarray(values, dtype=float)
    n = len(x)
    best = None
    for p in range(p_max + 1):
        for q in range(q_max + 1):
            if p + q == 0 or n < 4 * (p + q) + 10:
                continue
            params = fit_batch(x, ArmaOrders(p, q))
            score = aic(params.sigma2, n, p + q)
            key = (score, p + q, p)
            if best is None or key < best[0]:
                best = (key, p, q)
    if best is None:
        return 1, 0
    return best[1], best[2]


# --------------------------------------------------------------------------
# estimation


def _polys(phi, theta):
    one = np.ones(1)
    return np.concatenate([one, -np.asarray(phi)]), np.concatenate([one, -np.asarray(theta)])


def css_residuals(xc, phi, theta) -> np.ndarray:
    """Innovations of a centred series with zero pre-sample values."""
    ar, ma = _polys(phi, theta)
    return signal.lfilter(ar, ma, xc)


def _inside_unit_circle(coefs, margin=1e-6) -> bool:
    """True when ``1 - c1 z - ... - ck z**k`` has all roots outside |z| = 1.

    Uses the step-down (inverse Levinson) recursion: the polynomial is
    stable iff every reflection coefficient has modulus below one.
    """
    a = [float(c) for c in coefs]
    for k in range(len(a), 0, -1):
        r = a[k - 1]
        if not abs(r) < 1.0 - margin:
            return False
        if k > 1:
            den = 1.0 - r * r
            a = [(a[j] + r * a[k - 2 - j]) / den for j in range(k - 1)]
    return True


def is_stationary(phi, margin: float = 1e-6) -> bool:
    return _inside_unit_circle(phi, margin)


def is_invertible(theta, margin: float = 1e-6) -> bool:
    return _inside_unit_circle(theta, margin)


# Fits keep every reflection coefficient below 0.97 in modulus. Without it,
# overfitted orders land on nearly cancelling AR/MA roots that the online
# filter cannot track.
FIT_MARGIN = 0.03


def _lagmat(x, lags, start):
    return np.column_stack([x[start - k: len(x) - k] for k in range(1, lags + 1)])


def hannan_rissanen(xc, p: int, q: int):
    """Two-stage regression estimate for a centred series."""
    n = len(xc)
    if q == 0:
        if p == 0:
            return np.zeros(0), np.zeros(0)
        X = _lagmat(xc, p, p)
        coef, *_ = np.linalg.lstsq(X, xc[p:], rcond=None)
        return coef, np.zeros(0)
    m = int(max(min(math.floor(math.log(n) ** 2), n // 4), p + q, 1))
    m = min(m, max(1, n // 3))
    X = _lagmat(xc, m, m)
    a, *_ = np.linalg.lstsq(X, xc[m:], rcond=None)
    ehat = np.zeros(n)
    ehat[m:] = xc[m:] - X @ a
    start = m + max(p, q)
    if n - start < p + q + 2:
        return np.zeros(p), np.zeros(q)
    cols = [xc[start - k: n - k] for k in range(1, p + 1)]
    cols += [ehat[start - k: n - k] for k in range(1, q + 1)]
    coef, *_ = np.linalg.lstsq(np.column_stack(cols), xc[start:], rcond=None)
    # regression estimates +theta in x = ... + e + b e[t-1]; flip to the 1 - theta z form
    return coef[:p], -coef[p:]


def fit_batch(values, orders: ArmaOrders, maxiter: int | None = None) -> ArmaParams:
    """One-off estimate of ``phi``, ``theta`` and ``sigma2``.

    Hannan-Rissanen regression seeds a Nelder-Mead minimisation of the
    conditional sum of squares. ``sigma2`` is the mean squared in-sample
    innovation. If the search does not converge the (feasible) regression
    estimate is returned with ``converged=False``.

    ``values`` are on the scale to be modelled (already differenced); the
    series mean is removed here and reported in the result.
    """
    x = np.asarray(values, dtype=float)
    p, q = orders.p, orders.q
    n = len(x)
    if n < 4 * (p + q) + 10:
        raise InsufficientHistory(f"ARMA({p},{q}) fit needs {4 * (p + q) + 10} values, got {n}")
    mean = float(x.mean())
    xc = x - mean
    var0 = float(np.dot(xc, xc) / n)
    if var0 <= 1e-12 * max(1.0, mean * mean):
        raise DegenerateSeries("constant series cannot be fitted")
    scale = math.sqrt(var0)
    z = xc / scale

    def objective(v):
        phi, theta = v[:p], v[p:]
        if not (is_stationary(phi, FIT_MARGIN) and is_invertible(theta, FIT_MARGIN)):
            return np.inf
        e = css_residuals(z, phi, theta)
        val = float(np.dot(e, e) / n)
        return val if np.isfinite(val) else np.inf

    phi0, theta0 = hannan_rissanen(z, p, q)
    start = np.r_[phi0, theta0]
    shrink = 0
    while not np.isfinite(objective(start)) and shrink < 50:
        start = 0.8 * start
        shrink += 1
    if not np.isfinite(objective(start)):
        start = np.zeros(p + q)
    hr_value = objective(start)

    best, best_value, converged = start, hr_value, True
    if p + q > 0:
        res = optimize.minimize(
            objective, start, method="Nelder-Mead",
            options={"maxiter": maxiter or 400 * (p + q), "xatol": 1e-4, "fatol": 1e-9},
        )
        if res.success and np.isfinite(res.fun) and res.fun <= hr_value:
            best, best_value = res.x, float(res.fun)
        elif not res.success:
            converged = False
            log.debug("CSS refinement did not converge for ARMA(%d,%d): %s", p, q, res.message)
    # never worse than the mean-only model
    if best_value > 1.0:
        best, best_value = np.zeros(p + q), 1.0
    return ArmaParams(
        phi=best[:p], theta=best[p:], sigma2=max(best_value * var0, np.finfo(float).tiny),
        mean=mean, converged=converged,
    )


@dataclass(frozen=True)
class FittedArma:
    """Orders, parameters and in-sample innovations for one training series."""

    orders: ArmaOrders
    params: ArmaParams
    residuals: np.ndarray

    def to_json(self, user=None) -> dict:
        return {
            "user": user,
            "p": self.orders.p,
            "q": self.orders.q,
            "d": self.orders.d,
            "phi": [float(v) for v in self.params.phi],
            "theta": [float(v) for v in self.params.theta],
            "sigma2": float(self.params.sigma2),
            "mean": float(self.params.mean),
        }


MIN_FIT_LENGTH = 14  # 4 * (1 + 0) + 10, the AR(1) minimum


def fit_interval_model(intervals, p_max: int = P_MAX, q_max: int = Q_MAX, orders: ArmaOrders | None = None) -> FittedArma:
    """Select orders and fit one training interval series.

    Short or constant series still get a usable model so that the online
    filter can take over: with fewer than ``MIN_SELECT_LENGTH`` values an
    AR(1) is fitted directly, with fewer than ``MIN_FIT_LENGTH`` (or zero
    variance) the AR(1) starts from ``phi = 0`` at the sample mean.
    """
    x = np.asarray(intervals, dtype=float)
    if len(x) < 2:
        raise InsufficientHistory(f"need at least 2 intervals, got {len(x)}")
    mean = float(x.mean())
    var = float(x.var())
    constant = var <= 1e-12 * max(1.0, mean * mean)
    if orders is None:
        if constant or len(x) < MIN_FIT_LENGTH:
            orders = ArmaOrders(1, 0, 0)
            sigma2 = var if not constant else 1e-12 * max(1.0, mean * mean)
            params = ArmaParams([0.0], [], sigma2, mean=mean, converged=False)
            return FittedArma(orders, params, x - mean)
        if len(x) < MIN_SELECT_LENGTH:
            orders = ArmaOrders(1, 0, 0)
        else:
            orders = select_orders(x, p_max, q_max)
    y, _ = difference(x, orders.d)
    params = fit_batch(y, orders)
    resid = css_residuals(y - params.mean, params.phi, params.theta)
    return FittedArma(orders, params, resid)
