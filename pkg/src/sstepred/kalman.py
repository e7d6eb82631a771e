"""Online tracking of AR coefficients with a Kalman filter.

The AR coefficient vector is the filter state and follows a random walk
with covariance ``Q``; each new interval is a scalar measurement whose
measurement row is the vector of the ``p`` previous (differenced,
mean-centred) observations. The MA part contributes measurement noise of
variance ``(1 + sum(theta**2)) * sigma2`` and is held fixed after the batch
fit.

All update functions are pure: they return a new :class:`KalmanState` and
never modify their input, so a failed update leaves the caller's state as
it was.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, replace

import numpy as np

from .arma import ArmaParams, FittedArma, is_stationary, undifference
from .errors import FilterError, InsufficientHistory

INTERVAL_FLOOR = 60.0
GAIN_EPS = 1e-12


@dataclass(frozen=True)
class KalmanState:
    phi_hat: np.ndarray
    P: np.ndarray
    Q: np.ndarray
    r_meas: float
    theta: np.ndarray
    residuals: np.ndarray  # newest first, length q
    history: np.ndarray  # newest first, length p; the measurement row H
    series_mean: float = 0.0
    d: int = 0
    recent: np.ndarray = None  # last d original-scale values, oldest first
    pending: float | None = None  # working-scale prediction of the next value
    user: str | None = None

    def __post_init__(self):
        if self.recent is None:
            object.__setattr__(self, "recent", np.zeros(0))

    @property
    def p(self):
        return len(self.phi_hat)

    @property
    def q(self):
        return len(self.theta)

    def to_json(self) -> dict:
        return {
            "user": self.user,
            "phi_hat": self.phi_hat.tolist(),
            "P": self.P.tolist(),
            "Q": self.Q.tolist(),
            "theta": self.theta.tolist(),
            "r_meas": self.r_meas,
            "residuals": self.residuals.tolist(),
            "history": self.history.tolist(),
            "mean": self.series_mean,
            "d": self.d,
            "recent": self.recent.tolist(),
            "pending": self.pending,
        }

    @classmethod
    def from_json(cls, data: dict) -> "KalmanState":
        p = len(data["phi_hat"])
        return cls(
            phi_hat=np.array(data["phi_hat"], dtype=float),
            P=np.array(data["P"], dtype=float).reshape(p, p),
            Q=np.array(data.get("Q", np.zeros((p, p))), dtype=float).reshape(p, p),
            r_meas=float(data["r_meas"]),
            theta=np.array(data["theta"], dtype=float),
            residuals=np.array(data["residuals"], dtype=float),
            history=np.array(data["history"], dtype=float),
            series_mean=float(data["mean"]),
            d=int(data["d"]),
            recent=np.array(data.get("recent", []), dtype=float),
            pending=data.get("pending"),
            user=data.get("user"),
        )

    def dumps(self) -> str:
        return json.dumps(self.to_json(), sort_keys=True)


@dataclass(frozen=True)
class TimePrediction:
    interval_hat: float
    event_time_hat: float
    clamped: bool


def measurement_variance(theta, sigma2) -> float:
    theta = np.asarray(theta, dtype=float)
    return float((1.0 + np.dot(theta, theta)) * sigma2)


def _working_value(state: KalmanState, x_new: float) -> float:
    """Difference ``x_new`` against the stored originals and remove the mean."""
    if state.d == 0:
        return float(x_new) - state.series_mean
    level = np.append(state.recent[-state.d:], x_new)
    return float(np.diff(level, n=state.d)[-1]) - state.series_mean


def _ma_term(state: KalmanState) -> float:
    return float(np.dot(state.theta, state.residuals)) if state.q else 0.0


def _working_prediction(state: KalmanState) -> float:
    ar = float(np.dot(state.phi_hat, state.history)) if state.p else 0.0
    return ar - _ma_term(state)


def init_state(
    params: ArmaParams,
    warmup,
    d: int = 0,
    residuals=None,
    process_noise: float = 0.0,
    user: str | None = None,
) -> KalmanState:
    """Start a filter from a batch fit.

    Parameters
    ----------
    params : ArmaParams
        Batch estimate; ``params.mean`` is the mean of the differenced series.
    warmup : array_like
        Original-scale intervals ending at the present, long enough to supply
        ``d`` originals plus ``p`` differenced values.
    d : int
        Differencing order the parameters were fitted at.
    residuals : array_like, optional
        In-sample innovations, oldest first. The last ``q`` seed the MA
        buffer; zeros are used when omitted.
    process_noise : float
        ``Q = process_noise * I``. Zero keeps the coefficient a constant.
    """
    p, q = params.p, params.q
    x = np.asarray(warmup, dtype=float)
    if len(x) < d + p or len(x) < d:
        raise InsufficientHistory(f"warm-up needs {d + p} intervals, got {len(x)}")
    w = (np.diff(x, n=d) if d else x) - params.mean
    history = w[::-1][:p].copy() if p else np.zeros(0)
    if residuals is None:
        eps = np.zeros(q)
    else:
        res = np.asarray(residuals, dtype=float)
        eps = np.zeros(q)
        tail = res[::-1][:q]
        eps[: len(tail)] = tail
    state = KalmanState(
        phi_hat=params.phi.copy(),
        P=np.ones((p, p)),
        Q=process_noise * np.eye(p),
        r_meas=measurement_variance(params.theta, params.sigma2),
        theta=params.theta.copy(),
        residuals=eps,
        history=history,
        series_mean=float(params.mean),
        d=d,
        recent=x[len(x) - d:].copy() if d else np.zeros(0),
        user=user,
    )
    return replace(state, pending=_working_prediction(state))


def state_from_fit(fit: FittedArma, train_intervals, process_noise: float = 0.0, user=None) -> KalmanState:
    return init_state(
        fit.params, train_intervals, d=fit.orders.d, residuals=fit.residuals,
        process_noise=process_noise, user=user,
    )


def kalman_gain(P, Q, H, r):
    """Gain and the scalar innovation variance it was divided by."""
    PQ = P + Q
    PH = PQ @ H
    s = float(H @ PH) + r
    return PH / s, s


def _push(state: KalmanState, x_new: float, w_new: float, phi_hat, P) -> KalmanState:
    """Advance the observation and residual buffers after seeing ``x_new``."""
    resid = 0.0 if state.pending is None else w_new - state.pending
    history = np.concatenate([[w_new], state.history[:-1]]) if state.p else state.history
    residuals = np.concatenate([[resid], state.residuals[:-1]]) if state.q else state.residuals
    recent = np.append(state.recent, x_new)[-state.d:] if state.d else state.recent
    nxt = replace(state, phi_hat=phi_hat, P=P, history=history, residuals=residuals, recent=recent)
    return replace(nxt, pending=_working_prediction(nxt))


def learn_by_kf(state: KalmanState, x_new: float) -> KalmanState:
    """One Kalman update of the AR coefficients with a new interval.

    ``x_new`` is on the original interval scale. With measurement row
    ``H`` (the previous ``p`` working values)::

        K    = (P + Q) H / (H' (P + Q) H + r)
        P'   = (I - K H') (P + Q)
        phi' = phi + K (w + theta' eps - H' phi)

    where ``w`` is ``x_new`` differenced and centred and ``eps`` holds the
    ``q`` most recent residuals. Those residuals are known when ``w``
    arrives, so their MA contribution is moved to the measurement side;
    for ``q = 0`` this is the plain ``w - H' phi`` innovation. The update
    is skipped when the innovation variance is below ``1e-12``. A
    coefficient update that would leave the stationary region is discarded
    (``P`` is still updated).

    Raises
    ------
    FilterError
        If any updated quantity is non-finite; the input state is untouched.
    """
    if not np.isfinite(x_new):
        raise FilterError(f"non-finite observation {x_new!r}")
    w = _working_value(state, x_new)
    phi, P = state.phi_hat, state.P
    if state.p:
        H = state.history
        with np.errstate(all="ignore"):
            K, s = kalman_gain(state.P, state.Q, H, state.r_meas)
            if s >= GAIN_EPS:
                PQ = state.P + state.Q
                P = (np.eye(state.p) - np.outer(K, H)) @ PQ
                P = 0.5 * (P + P.T)
                phi = state.phi_hat + K * (w + _ma_term(state) - float(H @ state.phi_hat))
                if np.all(np.isfinite(phi)) and not is_stationary(phi):
                    phi = state.phi_hat
        if not (np.all(np.isfinite(phi)) and np.all(np.isfinite(P))):
            raise FilterError("Kalman update overflowed; state rolled back")
    return _push(state, x_new, w, phi, P)


def observe_frozen(state: KalmanState, x_new: float) -> KalmanState:
    """Record ``x_new`` without touching the coefficients (batch-only baseline)."""
    return _push(state, x_new, _working_value(state, x_new), state.phi_hat, state.P)


def predict_interval(state: KalmanState) -> float:
    """Minimum-MSE one-step interval forecast on the original scale."""
    y = _working_prediction(state) + state.series_mean
    return undifference(y, state.recent, state.d)


def predict_time(
    state: KalmanState,
    last_event_time: float,
    x_new: float,
    interval_floor: float = INTERVAL_FLOOR,
    adaptive: bool = True,
):
    """Absorb the interval that ended at ``last_event_time`` and forecast the next event.

    Returns the updated state and a :class:`TimePrediction`. Forecast
    intervals below ``interval_floor`` are clamped when forming the event
    time.
    """
    state = learn_by_kf(state, x_new) if adaptive else observe_frozen(state, x_new)
    return state, time_prediction(state, last_event_time, interval_floor)


def time_prediction(state: KalmanState, last_event_time: float, interval_floor: float = INTERVAL_FLOOR) -> TimePrediction:
    xhat = predict_interval(state)
    clamped = xhat < interval_floor
    return TimePrediction(xhat, float(last_event_time) + max(xhat, interval_floor), bool(clamped))
