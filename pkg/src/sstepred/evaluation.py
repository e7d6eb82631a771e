"""Temporal train/test protocol for time and location prediction.

For every user and training proportion the event sequence is split in time
order, an ARMA model is fitted on the training intervals, and the test
intervals are walked one step at a time: predict, score, then reveal the
true interval (updating the coefficients for the adaptive filter, or not
for the frozen baseline). Location accuracy composes the adaptive time
forecast with the region ranking at the predicted time.
"""

from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .arma import FittedArma, fit_interval_model
from .errors import InsufficientHistory, NoCandidates, SstePredError
from .events import EventSequence
from .kalman import INTERVAL_FLOOR, learn_by_kf, observe_frozen, predict_interval, state_from_fit
from .location import DEFAULT_HALF_LIFE, LocationScorer, RegionMap

log = logging.getLogger(__name__)

MIN_EVENTS = 4
DEFAULT_PROPORTIONS = tuple(round(0.1 * k, 1) for k in range(2, 10))
DEFAULT_XI = tuple(round(0.1 * k, 1) for k in range(11))
DEFAULT_TOP_N = (1, 5, 10, 20, 50)


@dataclass(frozen=True)
class ExperimentConfig:
    train_proportions: tuple = DEFAULT_PROPORTIONS
    xi_values: tuple = DEFAULT_XI
    top_n_values: tuple = DEFAULT_TOP_N
    smoothing: float = 0.0
    half_life: float = DEFAULT_HALF_LIFE
    process_noise: float = 0.0
    interval_floor: float = INTERVAL_FLOOR
    convergence_proportion: float = 0.2

    def __post_init__(self):
        props = list(self.train_proportions)
        if not props or any(not 0 < p < 1 for p in props):
            raise ValueError("train proportions must lie in (0, 1)")
        if any(b <= a for a, b in zip(props, props[1:])):
            raise ValueError("train proportions must be strictly increasing")
        if any(not 0 <= x <= 1 for x in self.xi_values):
            raise ValueError("xi values must lie in [0, 1]")
        if not self.top_n_values or any(int(n) < 1 for n in self.top_n_values):
            raise ValueError("top-N values must be positive")
        if self.smoothing < 0 or self.half_life <= 0 or self.process_noise < 0:
            raise ValueError("smoothing and process noise must be >= 0, half-life > 0")
        if not 0 < self.convergence_proportion < 1:
            raise ValueError("convergence proportion must lie in (0, 1)")


def train_size(n: int, proportion: float) -> int:
    """``ceil(proportion * n)`` held to ``[2, n - 1]`` (at least one training interval and one test event)."""
    if not 0 < proportion < 1:
        raise ValueError("proportion must lie in (0, 1)")
    k = math.ceil(round(proportion * n, 9))
    return min(max(k, 2), n - 1)


def split_sequence(seq: EventSequence, proportion: float):
    """Time-ordered prefix/suffix split of an event sequence.

    Raises
    ------
    InsufficientHistory
        When the sequence has fewer than four events.
    """
    n = len(seq.events)
    if n < MIN_EVENTS:
        raise InsufficientHistory(f"user {seq.user} has {n} events; need at least {MIN_EVENTS}")
    k = train_size(n, proportion)
    return EventSequence(seq.user, seq.events[:k]), EventSequence(seq.user, seq.events[k:])


def split_intervals(intervals, proportion: float):
    """Interval counterpart of :func:`split_sequence`.

    ``n`` intervals come from ``n + 1`` events; the training part holds the
    gaps inside the training events and the test part starts with the gap
    that leads to the first test event.
    """
    x = np.asarray(intervals, dtype=float)
    k = train_size(len(x) + 1, proportion)
    return x[: k - 1], x[k - 1:]


def walk_forward(train, test, fit: FittedArma | None = None, adaptive: bool = True, process_noise: float = 0.0):
    """Squared one-step errors over ``test`` after fitting on ``train``."""
    fit = fit or fit_interval_model(train)
    state = state_from_fit(fit, train, process_noise)
    step = learn_by_kf if adaptive else observe_frozen
    errs = np.empty(len(test))
    for i, x in enumerate(test):
        errs[i] = (x - predict_interval(state)) ** 2
        state = step(state, x)
    return errs


def stream_mse(intervals, proportions=DEFAULT_PROPORTIONS, process_noise: float = 0.0):
    """Adaptive and frozen test MSE of one interval series at each proportion.

    Returns a list of ``(proportion, mse_adaptive, mse_frozen)``.
    """
    out = []
    for p in proportions:
        train, test = split_intervals(intervals, p)
        fit = fit_interval_model(train)
        kf = walk_forward(train, test, fit, True, process_noise)
        fr = walk_forward(train, test, fit, False, process_noise)
        out.append((p, float(kf.mean()), float(fr.mean())))
    return out


def convergence_trace(intervals, proportion: float = 0.2, process_noise: float = 0.0, adaptive: bool = True):
    """``[(step, squared error)]`` of the adaptive filter, steps counted from 1."""
    train, test = split_intervals(intervals, proportion)
    errs = walk_forward(train, test, adaptive=adaptive, process_noise=process_noise)
    return [(i + 1, float(e)) for i, e in enumerate(errs)]


# --------------------------------------------------------------------------
# per-user pipeline


@dataclass
class UserResult:
    user: str
    proportion: float
    mse_kf: float
    mse_frozen: float
    n_test: int
    # (xi, N) -> hits over test events; abstentions count as misses
    hits: dict = field(default_factory=dict)
    abstained: int = 0

    def accuracy(self, xi, n) -> float:
        return self.hits[(xi, n)] / self.n_test if self.n_test else 0.0


def _truth_rank(cand, g_t, g_s, truth_pos, xi):
    """Zero-based rank of the true region in the blended ordering, or None."""
    hit = np.flatnonzero(cand == truth_pos)
    if len(hit) == 0:
        return None
    g = xi * g_t + (1.0 - xi) * g_s
    j = hit[0]
    # strictly better, or equal with a lower site position
    return int(np.sum((g > g[j]) | ((g == g[j]) & (cand < cand[j]))))


def evaluate_user(seq: EventSequence, proportion: float, config: ExperimentConfig,
                  scorer: LocationScorer | None = None) -> UserResult:
    """Run the time (and, given ``scorer``, location) protocol for one user.

    The time model is updated online through the test segment. The
    temporal location score is estimated from the training events only;
    the social score sees every check-in strictly before
    ``min(tau_hat, first member check-in of the true event)``.
    """
    train, test = split_sequence(seq, proportion)
    times = seq.times
    x = np.diff(times)
    k = len(train.events)
    x_train, x_test = x[: k - 1], x[k - 1:]
    fit = fit_interval_model(x_train)
    kf = state_from_fit(fit, x_train, config.process_noise, user=seq.user)
    fr = kf
    se_kf = np.empty(len(x_test))
    se_fr = np.empty(len(x_test))
    res = UserResult(seq.user, proportion, 0.0, 0.0, len(x_test))
    if scorer is not None:
        res.hits = {(xi, n): 0 for xi in config.xi_values for n in config.top_n_values}
    for i, xv in enumerate(x_test):
        xhat = predict_interval(kf)
        se_kf[i] = (xv - xhat) ** 2
        se_fr[i] = (xv - predict_interval(fr)) ** 2
        if scorer is not None:
            j = k + i  # index of the event being predicted
            tau_hat = times[j - 1] + max(xhat, config.interval_floor)
            event = seq.events[j]
            start = min(c.time for c in event.member_checkins) if event.member_checkins else event.time
            truth = int(scorer.region_map.assign_index(event.lat, event.lon)[0])
            try:
                cand, g_t, g_s = scorer.score(seq.user, train.events, tau_hat, cutoff=start)
            except NoCandidates:
                res.abstained += 1
            else:
                for xi in config.xi_values:
                    r = _truth_rank(cand, g_t, g_s, truth, xi)
                    if r is None:
                        continue
                    for n in config.top_n_values:
                        if r < n:
                            res.hits[(xi, n)] += 1
        kf = learn_by_kf(kf, xv)
        fr = observe_frozen(fr, xv)
    res.mse_kf = float(se_kf.mean())
    res.mse_frozen = float(se_fr.mean())
    return res


@dataclass
class EvalReport:
    mse: list  # (proportion, mse_kf, mse_frozen, n_users)
    accuracy: list  # (proportion, xi, N, accuracy, abstention_rate, n_users)
    convergence: dict  # user -> [(step, squared error)]
    excluded: dict  # user -> reason

    def mse_table(self):
        return {p: (kf, fr) for p, kf, fr, _ in self.mse}

    def accuracy_at(self, proportion, xi, n) -> float:
        for p, x, nn, acc, _, _ in self.accuracy:
            if math.isclose(p, proportion) and math.isclose(x, xi) and nn == n:
                return acc
        raise KeyError((proportion, xi, n))

    def to_json(self) -> dict:
        return {
            "mse_by_proportion": [
                {"proportion": p, "mse_kf": kf, "mse_frozen": fr, "mse_kf_hours2": kf / 3600.0**2,
                 "mse_frozen_hours2": fr / 3600.0**2, "n_users": n}
                for p, kf, fr, n in self.mse
            ],
            "accuracy": [
                {"proportion": p, "xi": xi, "top_n": n, "accuracy": a, "abstention_rate": ab, "n_users": nu}
                for p, xi, n, a, ab, nu in self.accuracy
            ],
            "convergence_users": sorted(self.convergence),
            "excluded": dict(sorted(self.excluded.items())),
        }

    def write(self, out_dir) -> list[Path]:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        written = []
        path = out / "mse_by_proportion.csv"
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["proportion", "mse_kf", "mse_frozen", "mse_kf_hours2", "mse_frozen_hours2", "n_users"])
            for p, kf, fr, n in self.mse:
                w.writerow([p, repr(kf), repr(fr), repr(kf / 3600.0**2), repr(fr / 3600.0**2), n])
        written.append(path)
        path = out / "accuracy_by_xi_n.csv"
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["proportion", "xi", "top_n", "accuracy", "abstention_rate", "n_users"])
            for p, xi, n, a, ab, nu in self.accuracy:
                w.writerow([p, xi, n, repr(a), repr(ab), nu])
        written.append(path)
        for user, trace in sorted(self.convergence.items()):
            path = out / f"convergence_{user}.csv"
            with open(path, "w", newline="", encoding="utf-8") as fh:
                w = csv.writer(fh, lineterminator="\n")
                w.writerow(["step", "squared_error"])
                for step, e in trace:
                    w.writerow([step, repr(e)])
            written.append(path)
        path = out / "report.json"
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_json(), fh, sort_keys=True, indent=2)
            fh.write("\n")
        written.append(path)
        return written


def _eligible(sequences, excluded):
    out = {}
    for u, seq in sorted(sequences.items()):
        if len(seq.events) < MIN_EVENTS:
            excluded[u] = f"{len(seq.events)} events (< {MIN_EVENTS})"
            log.info("excluding %s: %s", u, excluded[u])
        else:
            out[u] = seq
    return out


def evaluate(sequences: dict, config: ExperimentConfig | None = None, checkins=None, graph=None,
             region_map: RegionMap | None = None, convergence_min_steps: int = 60) -> EvalReport:
    """Time and location evaluation over all users.

    Per-user MSE and accuracy are averaged with equal weight per user.
    Location accuracy is computed when ``checkins``, ``graph`` and
    ``region_map`` are all given.
    """
    config = config or ExperimentConfig()
    excluded: dict = {}
    users = _eligible(sequences, excluded)
    if not users:
        raise InsufficientHistory("no user has enough events to evaluate")
    scorer = None
    if checkins is not None and graph is not None and region_map is not None:
        scorer = LocationScorer(checkins, graph, region_map, half_life=config.half_life, smoothing=config.smoothing)

    mse_rows, acc_rows = [], []
    for p in config.train_proportions:
        results = []
        for u, seq in users.items():
            try:
                results.append(evaluate_user(seq, p, config, scorer))
            except SstePredError as exc:
                excluded.setdefault(u, f"proportion {p}: {exc}")
                log.warning("user %s skipped at proportion %s: %s", u, p, exc)
        if not results:
            continue
        mse_rows.append((p, float(np.mean([r.mse_kf for r in results])),
                         float(np.mean([r.mse_frozen for r in results])), len(results)))
        if scorer is not None:
            abst = float(np.mean([r.abstained / r.n_test for r in results]))
            for xi in config.xi_values:
                for n in config.top_n_values:
                    acc = float(np.mean([r.accuracy(xi, n) for r in results]))
                    acc_rows.append((p, xi, int(n), acc, abst, len(results)))

    convergence = {}
    for u, seq in users.items():
        x = np.diff(seq.times)
        _, test = split_intervals(x, config.convergence_proportion)
        if len(test) < convergence_min_steps:
            continue
        try:
            convergence[u] = convergence_trace(x, config.convergence_proportion, config.process_noise)
        except SstePredError as exc:
            log.warning("no convergence trace for %s: %s", u, exc)
    return EvalReport(mse_rows, acc_rows, convergence, excluded)
