"""Synthetic data with known ground truth.

Two generators live here: plain ARMA interval streams (optionally with
coefficient drift) for the time-prediction tests, and check-in datasets
with planted weekly meetups and friend influence for the end-to-end
pipeline.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .arma import is_stationary
from .ingestion import Checkin, CheckinSequence, FriendshipGraph, write_checkins, write_friendship

log = logging.getLogger(__name__)

BURN_IN = 100
WEEK = 7 * 86400


def generate_arma_stream(phi=(), theta=(), sigma2=1.0, n=1000, seed=0, drift=None, mean=0.0):
    """Simulate ``n`` values of an ARMA process with Gaussian noise.

    Uses the ``1 - c1 z - ...`` sign convention for both polynomials.
    ``drift`` maps a step index (counted after burn-in) to a replacement
    AR coefficient vector that is in force from that step on. The first
    100 simulated values are discarded.
    """
    phi = np.atleast_1d(np.asarray(phi, dtype=float))
    theta = np.atleast_1d(np.asarray(theta, dtype=float))
    drift = {int(k): np.atleast_1d(np.asarray(v, dtype=float)) for k, v in (drift or {}).items()}
    for coefs in [phi, *drift.values()]:
        if not is_stationary(coefs):
            raise ValueError(f"AR coefficients {coefs} are not stationary")
    if any(len(v) != len(phi) for v in drift.values()):
        raise ValueError("drift must keep the AR order")
    if n < 1:
        raise ValueError("n must be positive")
    if sigma2 < 0:
        raise ValueError("sigma2 must be non-negative")
    rng = np.random.default_rng(seed)
    total = n + BURN_IN
    eps = rng.normal(0.0, math.sqrt(sigma2), total)
    p, q = len(phi), len(theta)
    x = np.zeros(total)
    cur = phi
    for t in range(total):
        step = t - BURN_IN
        if step in drift:
            cur = drift[step]
        v = eps[t]
        for i in range(min(p, t)):
            v += cur[i] * x[t - 1 - i]
        for j in range(min(q, t)):
            v -= theta[j] * eps[t - 1 - j]
        x[t] = v
    return x[BURN_IN:] + mean


# --------------------------------------------------------------------------
# check-in datasets

EPOCH_MONDAY = 1609718400  # 2021-01-04 00:00 UTC
EARTH_RADIUS = 6_371_000.0


@dataclass(frozen=True)
class GeneratorConfig:
    """Parameters of the planted check-in dataset.

    Users are partitioned into friend groups of ``group_size`` members that
    meet once a week at a group-specific hour-of-week. The meeting region is
    drawn from the group's schedule, ``schedule_size`` regions with
    probabilities proportional to ``schedule_decay ** k``, except that with
    probability ``beta`` it copies the region of a recent background
    check-in by one of the members (each a friend of all the others), drawn
    with weight ``2 ** (-age / copy_half_life)``. The
    meeting offset within its hour follows an ARMA process with standard
    deviation about ``interval_sigma`` seconds, so inter-meeting gaps are
    one week plus ARMA noise.
    """

    n_users: int = 24
    group_size: tuple = (2, 4)
    edge_prob: float = 0.1
    n_regions: int = 64
    site_spacing: float = 1000.0
    center: tuple = (41.8781, -87.6298)
    weeks: int = 40
    schedule_size: int = 4
    schedule_decay: float = 0.6
    beta: float = 0.3
    copy_half_life: float = 7 * 86400.0
    interval_phi: tuple = (0.8,)
    interval_theta: tuple = ()
    interval_sigma: float = 2400.0
    drift: dict = field(default_factory=dict)
    background_rate: float = 3.0
    n_haunts: int = 3
    jitter_time: float = 300.0
    jitter_dist: float = 40.0
    start: int = EPOCH_MONDAY
    seed: int = 0

    def __post_init__(self):
        if self.n_users < 2:
            raise ValueError("n_users must be at least 2")
        lo, hi = self.group_size
        if not 2 <= lo <= hi:
            raise ValueError("group_size must satisfy 2 <= min <= max")
        for name in ("edge_prob", "beta"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1]")
        if not 1 <= self.schedule_size <= self.n_regions:
            raise ValueError("schedule_size must lie in [1, n_regions]")
        if not 0.0 < self.schedule_decay <= 1.0:
            raise ValueError("schedule_decay must lie in (0, 1]")
        if not 1 <= self.n_haunts <= self.n_regions:
            raise ValueError("n_haunts must lie in [1, n_regions]")
        if self.weeks < 1:
            raise ValueError("weeks must be positive")
        if self.copy_half_life <= 0:
            raise ValueError("copy_half_life must be positive")
        if self.site_spacing <= 0 or self.interval_sigma < 0 or self.background_rate < 0:
            raise ValueError("spacing, sigma and background rate must be non-negative")
        if self.jitter_time < 0 or self.jitter_dist < 0:
            raise ValueError("jitter must be non-negative")


@dataclass(frozen=True)
class PlantedEvent:
    event_id: int
    time: int  # scheduled meeting time
    region: str
    lat: float
    lon: float
    participants: tuple
    copied: bool

    def to_json(self) -> dict:
        return {
            "event_id": self.event_id,
            "time": self.time,
            "region": self.region,
            "lat": self.lat,
            "lon": self.lon,
            "participants": list(self.participants),
            "copied": self.copied,
        }


@dataclass(frozen=True)
class SocialDataset:
    checkins: CheckinSequence
    graph: FriendshipGraph
    sites: list  # (site_id, lat, lon)
    events: list  # PlantedEvent, in time order
    config: GeneratorConfig


def _offset(lat, lon, north, east):
    """Shift by metres north/east (local flat-earth approximation)."""
    dlat = math.degrees(north / EARTH_RADIUS)
    dlon = math.degrees(east / (EARTH_RADIUS * math.cos(math.radians(lat))))
    return lat + dlat, lon + dlon


def grid_sites(n: int, spacing: float, center) -> list:
    """``n`` sites on a square grid ``spacing`` metres apart, ids ``"0"..``."""
    side = math.ceil(math.sqrt(n))
    half = (side - 1) / 2.0
    sites = []
    for i in range(n):
        r, c = divmod(i, side)
        la, lo = _offset(center[0], center[1], (r - half) * spacing, (c - half) * spacing)
        sites.append((str(i), round(la, 7), round(lo, 7)))
    return sites


def _groups(rng, n_users, lo, hi):
    order = [int(i) for i in rng.permutation(n_users)]
    groups, i = [], 0
    while i < n_users:
        k = int(rng.integers(lo, hi + 1))
        groups.append(order[i:i + k])
        i += k
    if len(groups) > 1 and len(groups[-1]) < lo:
        groups[-2].extend(groups.pop())
    return [sorted(g) for g in groups]


def _jitter_point(rng, lat, lon, radius):
    # uniform in a disc, so any two points are within 2 * radius
    r = radius * math.sqrt(rng.random())
    a = 2 * math.pi * rng.random()
    la, lo = _offset(lat, lon, r * math.cos(a), r * math.sin(a))
    return round(la, 7), round(lo, 7)


def generate_social_dataset(config: GeneratorConfig | None = None) -> SocialDataset:
    """Sample a friendship graph, weekly group meetups and background check-ins.

    Every participant of a planted meetup checks in within ``jitter_time``
    seconds and ``jitter_dist`` metres of the meeting point, so planted
    groups satisfy the default detection thresholds.
    """
    cfg = config or GeneratorConfig()
    rng = np.random.default_rng(cfg.seed)
    names = [f"u{i:03d}" for i in range(cfg.n_users)]
    sites = grid_sites(cfg.n_regions, cfg.site_spacing, cfg.center)

    groups = _groups(rng, cfg.n_users, *cfg.group_size)
    edges = set()
    for g in groups:
        for i, a in enumerate(g):
            for b in g[i + 1:]:
                edges.add((a, b))
    for a in range(cfg.n_users):
        for b in range(a + 1, cfg.n_users):
            if rng.random() < cfg.edge_prob:
                edges.add((a, b))
    graph = FriendshipGraph([(names[a], names[b]) for a, b in sorted(edges)], persons=names)

    span = cfg.weeks * WEEK
    rows = []  # (time, user index, lat, lon)
    trails = {}  # user index -> (times, region ids) of background check-ins

    haunts = [rng.choice(cfg.n_regions, size=cfg.n_haunts, replace=False) for _ in names]
    for u in range(cfg.n_users):
        k = int(rng.poisson(cfg.background_rate * cfg.weeks))
        ts = np.sort(rng.integers(cfg.start, cfg.start + span, size=k))
        regs = rng.choice(haunts[u], size=k)
        for t, r in zip(ts, regs):
            la, lo = _jitter_point(rng, sites[r][1], sites[r][2], 50.0)
            rows.append((int(t), u, la, lo))
        trails[u] = (ts, regs)

    events = []
    for g in groups:
        slot = int(rng.integers(0, 7)) * 86400 + int(rng.integers(17, 22)) * 3600 + 1800
        schedule = rng.choice(cfg.n_regions, size=cfg.schedule_size, replace=False)
        probs = cfg.schedule_decay ** np.arange(cfg.schedule_size)
        probs /= probs.sum()
        sub_seed = int(rng.integers(2**32))
        if cfg.interval_sigma > 0:
            noise = generate_arma_stream(
                cfg.interval_phi, cfg.interval_theta, 1.0, cfg.weeks, seed=sub_seed, drift=cfg.drift,
            )
            noise *= cfg.interval_sigma / max(float(np.std(noise)), 1e-9)
        else:
            noise = np.zeros(cfg.weeks)
        # meetings never cross into a neighbouring week
        noise = np.clip(noise, -43200.0, 43200.0)
        pool = g
        pool_t = np.concatenate([trails[v][0] for v in pool])
        pool_r = np.concatenate([trails[v][1] for v in pool])
        for w in range(cfg.weeks):
            t = int(round(cfg.start + w * WEEK + slot + noise[w]))
            region, copied = int(rng.choice(schedule, p=probs)), False
            if cfg.beta > 0 and rng.random() < cfg.beta:
                seen = pool_t < t - cfg.jitter_time
                if seen.any():
                    wts = np.exp2(-(t - pool_t[seen]) / cfg.copy_half_life)
                    region = int(rng.choice(pool_r[seen], p=wts / wts.sum()))
                    copied = True
            _, la, lo = sites[region]
            for m in g:
                tm = t + int(rng.integers(-int(cfg.jitter_time), int(cfg.jitter_time) + 1)) if cfg.jitter_time else t
                pla, plo = _jitter_point(rng, la, lo, cfg.jitter_dist / 2.0) if cfg.jitter_dist else (la, lo)
                rows.append((tm, m, pla, plo))
            events.append(PlantedEvent(0, t, str(region), la, lo, tuple(names[m] for m in g), copied))

    events.sort(key=lambda e: (e.time, e.participants))
    events = [PlantedEvent(i, e.time, e.region, e.lat, e.lon, e.participants, e.copied) for i, e in enumerate(events)]
    rows.sort()
    checkins = CheckinSequence([Checkin(names[u], t, la, lo, row=i) for i, (t, u, la, lo) in enumerate(rows)])
    log.info("generated %d check-ins, %d planted events, %d users", len(checkins), len(events), cfg.n_users)
    return SocialDataset(checkins, graph, sites, events, cfg)


def write_dataset(ds: SocialDataset, out_dir) -> dict:
    """Write ``checkins.csv``, ``friends.csv``, ``sites.csv`` and ``ground_truth_events.jsonl``."""
    from .location import RegionMap, write_sites

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {
        "checkins": out / "checkins.csv",
        "friends": out / "friends.csv",
        "sites": out / "sites.csv",
        "ground_truth": out / "ground_truth_events.jsonl",
    }
    write_checkins(ds.checkins, paths["checkins"])
    write_friendship(ds.graph, paths["friends"])
    write_sites(RegionMap(ds.sites), paths["sites"])
    with open(paths["ground_truth"], "w", encoding="utf-8") as fh:
        for e in ds.events:
            fh.write(json.dumps(e.to_json(), sort_keys=True) + "\n")
    return paths
