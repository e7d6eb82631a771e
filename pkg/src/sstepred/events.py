"""Detection of social spatial-temporal events (SSTEs) and per-user series.

A group of check-ins forms an event when every pair is within
``epsilon_time`` seconds and ``epsilon_dist`` meters of each other, the
distinct users involved induce a connected friendship subgraph, and at
least ``min_participants`` distinct users take part. Groups are claimed
greedily in time order: the earliest unclaimed check-in that can anchor a
feasible group gets the largest such group (ties go to the group whose
sorted member positions are lexicographically smallest), its members are
removed, and the scan continues.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from statistics import median

import numpy as np

from .errors import FutureCheckin, InsufficientHistory
from .geo import haversine
from .ingestion import Checkin, CheckinSequence, FriendshipGraph

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class DetectionParams:
    epsilon_time: float = 3600.0
    epsilon_dist: float = 200.0
    min_participants: int = 2

    def __post_init__(self):
        if not self.epsilon_time > 0:
            raise ValueError("epsilon_time must be positive")
        if not self.epsilon_dist > 0:
            raise ValueError("epsilon_dist must be positive")
        if self.min_participants < 2:
            raise ValueError("min_participants must be at least 2")


@dataclass(frozen=True)
class Sste:
    event_id: int
    participants: frozenset
    member_checkins: tuple
    time: float
    lat: float
    lon: float

    @property
    def coords(self):
        return (self.lat, self.lon)

    def to_json(self) -> dict:
        return {
            "event_id": self.event_id,
            "time": self.time,
            "lat": self.lat,
            "lon": self.lon,
            "participants": sorted(self.participants),
            "checkin_ids": [c.row for c in self.member_checkins],
        }


@dataclass(frozen=True)
class EventSequence:
    user: str
    events: tuple

    def __len__(self):
        return len(self.events)

    @property
    def times(self) -> np.ndarray:
        return np.array([e.time for e in self.events], dtype=float)


@dataclass(frozen=True)
class IntervalSeries:
    user: str
    values: np.ndarray

    def __len__(self):
        return len(self.values)


def users_connected(users, graph: FriendshipGraph) -> bool:
    """True when ``users`` induce a connected subgraph of ``graph``."""
    users = set(users)
    if not users:
        return False
    start = next(iter(users))
    seen = {start}
    stack = [start]
    while stack:
        u = stack.pop()
        for v in graph.friends_of(u):
            if v in users and v not in seen:
                seen.add(v)
                stack.append(v)
    return len(seen) == len(users)


def _make_event(event_id, members):
    times = [c.time for c in members]
    return Sste(
        event_id=event_id,
        participants=frozenset(c.user for c in members),
        member_checkins=tuple(members),
        time=float(median(times)),
        lat=float(np.mean([c.lat for c in members])),
        lon=float(np.mean([c.lon for c in members])),
    )


def _best_group(anchor, cands, compat, users, graph, min_participants):
    """Largest feasible clique containing ``anchor`` drawn from ``cands``.

    ``cands`` are positions later than the anchor, already compatible with
    it. Cliques are visited in lexicographic order of their sorted member
    positions, so the first one found at the winning size is the tie-break
    winner.
    """
    best: list = []

    def feasible(members):
        us = {users[i] for i in members}
        return len(us) >= min_participants and users_connected(us, graph)

    def grow(current, pool):
        nonlocal best
        if len(current) > len(best) and feasible(current):
            best = list(current)
        for k, c in enumerate(pool):
            rest = pool[k + 1:]
            if len(current) + 1 + len(rest) <= len(best):
                break
            grow(current + [c], [d for d in rest if compat(c, d)])

    grow([anchor], cands)
    return best


def detect_sstes(checkins: CheckinSequence, graph: FriendshipGraph, params: DetectionParams | None = None):
    """Detect events in ``checkins``. Returns them in formation order."""
    params = params or DetectionParams()
    recs = checkins.records
    n = len(recs)
    if n == 0:
        return []
    times = checkins.times
    lat = checkins.coords[:, 0]
    lon = checkins.coords[:, 1]
    users = [r.user for r in recs]
    claimed = np.zeros(n, dtype=bool)
    dist_cache: dict = {}

    def compat(i, j):
        key = (i, j) if i < j else (j, i)
        ok = dist_cache.get(key)
        if ok is None:
            ok = bool(haversine(lat[i], lon[i], lat[j], lon[j]) <= params.epsilon_dist)
            dist_cache[key] = ok
        return ok

    events = []
    hi = 0
    for a in range(n):
        if claimed[a]:
            continue
        ua = users[a]
        if not graph.friends_of(ua):
            continue
        while hi < n and times[hi] - times[a] <= params.epsilon_time:
            hi += 1
        window = [j for j in range(a + 1, hi) if not claimed[j]]
        if not window:
            continue
        # cheap vectorised distance prefilter against the anchor
        w = np.asarray(window)
        d = haversine(lat[a], lon[a], lat[w], lon[w])
        cands = [j for j, dj in zip(window, d) if dj <= params.epsilon_dist]
        # keep only check-ins whose user could link into the group
        pool_users = {users[j] for j in cands} | {ua}
        cands = [
            j for j in cands
            if users[j] == ua or graph.friends_of(users[j]) & pool_users
        ]
        if not any(users[j] != ua for j in cands):
            continue
        group = _best_group(a, cands, compat, users, graph, params.min_participants)
        if not group:
            continue
        claimed[group] = True
        events.append(_make_event(len(events), [recs[i] for i in sorted(group)]))
    log.debug("detected %d events from %d check-ins", len(events), n)
    return events


def event_sequence(events, u: str) -> EventSequence:
    """Time-ordered events involving ``u``.

    Events sharing the exact time of an earlier one are dropped so the
    resulting interval series stays strictly positive.
    """
    mine = sorted((e for e in events if u in e.participants), key=lambda e: (e.time, e.event_id))
    kept = []
    for e in mine:
        if kept and e.time <= kept[-1].time:
            log.debug("user %s: dropping event %d with duplicate time", u, e.event_id)
            continue
        kept.append(e)
    return EventSequence(u, tuple(kept))


def event_sequences(events) -> dict[str, EventSequence]:
    users = sorted({u for e in events for u in e.participants})
    return {u: event_sequence(events, u) for u in users}


def interval_series(seq: EventSequence) -> IntervalSeries:
    if len(seq.events) < 2:
        raise InsufficientHistory(f"user {seq.user} has {len(seq.events)} events; need at least 2")
    return IntervalSeries(seq.user, np.diff(seq.times))


def decayed_weight(r: Checkin, now: float, half_life: float) -> float:
    """Recency weight ``2 ** (-(now - r.time) / half_life)``."""
    if half_life <= 0:
        raise ValueError("half_life must be positive")
    age = now - r.weight_anchor
    if age < 0:
        raise FutureCheckin(f"check-in at {r.time} is after reference time {now}")
    return 2.0 ** (-age / half_life)


def write_events(events, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for e in events:
            fh.write(json.dumps(e.to_json(), sort_keys=True) + "\n")


def read_events(path, checkins: CheckinSequence):
    """Load events written by :func:`write_events`.

    ``checkin_ids`` refer to input rows of ``checkins``.
    """
    by_row = {c.row: c for c in checkins}
    events = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if not line.strip():
                continue
            d = json.loads(line)
            members = tuple(by_row[i] for i in d["checkin_ids"])
            events.append(Sste(
                event_id=int(d["event_id"]),
                participants=frozenset(d["participants"]),
                member_checkins=members,
                time=float(d["time"]),
                lat=float(d["lat"]),
                lon=float(d["lon"]),
            ))
    return events
