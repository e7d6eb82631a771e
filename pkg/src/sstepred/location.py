"""Region discretisation and ranking of candidate locations.

Coordinates are snapped to the nearest site (a Voronoi partition under
great-circle distance). Each candidate region gets

* a temporal score, the empirical probability of the region among the
  user's past events in the same hour-of-week bucket as the predicted time;
* a social score, the recency-weighted share of friends' earlier check-ins
  that fall in the region;

and the two are blended with weight ``xi`` on the temporal side.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DataError, NoCandidates
from .geo import haversine
from .ingestion import CheckinSequence, FriendshipGraph

log = logging.getLogger(__name__)

HOURS_PER_WEEK = 168
SITES_HEADER = ["site_id", "lat", "lon"]
DEFAULT_HALF_LIFE = 7 * 86400.0


def _site_key(site_id: str):
    # numeric ids sort numerically, everything else lexically after them
    try:
        return (0, int(site_id), "")
    except ValueError:
        return (1, 0, site_id)


class RegionMap:
    """Nearest-site partition of the sphere.

    Sites are kept sorted by id; distance ties resolve to the lowest id.
    """

    def __init__(self, sites):
        sites = [(str(s), float(la), float(lo)) for s, la, lo in sites]
        if not sites:
            raise ValueError("a region map needs at least one site")
        ids = [s for s, _, _ in sites]
        if len(set(ids)) != len(ids):
            raise ValueError("site ids must be unique")
        sites.sort(key=lambda s: _site_key(s[0]))
        self.ids: list[str] = [s for s, _, _ in sites]
        self.lat = np.array([s[1] for s in sites])
        self.lon = np.array([s[2] for s in sites])
        self._pos = {s: i for i, s in enumerate(self.ids)}

    def __len__(self):
        return len(self.ids)

    @property
    def sites(self):
        return list(zip(self.ids, self.lat.tolist(), self.lon.tolist()))

    def position(self, site_id) -> int:
        return self._pos[str(site_id)]

    def assign_index(self, lat, lon) -> np.ndarray:
        """Site positions for arrays of coordinates."""
        lat = np.atleast_1d(np.asarray(lat, dtype=float))
        lon = np.atleast_1d(np.asarray(lon, dtype=float))
        out = np.empty(len(lat), dtype=np.intp)
        chunk = max(1, 200_000 // len(self.ids))
        for i in range(0, len(lat), chunk):
            d = haversine(lat[i:i + chunk, None], lon[i:i + chunk, None], self.lat[None, :], self.lon[None, :])
            out[i:i + chunk] = np.argmin(d, axis=1)
        return out

    def assign(self, lat: float, lon: float) -> str:
        return self.ids[int(self.assign_index(lat, lon)[0])]


def assign_region(coords, region_map: RegionMap) -> str:
    """Id of the site nearest to ``coords = (lat, lon)``."""
    return region_map.assign(*coords)


def parse_sites(path) -> RegionMap:
    path = Path(path)
    if not path.is_file():
        raise DataError("no such file", path=path)
    sites = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        for fields in reader:
            if not fields or all(not f.strip() for f in fields):
                continue
            fields = [f.strip() for f in fields]
            if reader.line_num == 1 and fields == SITES_HEADER:
                continue
            if len(fields) != 3:
                raise DataError(f"expected 3 fields, got {len(fields)}", path=path, line=reader.line_num)
            try:
                la, lo = float(fields[1]), float(fields[2])
            except ValueError:
                raise DataError("non-numeric coordinates", path=path, line=reader.line_num) from None
            if not (-90 <= la <= 90 and -180 <= lo <= 180):
                raise DataError(f"coordinates out of range ({la}, {lo})", path=path, line=reader.line_num)
            sites.append((fields[0], la, lo))
    try:
        return RegionMap(sites)
    except ValueError as exc:
        raise DataError(str(exc), path=path) from None


def write_sites(region_map: RegionMap, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SITES_HEADER)
        for s, la, lo in region_map.sites:
            w.writerow([s, repr(la), repr(lo)])


def kmeans_sites(coords, k: int = 50, seed: int = 0) -> RegionMap:
    """Sites from k-means over check-in coordinates (used when no site file is given)."""
    from scipy.cluster.vq import kmeans2

    pts = np.asarray(coords, dtype=float)
    if len(pts) == 0:
        raise ValueError("no coordinates to cluster")
    pts = np.unique(pts, axis=0)
    k = max(1, min(k, len(pts)))
    centroids, _ = kmeans2(pts, k, minit="++", seed=np.random.default_rng(seed))
    centroids = np.unique(centroids, axis=0)
    return RegionMap([(str(i), la, lo) for i, (la, lo) in enumerate(centroids)])


def hour_of_week(t) -> np.ndarray | int:
    """UTC hour-of-week bucket in ``[0, 167]``, Monday 00:00 = 0."""
    t = np.floor(np.asarray(t, dtype=float)).astype(np.int64)
    days = t // 86400
    weekday = (days + 3) % 7  # 1970-01-01 was a Thursday
    hour = (t % 86400) // 3600
    out = weekday * 24 + hour
    return int(out) if out.ndim == 0 else out


@dataclass(frozen=True)
class RankedRegion:
    region: str
    g_temporal: float
    g_social: float
    g: float

    def to_json(self) -> dict:
        return {"region": self.region, "g": self.g, "g_temporal": self.g_temporal, "g_social": self.g_social}


@dataclass(frozen=True)
class TemporalScore:
    value: float
    defined: bool


def temporal_score(u_history, region, bucket: int, region_map: RegionMap, smoothing: float = 0.0,
                   n_candidates: int | None = None) -> TemporalScore:
    """Probability of ``region`` among past events in hour-of-week ``bucket``.

    ``(count(region, bucket) + a) / (count(bucket) + a * n_candidates)``.
    At ``a = 0`` this is the Bayes-rule combination of the three empirical
    frequencies; when no past event falls in the bucket the score is 0 and
    ``defined`` is False.
    """
    events = u_history.events if hasattr(u_history, "events") else u_history
    if n_candidates is None:
        n_candidates = len(region_map)
    buckets = [hour_of_week(e.time) for e in events]
    regions = [region_map.assign(e.lat, e.lon) for e in events]
    in_bucket = sum(1 for b in buckets if b == bucket)
    both = sum(1 for b, r in zip(buckets, regions) if b == bucket and r == str(region))
    denom = in_bucket + smoothing * n_candidates
    if denom == 0:
        return TemporalScore(0.0, False)
    return TemporalScore((both + smoothing) / denom, True)


class CheckinIndex:
    """Per-user time-sorted check-ins with their region positions.

    Built once per dataset so that scoring many ``(user, time)`` queries
    does not re-assign regions.
    """

    def __init__(self, checkins: CheckinSequence, region_map: RegionMap):
        self.region_map = region_map
        regions = region_map.assign_index(checkins.coords[:, 0], checkins.coords[:, 1]) if len(checkins) else np.zeros(0, dtype=np.intp)
        times = checkins.times
        self._times = {}
        self._regions = {}
        for u, pos in checkins.user_index.items():
            idx = np.asarray(pos)
            self._times[u] = times[idx].astype(float)
            self._regions[u] = regions[idx]

    def before(self, users, cutoff: float):
        """Times and region positions of check-ins by ``users`` strictly before ``cutoff``."""
        ts, rs = [], []
        for u in users:
            t = self._times.get(u)
            if t is None:
                continue
            k = np.searchsorted(t, cutoff, side="left")
            ts.append(t[:k])
            rs.append(self._regions[u][:k])
        if not ts:
            return np.zeros(0), np.zeros(0, dtype=np.intp)
        return np.concatenate(ts), np.concatenate(rs)


def _social_weights(index: CheckinIndex, friends, tau_hat, half_life, cutoff=None):
    """Per-region decayed weight of friends' earlier check-ins."""
    cutoff = tau_hat if cutoff is None else min(cutoff, tau_hat)
    t, r = index.before(sorted(friends), cutoff)
    w = np.exp2(-(tau_hat - t) / half_life)
    return np.bincount(r, weights=w, minlength=len(index.region_map))


def social_score(checkins, graph: FriendshipGraph, u, region, tau_hat, region_map: RegionMap,
                 half_life: float = DEFAULT_HALF_LIFE, index: CheckinIndex | None = None) -> float:
    """Share of friends' recency weight that lies in ``region`` (0 when there is none)."""
    index = index or CheckinIndex(checkins, region_map)
    wts = _social_weights(index, graph.friends_of(u), tau_hat, half_life)
    total = wts.sum()
    if total <= 0:
        return 0.0
    return float(wts[region_map.position(region)] / total)


def candidate_regions(checkins, graph: FriendshipGraph, u, u_history, tau_hat, region_map: RegionMap,
                      index: CheckinIndex | None = None, cutoff=None) -> set[str]:
    """Regions where ``u`` or a friend checked in strictly before ``tau_hat``.

    Raises
    ------
    NoCandidates
        When the set is empty.
    """
    index = index or CheckinIndex(checkins, region_map)
    cutoff = tau_hat if cutoff is None else min(cutoff, tau_hat)
    _, r = index.before([u, *sorted(graph.friends_of(u))], cutoff)
    if len(r) == 0:
        raise NoCandidates(f"no check-ins by {u} or friends before {tau_hat}")
    return {region_map.ids[i] for i in np.unique(r)}


class LocationScorer:
    """Scores candidate regions for many queries against one dataset."""

    def __init__(self, checkins: CheckinSequence, graph: FriendshipGraph, region_map: RegionMap,
                 half_life: float = DEFAULT_HALF_LIFE, smoothing: float = 0.0):
        self.graph = graph
        self.region_map = region_map
        self.half_life = half_life
        self.smoothing = smoothing
        self.index = CheckinIndex(checkins, region_map)

    def score(self, u, history, tau_hat, cutoff=None):
        """Candidate positions with temporal and social scores.

        ``history`` is a sequence of past events of ``u``. ``cutoff``
        further restricts which check-ins count as already seen (defaults to
        ``tau_hat``). Returns ``(positions, g_temporal, g_social)`` arrays.
        """
        cutoff = tau_hat if cutoff is None else min(cutoff, tau_hat)
        friends = self.graph.friends_of(u)
        _, own = self.index.before([u, *sorted(friends)], cutoff)
        if len(own) == 0:
            raise NoCandidates(f"no check-ins by {u} or friends before {tau_hat}")
        cand = np.unique(own)
        n_regions = len(self.region_map)

        bucket = hour_of_week(tau_hat)
        counts = np.zeros(n_regions)
        in_bucket = 0
        for e in history:
            if hour_of_week(e.time) == bucket:
                in_bucket += 1
                counts[self._event_region(e)] += 1
        denom = in_bucket + self.smoothing * len(cand)
        g_t = (counts[cand] + self.smoothing) / denom if denom > 0 else np.zeros(len(cand))

        wts = _social_weights(self.index, friends, tau_hat, self.half_life, cutoff)
        total = wts.sum()
        g_s = wts[cand] / total if total > 0 else np.zeros(len(cand))
        return cand, g_t, g_s

    def _event_region(self, e) -> int:
        cache = self.__dict__.setdefault("_event_cache", {})
        key = (e.lat, e.lon)
        pos = cache.get(key)
        if pos is None:
            pos = cache[key] = int(self.region_map.assign_index(e.lat, e.lon)[0])
        return pos

    def rank(self, u, history, tau_hat, xi: float, top_n: int, cutoff=None) -> list[RankedRegion]:
        cand, g_t, g_s = self.score(u, history, tau_hat, cutoff)
        return rank_scored(self.region_map, cand, g_t, g_s, xi, top_n)


def rank_scored(region_map: RegionMap, cand, g_t, g_s, xi: float, top_n: int) -> list[RankedRegion]:
    """Blend and sort; ties go to the lower site id."""
    if not 0.0 <= xi <= 1.0:
        raise ValueError("xi must lie in [0, 1]")
    if top_n < 1:
        raise ValueError("top_n must be at least 1")
    g = xi * g_t + (1.0 - xi) * g_s
    order = np.lexsort((cand, -g))[:top_n]
    return [RankedRegion(region_map.ids[cand[i]], float(g_t[i]), float(g_s[i]), float(g[i])) for i in order]


def rank_locations(checkins, graph, u, u_history, tau_hat, region_map, xi: float = 0.8, top_n: int = 10,
                   smoothing: float = 0.0, half_life: float = DEFAULT_HALF_LIFE) -> list[RankedRegion]:
    """Top-``top_n`` candidate regions for ``u``'s next event at ``tau_hat``."""
    scorer = LocationScorer(checkins, graph, region_map, half_life=half_life, smoothing=smoothing)
    events = u_history.events if hasattr(u_history, "events") else u_history
    return scorer.rank(u, events, tau_hat, xi, top_n)
