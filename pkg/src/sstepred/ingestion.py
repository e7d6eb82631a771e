"""Reading and indexing check-ins and the friendship graph.

Both inputs are small comma-separated files::

    checkins.csv   user_id,timestamp,lat,lon
    friends.csv    user_id_a,user_id_b

The header line is optional on read and always written on output.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Iterable

import numpy as np

from .errors import DataError

CHECKIN_HEADER = ["user_id", "timestamp", "lat", "lon"]
FRIENDS_HEADER = ["user_id_a", "user_id_b"]


@dataclass(frozen=True)
class Checkin:
    """One geotagged check-in. ``row`` is the zero-based input position."""

    user: str
    time: int
    lat: float
    lon: float
    row: int = field(default=0, compare=False)

    @property
    def coords(self) -> tuple[float, float]:
        return (self.lat, self.lon)

    @property
    def weight_anchor(self) -> int:
        return self.time


class CheckinSequence:
    """Check-ins sorted by time, ties broken by (user, input order).

    Instances are treated as immutable once built.
    """

    def __init__(self, records: Iterable[Checkin] = ()):
        self.records: tuple[Checkin, ...] = tuple(
            sorted(records, key=lambda r: (r.time, r.user, r.row))
        )
        index: dict[str, list[int]] = {}
        for pos, r in enumerate(self.records):
            index.setdefault(r.user, []).append(pos)
        self.user_index: dict[str, tuple[int, ...]] = {u: tuple(v) for u, v in index.items()}

    def __len__(self):
        return len(self.records)

    def __iter__(self):
        return iter(self.records)

    def __getitem__(self, i):
        return self.records[i]

    def __eq__(self, other):
        if not isinstance(other, CheckinSequence):
            return NotImplemented
        return self.records == other.records

    def __repr__(self):
        return f"CheckinSequence({len(self.records)} records, {len(self.user_index)} users)"

    @property
    def users(self) -> list[str]:
        return sorted(self.user_index)

    def for_user(self, user: str) -> list[Checkin]:
        return [self.records[i] for i in self.user_index.get(user, ())]

    @cached_property
    def times(self) -> np.ndarray:
        return np.array([r.time for r in self.records], dtype=np.int64)

    @cached_property
    def coords(self) -> np.ndarray:
        """``(n, 2)`` array of latitude/longitude pairs."""
        if not self.records:
            return np.empty((0, 2))
        return np.array([(r.lat, r.lon) for r in self.records], dtype=float)


class FriendshipGraph:
    """Undirected friendship graph without self-loops."""

    def __init__(self, edges: Iterable[tuple[str, str]] = (), persons: Iterable[str] = ()):
        adj: dict[str, set[str]] = {p: set() for p in persons}
        for a, b in edges:
            if a == b:
                raise DataError(f"self-loop on {a!r}")
            adj.setdefault(a, set()).add(b)
            adj.setdefault(b, set()).add(a)
        self._adj = {p: frozenset(n) for p, n in adj.items()}

    @property
    def persons(self) -> frozenset[str]:
        return frozenset(self._adj)

    @property
    def edges(self) -> set[frozenset[str]]:
        return {frozenset((a, b)) for a, nbrs in self._adj.items() for b in nbrs}

    def friends_of(self, u: str) -> frozenset[str]:
        return self._adj.get(u, frozenset())

    def are_friends(self, a: str, b: str) -> bool:
        return b in self._adj.get(a, ())

    def __contains__(self, u):
        return u in self._adj

    def __repr__(self):
        return f"FriendshipGraph({len(self._adj)} persons, {len(self.edges)} edges)"


def friends_of(graph: FriendshipGraph, u: str) -> frozenset[str]:
    """Neighbours of ``u``; empty when ``u`` is unknown or isolated."""
    return graph.friends_of(u)


def _rows(path, header):
    """Yield ``(line_number, fields)`` for the data rows of a CSV file."""
    path = Path(path)
    if not path.is_file():
        raise DataError("no such file", path=path)
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        for fields in reader:
            lineno = reader.line_num
            if not fields or all(not f.strip() for f in fields):
                continue
            fields = [f.strip() for f in fields]
            if lineno == 1 and fields == header:
                continue
            if len(fields) != len(header):
                raise DataError(
                    f"expected {len(header)} fields, got {len(fields)}", path=path, line=lineno
                )
            yield lineno, fields


def parse_checkins(path) -> CheckinSequence:
    """Parse a ``user_id,timestamp,lat,lon`` file into a sorted sequence.

    Raises
    ------
    DataError
        On a malformed row, a non-integer or negative timestamp, or
        coordinates out of range. The message carries the line number.
    """
    records = []
    for lineno, (user, ts, lat, lon) in _rows(path, CHECKIN_HEADER):
        if not user:
            raise DataError("empty user id", path=path, line=lineno)
        try:
            t = int(ts)
        except ValueError:
            raise DataError(f"non-numeric timestamp {ts!r}", path=path, line=lineno) from None
        if t < 0:
            raise DataError(f"negative timestamp {t}", path=path, line=lineno)
        try:
            la, lo = float(lat), float(lon)
        except ValueError:
            raise DataError(f"non-numeric coordinates {lat!r},{lon!r}", path=path, line=lineno) from None
        if not (-90.0 <= la <= 90.0) or not (-180.0 <= lo <= 180.0):
            raise DataError(f"coordinates out of range ({la}, {lo})", path=path, line=lineno)
        records.append(Checkin(user, t, la, lo, row=len(records)))
    return CheckinSequence(records)


def write_checkins(seq: CheckinSequence, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CHECKIN_HEADER)
        for r in seq:
            w.writerow([r.user, r.time, repr(r.lat), repr(r.lon)])


def parse_friendship(path) -> FriendshipGraph:
    """Parse a ``user_id_a,user_id_b`` edge list; duplicates collapse."""
    edges = []
    for lineno, (a, b) in _rows(path, FRIENDS_HEADER):
        if not a or not b:
            raise DataError("empty user id", path=path, line=lineno)
        if a == b:
            raise DataError(f"self-loop on {a!r}", path=path, line=lineno)
        edges.append((a, b))
    return FriendshipGraph(edges)


def write_friendship(graph: FriendshipGraph, path) -> None:
    pairs = sorted(tuple(sorted(e)) for e in graph.edges)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(FRIENDS_HEADER)
        w.writerows(pairs)
