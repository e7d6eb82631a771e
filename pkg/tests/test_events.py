import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import great_circle, seq_of
from oracles import brute_force_events, feasible, random_instance
from sstepred.errors import FutureCheckin, InsufficientHistory
from sstepred.events import (
    DetectionParams,
    EventSequence,
    Sste,
    decayed_weight,
    detect_sstes,
    event_sequence,
    event_sequences,
    interval_series,
    read_events,
    users_connected,
    write_events,
)
from sstepred.ingestion import Checkin, FriendshipGraph


def test_two_friends_make_one_event():
    seq = seq_of(("a", 1000, 40.0, -70.0), ("b", 1060, 40.00009, -70.0))
    events = detect_sstes(seq, FriendshipGraph([("a", "b")]))
    assert len(events) == 1
    e = events[0]
    assert e.participants == {"a", "b"}
    assert e.time == 1030.0
    assert e.lat == pytest.approx(40.000045)


def test_strangers_make_no_event():
    seq = seq_of(("a", 1000, 40.0, -70.0), ("b", 1060, 40.00009, -70.0))
    assert detect_sstes(seq, FriendshipGraph([("a", "c")])) == []


def test_path_graph_is_enough(triangle_graph):
    seq = seq_of(("a", 0, 40.0, -70.0), ("b", 10, 40.0, -70.0), ("c", 20, 40.0, -70.0))
    events = detect_sstes(seq, triangle_graph)
    assert len(events) == 1 and events[0].participants == {"a", "b", "c"}
    assert [tuple(g) for g in brute_force_events(seq, triangle_graph)] == [(0, 1, 2)]


def test_limits_are_inclusive():
    p = DetectionParams(epsilon_time=100, epsilon_dist=500)
    g = FriendshipGraph([("a", "b")])
    assert len(detect_sstes(seq_of(("a", 0, 0.0, 0.0), ("b", 100, 0.0, 0.0)), g, p)) == 1
    assert detect_sstes(seq_of(("a", 0, 0.0, 0.0), ("b", 101, 0.0, 0.0)), g, p) == []


def test_one_user_alone_is_not_an_event():
    seq = seq_of(("a", 0, 0.0, 0.0), ("a", 5, 0.0, 0.0))
    assert detect_sstes(seq, FriendshipGraph([("a", "b")])) == []


def test_repeat_checkins_fold_into_one_event():
    seq = seq_of(("a", 0, 0.0, 0.0), ("a", 5, 0.0, 0.0), ("b", 9, 0.0, 0.0))
    [e] = detect_sstes(seq, FriendshipGraph([("a", "b")]))
    assert len(e.member_checkins) == 3 and e.participants == {"a", "b"}


def test_min_participants():
    g = FriendshipGraph([("a", "b"), ("b", "c")])
    seq = seq_of(("a", 0, 0.0, 0.0), ("b", 1, 0.0, 0.0))
    assert detect_sstes(seq, g, DetectionParams(min_participants=3)) == []


@pytest.mark.parametrize("kw", [dict(epsilon_time=0), dict(epsilon_dist=-1), dict(min_participants=1)])
def test_invalid_params(kw):
    with pytest.raises(ValueError):
        DetectionParams(**kw)


def test_matches_brute_force_on_random_instances():
    rng = np.random.default_rng(11)
    for _ in range(60):
        seq, graph = random_instance(rng, max_checkins=9)
        got = [tuple(seq.records.index(c) for c in e.member_checkins) for e in detect_sstes(seq, graph)]
        assert got == [tuple(g) for g in brute_force_events(seq, graph)]


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**31))
def test_detection_invariants(seed):
    seq, graph = random_instance(np.random.default_rng(seed))
    events = detect_sstes(seq, graph)
    used = [c.row for e in events for c in e.member_checkins]
    assert len(used) == len(set(used))
    for e in events:
        idx = [seq.records.index(c) for c in e.member_checkins]
        assert feasible(seq.records, idx, graph, 3600, 200, 2)
        for c in e.member_checkins:
            # centroid and median lie inside the member hull, so the relaxed bounds hold
            assert abs(c.time - e.time) <= 3600
            assert great_circle(c.lat, c.lon, e.lat, e.lon) <= 200


def _ev(i, users, t):
    return Sste(i, frozenset(users), (), float(t), 0.0, 0.0)


def test_event_sequence_examples():
    events = [_ev(0, "ab", 100), _ev(1, "bc", 200)]
    assert [e.event_id for e in event_sequence(events, "b").events] == [0, 1]
    assert [e.event_id for e in event_sequence(events, "a").events] == [0]
    assert event_sequence([], "a").events == ()
    assert set(event_sequences(events)) == {"a", "b", "c"}


def test_event_sequence_sorts_and_drops_equal_times():
    events = [_ev(0, "ab", 300), _ev(1, "ab", 100), _ev(2, "ac", 100)]
    seq = event_sequence(events, "a")
    assert [e.event_id for e in seq.events] == [1, 0]


def test_interval_series_examples():
    def seq(times):
        return EventSequence("u", tuple(_ev(i, "u", t) for i, t in enumerate(times)))

    assert list(interval_series(seq([100, 400, 900])).values) == [300, 500]
    assert list(interval_series(seq([0, 86400])).values) == [86400]
    with pytest.raises(InsufficientHistory):
        interval_series(seq([5]))


def test_decayed_weight():
    r = Checkin("a", 1000, 0.0, 0.0)
    assert decayed_weight(r, 1000, 50) == 1.0
    assert decayed_weight(r, 1050, 50) == 0.5
    assert decayed_weight(r, 1100, 50) == 0.25
    with pytest.raises(FutureCheckin):
        decayed_weight(r, 999, 50)
    with pytest.raises(ValueError):
        decayed_weight(r, 1000, 0)


@given(st.floats(0, 1e7), st.floats(0, 1e7), st.floats(1, 1e6))
def test_decayed_weight_monotone(a, b, hl):
    r = Checkin("a", 0, 0.0, 0.0)
    lo, hi = sorted((a, b))
    assert decayed_weight(r, hi, hl) <= decayed_weight(r, lo, hl) <= 1.0


def test_users_connected():
    g = FriendshipGraph([("a", "b"), ("c", "d")])
    assert users_connected({"a", "b"}, g)
    assert not users_connected({"a", "c"}, g)
    assert not users_connected(set(), g)


def test_events_json_round_trip(tmp_path):
    seq = seq_of(("a", 0, 40.0, -70.0), ("b", 30, 40.0, -70.0), ("c", 9000, 1.0, 1.0))
    events = detect_sstes(seq, FriendshipGraph([("a", "b")]))
    path = tmp_path / "e.jsonl"
    write_events(events, path)
    line = json.loads(path.read_text().splitlines()[0])
    assert set(line) == {"event_id", "time", "lat", "lon", "participants", "checkin_ids"}
    assert line["participants"] == ["a", "b"] and line["checkin_ids"] == [0, 1]
    assert read_events(path, seq) == events
