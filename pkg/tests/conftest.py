import math
from datetime import datetime, timezone

import numpy as np
import pytest
from scipy import signal

from sstepred.ingestion import Checkin, CheckinSequence, FriendshipGraph


def lfilter_arma(phi, theta, n, seed, sigma2=1.0, burn=200):
    """ARMA sample path via scipy's IIR filter (independent of the package generator)."""
    rng = np.random.default_rng(seed)
    e = rng.normal(0.0, math.sqrt(sigma2), n + burn)
    ar = np.r_[1.0, -np.asarray(phi, dtype=float)]
    ma = np.r_[1.0, -np.asarray(theta, dtype=float)]
    return signal.lfilter(ma, ar, e)[burn:]


def great_circle(lat1, lon1, lat2, lon2):
    """Scalar haversine written with the math module only."""
    p1, p2 = math.radians(lat1), math.radians(lat2)
    dp = p2 - p1
    dl = math.radians(lon2 - lon1)
    a = math.sin(dp / 2) ** 2 + math.cos(p1) * math.cos(p2) * math.sin(dl / 2) ** 2
    return 2 * 6_371_000.0 * math.asin(min(1.0, math.sqrt(a)))


def utc_bucket(t):
    d = datetime.fromtimestamp(int(t), tz=timezone.utc)
    return d.weekday() * 24 + d.hour


def seq_of(*rows):
    """CheckinSequence from (user, time, lat, lon) tuples, rows numbered in order."""
    return CheckinSequence([Checkin(u, t, la, lo, row=i) for i, (u, t, la, lo) in enumerate(rows)])


@pytest.fixture
def triangle_graph():
    return FriendshipGraph([("a", "b"), ("b", "c")])


# one line per acceptance criterion, echoed in the terminal summary
ACCEPTANCE_LINES = []


def report_criterion(number, passed, detail):
    line = f"criterion {number:>2}: {'PASS' if passed else 'FAIL'}  {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    return passed


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
