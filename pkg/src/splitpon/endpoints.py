"""CU/DU endpoint models: host stack, receiver budget, reorder buffer, and the
PER / throughput measurements taken at them."""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass
from enum import Enum

import numpy as np

from .sim import S, RngStream, to_ns
from .traffic import FlowCounters, Packet


class Verdict(Enum):
    ACCEPTED = "accepted"
    HELD = "held"
    LATE = "late"
    DUPLICATE = "duplicate"


class ReorderBuffer:
    """Sequence-ordering receive window with a per-gap playout deadline.

    A gap at ``next_expected`` opens when the first packet beyond it arrives.
    Once the gap is older than ``playout_deadline`` the missing sequence
    numbers are given up on and the held successors are released. A packet
    that shows up for a given-up sequence number is late.

    Expiry is evaluated lazily at each arrival (and at ``finish``) using the
    exact expiry instant, so no timer events are needed. Calls must come in
    non-decreasing time order.
    """

    def __init__(self, playout_deadline: float = 1e-3, capacity_packets: int = 256,
                 counters: FlowCounters | None = None) -> None:
        if playout_deadline <= 0:
            raise ValueError("playout_deadline must be positive")
        if capacity_packets < 1:
            raise ValueError("capacity_packets must be >= 1")
        self.deadline_ns = to_ns(playout_deadline)
        self.capacity = capacity_packets
        self.counters = counters if counters is not None else FlowCounters(0)
        self.next_expected = 0
        self.held: dict[int, tuple[int, int]] = {}  # seq -> (arrival, payload)
        self.expired: set[int] = set()
        self.accepted = 0
        self.late = 0
        self.duplicates = 0
        self.forced_flushes = 0
        self._gap_expiry = -1
        self.last_time = 0

    def __len__(self) -> int:
        return len(self.held)

    def _release(self) -> None:
        """Accept held packets that are now in order."""
        held = self.held
        c = self.counters
        n = self.next_expected
        while n in held:
            _, payload = held.pop(n)
            self.accepted += 1
            c.received += 1
            c.received_bytes += payload
            n += 1
        self.next_expected = n
        if held:
            self._gap_expiry = min(a for a, _ in held.values()) + self.deadline_ns
        else:
            self._gap_expiry = -1

    def _skip_gap(self) -> None:
        """Give up on the missing sequence numbers below the lowest held one."""
        lowest = min(self.held)
        self.expired.update(range(self.next_expected, lowest))
        self.next_expected = lowest
        self._release()

    def advance(self, now: int) -> None:
        """Apply every gap expiry due strictly before ``now``."""
        while self.held and self._gap_expiry < now:
            self._skip_gap()

    def receive(self, p: Packet, now: int) -> Verdict:
        if now < self.last_time:
            raise ValueError("reorder buffer fed out of time order")
        self.last_time = now
        if self.held and self._gap_expiry < now:
            self.advance(now)
        s = p.seq
        if s < self.next_expected:
            if s in self.expired:
                self.expired.discard(s)
                self.late += 1
                self.counters.late += 1
                return Verdict.LATE
            self.duplicates += 1
            return Verdict.DUPLICATE
        if s == self.next_expected:
            c = self.counters
            self.accepted += 1
            c.received += 1
            c.received_bytes += p.payload
            self.next_expected = s + 1
            if self.held:
                self._release()
            return Verdict.ACCEPTED
        if s in self.held:
            self.duplicates += 1
            return Verdict.DUPLICATE
        if not self.held:
            self._gap_expiry = now + self.deadline_ns
        self.held[s] = (now, p.payload)
        if len(self.held) > self.capacity:
            self.forced_flushes += 1
            self._skip_gap()
        return Verdict.HELD

    def finish(self, now: int | None = None) -> None:
        """End of run: expire every open gap (``now=None`` expires them all)."""
        if now is None:
            while self.held:
                self._skip_gap()
        else:
            self.advance(now)

    def gap_losses(self, excluded: set[int] | frozenset = frozenset()) -> int:
        """Given-up sequence numbers that never arrived, minus ``excluded``
        (packets known to be dropped elsewhere or still in flight)."""
        return len(self.expired - excluded) if excluded else len(self.expired)


def du_receive(p: Packet, buf: ReorderBuffer, now: int) -> Verdict:
    return buf.receive(p, now)


class ReceiverBudget:
    """Bounded-rate packet processing in front of the DU application.

    Service is FIFO at ``max_process_rate_bps`` on wire bits with room for
    ``depth`` packets (including the one in service). ``offer`` returns the
    completion instant, or -1 when the packet is dropped.
    """

    def __init__(self, max_process_rate_bps: float = 160e6, depth: int = 64) -> None:
        if max_process_rate_bps <= 0 or depth < 1:
            raise ValueError("budget rate and depth must be positive")
        self.rate = max_process_rate_bps
        self.depth = depth
        self._done: deque[int] = deque()
        self._last = 0
        self.dropped = 0
        self._cache: dict[int, int] = {}

    def offer(self, size: int, now: int) -> int:
        done = self._done
        while done and done[0] <= now:
            done.popleft()
        if len(done) >= self.depth:
            self.dropped += 1
            return -1
        svc = self._cache.get(size)
        if svc is None:
            svc = self._cache[size] = round(size * 8 * S / self.rate)
        t = (now if now > self._last else self._last) + svc
        self._last = t
        done.append(t)
        return t


class HostStack:
    """Fixed plus exponentially distributed processing latency, FIFO."""

    def __init__(self, fixed: float, jitter_mean: float, stream: RngStream) -> None:
        if fixed < 0 or jitter_mean < 0:
            raise ValueError("host latency terms must be >= 0")
        self.fixed_ns = to_ns(fixed)
        self.jitter_ns = jitter_mean * S
        self.stream = stream
        self._last = 0

    def delay(self, now: int) -> int:
        """Instant the packet arriving at ``now`` is handed to the application."""
        t = now + self.fixed_ns
        if self.jitter_ns:
            t += int(round(self.stream.standard_exponential() * self.jitter_ns))
        if t < self._last:
            t = self._last
        self._last = t
        return t


def per(counters: FlowCounters) -> float:
    """Errored packets over sent packets; errored = gap loss + late + drops."""
    if counters.sent <= 0:
        raise ValueError("PER is undefined for a flow that sent nothing")
    bad = counters.gap_loss + counters.late + counters.dropped
    return bad / counters.sent


@dataclass
class ThroughputSeries:
    times: np.ndarray   # ns, right edge of each window
    bps: np.ndarray

    def __len__(self) -> int:
        return len(self.times)


def windowed_throughput(arrival_times, arrival_bytes, window: float = 10e-3,
                        step: float = 1e-3, start: int = 0,
                        end: int | None = None) -> ThroughputSeries:
    """Sliding-window rate: s(t) = bits arrived in (t - window, t] / window.

    Samples are taken at ``start + window + k*step`` up to ``end``.
    """
    if window <= 0 or step <= 0:
        raise ValueError("window and step must be positive")
    t = np.asarray(arrival_times, dtype=np.int64)
    b = np.asarray(arrival_bytes, dtype=np.int64)
    w_ns, s_ns = to_ns(window), to_ns(step)
    if end is None:
        end = int(t[-1]) if len(t) else start + w_ns
    first = start + w_ns
    if end < first:
        return ThroughputSeries(np.empty(0, np.int64), np.empty(0))
    grid = np.arange(first, end + 1, s_ns, dtype=np.int64)
    cum = np.concatenate(([0], np.cumsum(b * 8)))
    hi = np.searchsorted(t, grid, side="right")
    lo = np.searchsorted(t, grid - w_ns, side="right")
    return ThroughputSeries(grid, (cum[hi] - cum[lo]) / window)


def t95_convergence(series: ThroughputSeries, target_bps: float,
                    source_start: int = 0, hold: float = 50e-3,
                    fraction: float = 0.95) -> float | None:
    """First time (s, relative to ``source_start``) the series reaches
    ``fraction * target`` and stays there for ``hold``; ``None`` if never."""
    if len(series) == 0 or target_bps <= 0:
        raise ValueError("series must be nonempty and target positive")
    ok = series.bps >= fraction * target_bps
    times = series.times
    hold_ns = to_ns(hold)
    # index of the next failing sample after each position
    n = len(ok)
    next_bad = np.empty(n, dtype=np.int64)
    nb = n
    for i in range(n - 1, -1, -1):
        if not ok[i]:
            nb = i
        next_bad[i] = nb
    for i in np.flatnonzero(ok):
        j = next_bad[i]
        end_ok = times[j] if j < n else None
        if end_ok is None:
            if times[-1] - times[i] >= hold_ns:
                return (int(times[i]) - source_start) / S
            return None
        if end_ok - times[i] > hold_ns:
            return (int(times[i]) - source_start) / S
    return None

