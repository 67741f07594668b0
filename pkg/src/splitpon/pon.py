"""XGS-PON segment: downstream broadcast FIFO, upstream TDMA with T-CONT
queues, status reporting, and the two-phase DBA."""

from __future__ import annotations

import logging
from collections import deque
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Iterable

from .links import FifoLink
from .sim import S, Engine, to_ns
from .traffic import Packet

log = logging.getLogger(__name__)

SPEED_OF_LIGHT = 299_792_458.0


def propagation_delay(length_km: float, group_index: float = 1.468) -> float:
    """One-way fibre delay in seconds."""
    if length_km < 0:
        raise ValueError("fibre length must be >= 0")
    return length_km * 1e3 * group_index / SPEED_OF_LIGHT


class TContType(Enum):
    TYPE3 = 3


@dataclass(frozen=True)
class TContProfile:
    tcont_id: int
    assured_bps: float
    queue_capacity_bytes: int = 1_000_000
    tcont_type: TContType = TContType.TYPE3

    def __post_init__(self) -> None:
        if self.assured_bps < 0:
            raise ValueError("assured_bps must be >= 0")
        if self.queue_capacity_bytes <= 0:
            raise ValueError("queue_capacity_bytes must be positive")
        if self.tcont_type is not TContType.TYPE3:
            raise NotImplementedError("only T-CONT type 3 is modelled")


def check_profiles(profiles: Iterable[TContProfile],
                   upstream_capacity_bps: float) -> list[str]:
    """Configuration problems with a T-CONT set (empty list when valid)."""
    profiles = list(profiles)
    problems = []
    ids = [p.tcont_id for p in profiles]
    if len(set(ids)) != len(ids):
        problems.append("duplicate tcont_id")
    total = sum(p.assured_bps for p in profiles)
    if total > upstream_capacity_bps:
        problems.append(
            f"sum of assured rates {total:.6g} b/s exceeds upstream capacity "
            f"{upstream_capacity_bps:.6g} b/s")
    return problems


def assured_bytes_per_cycle(assured_bps: float, cycle: float) -> int:
    return int(round(assured_bps * cycle / 8))


class TContQueue:
    def __init__(self, profile: TContProfile) -> None:
        self.profile = profile
        self.fifo: deque[Packet] = deque()
        self.occupancy_bytes = 0
        self.accepted = 0
        self.dropped = 0

    def __len__(self) -> int:
        return len(self.fifo)


def upstream_enqueue(tcont: TContQueue, p: Packet) -> bool:
    """Append ``p`` unless it would overflow the queue; returns acceptance."""
    if tcont.occupancy_bytes + p.size > tcont.profile.queue_capacity_bytes:
        tcont.dropped += 1
        return False
    tcont.fifo.append(p)
    tcont.occupancy_bytes += p.size
    tcont.accepted += 1
    return True


@dataclass(frozen=True)
class OccupancyReport:
    tcont_id: int
    reported_bytes: int
    report_time: int


@dataclass
class GrantMap:
    cycle_start: int
    grants: dict[int, int] = field(default_factory=dict)

    @property
    def total(self) -> int:
        return sum(self.grants.values())


@dataclass
class TContDbaEntry:
    smoothed_demand: float = 0.0   # bytes per cycle
    assured_credit: float = 0.0
    be_credit: float = 0.0
    known_backlog: int = 0
    last_report: int = 0
    used_since_report: int = 0
    assured_grant: int = 0


@dataclass
class DbaState:
    """OLT-side bookkeeping for every T-CONT.

    ``smoothed_demand`` is an exponential average of the bytes that entered
    each T-CONT per cycle, inferred from consecutive reports and the burst
    volumes the OLT received in between.
    """

    ema_alpha: float
    cycle_period: float
    be_headroom: float = 0.25
    credit_burst: float = 8.0
    entries: dict[int, TContDbaEntry] = field(default_factory=dict)
    overcommitted_cycles: int = 0

    def __post_init__(self) -> None:
        if not 0 < self.ema_alpha <= 1:
            raise ValueError("ema_alpha must be in (0, 1]")
        if self.cycle_period <= 0:
            raise ValueError("cycle_period must be positive")

    @classmethod
    def for_profiles(cls, profiles: Iterable[TContProfile], **kwargs) -> "DbaState":
        state = cls(**kwargs)
        for p in profiles:
            state.entries[p.tcont_id] = TContDbaEntry()
        return state

    @property
    def smoothed_demand(self) -> dict[int, float]:
        return {k: e.smoothed_demand for k, e in self.entries.items()}

    def record_usage(self, tcont_id: int, used: int) -> None:
        """Charge the bytes a T-CONT actually sent against its credits."""
        e = self.entries[tcont_id]
        from_assured = min(used, e.assured_grant)
        e.assured_credit -= from_assured
        e.be_credit = max(e.be_credit - (used - from_assured), 0.0)
        e.known_backlog = max(e.known_backlog - used, 0)
        e.used_since_report += used


def water_fill(requests: dict[int, int], capacity: int) -> dict[int, int]:
    """Equal-share water-filling of ``capacity`` integer bytes.

    The result equals handing out one byte at a time, round-robin in
    ascending id order, to every id whose request is not yet met.
    """
    if capacity <= 0 or not requests:
        return {k: 0 for k in requests}
    if sum(requests.values()) <= capacity:
        return dict(requests)
    # largest level L with sum(min(q, L)) <= capacity
    lo, hi = 0, max(requests.values())
    while lo < hi:
        mid = (lo + hi + 1) // 2
        if sum(min(q, mid) for q in requests.values()) <= capacity:
            lo = mid
        else:
            hi = mid - 1
    level = lo
    alloc = {k: min(q, level) for k, q in requests.items()}
    spare = capacity - sum(alloc.values())
    for k in sorted(requests):
        if spare == 0:
            break
        if requests[k] > level:
            alloc[k] += 1
            spare -= 1
    return alloc


def dba_allocate(reports: Iterable[OccupancyReport], state: DbaState,
                 cycle_capacity_bytes: int, profiles: Iterable[TContProfile],
                 cycle_start: int = 0) -> GrantMap:
    """Two-phase allocation for the next cycle.

    Phase 1 grants each T-CONT its reported backlog up to its assured credit,
    which accrues at the assured rate whether or not it is used (capped at
    ``credit_burst`` cycles). Phase 2 water-fills the remaining capacity over
    best-effort requests; a T-CONT's best-effort credit accrues at
    ``(smoothed_demand - assured) * (1 + be_headroom)`` per cycle, so surplus
    bandwidth follows the smoothed demand instead of the instantaneous report.
    A T-CONT without a report this cycle contributes zero new demand.
    """
    by_id = {r.tcont_id: r for r in reports}
    profiles = sorted(profiles, key=lambda p: p.tcont_id)
    alpha = state.ema_alpha
    burst = state.credit_burst
    phase1: dict[int, int] = {}
    for prof in profiles:
        e = state.entries.setdefault(prof.tcont_id, TContDbaEntry())
        rep = by_id.get(prof.tcont_id)
        arrived = 0
        if rep is not None:
            arrived = max(rep.reported_bytes - (e.last_report - e.used_since_report), 0)
            e.known_backlog = rep.reported_bytes
            e.last_report = rep.reported_bytes
            e.used_since_report = 0
        e.smoothed_demand = alpha * arrived + (1 - alpha) * e.smoothed_demand
        assured = assured_bytes_per_cycle(prof.assured_bps, state.cycle_period)
        e.assured_credit = min(e.assured_credit + assured, burst * assured)
        be_rate = max(e.smoothed_demand - assured, 0.0) * (1 + state.be_headroom)
        e.be_credit = min(e.be_credit + be_rate, burst * be_rate)
        phase1[prof.tcont_id] = min(e.known_backlog, int(e.assured_credit))

    total1 = sum(phase1.values())
    if total1 > cycle_capacity_bytes:
        state.overcommitted_cycles += 1
        log.warning("assured demand %d B exceeds cycle capacity %d B; scaling down",
                    total1, cycle_capacity_bytes)
        phase1 = {k: g * cycle_capacity_bytes // total1 for k, g in phase1.items()}
        total1 = sum(phase1.values())

    requests = {}
    for prof in profiles:
        e = state.entries[prof.tcont_id]
        requests[prof.tcont_id] = max(
            min(e.known_backlog - phase1[prof.tcont_id], int(e.be_credit)), 0)
    phase2 = water_fill(requests, cycle_capacity_bytes - total1)

    grants = {}
    for prof in profiles:
        tid = prof.tcont_id
        state.entries[tid].assured_grant = phase1[tid]
        grants[tid] = phase1[tid] + phase2[tid]
    return GrantMap(cycle_start, grants)


def serve_grants(grant_map: GrantMap, queues: dict[int, TContQueue],
                 line_rate_bps: float) -> tuple[list[tuple[Packet, int]], dict[int, int]]:
    """Dequeue whole packets against each grant; bursts follow in id order.

    Returns ``(departures, used)`` where each departure carries the instant
    its last bit leaves the ONU. Unused grant is forfeited.
    """
    departures: list[tuple[Packet, int]] = []
    used: dict[int, int] = {}
    start = grant_map.cycle_start
    ns_per_bit = S / line_rate_bps
    offset_bits = 0
    for tid in sorted(grant_map.grants):
        grant = grant_map.grants[tid]
        q = queues[tid]
        fifo = q.fifo
        sent = 0
        while fifo and sent + fifo[0].size <= grant:
            p = fifo.popleft()
            sent += p.size
            offset_bits += p.size * 8
            departures.append((p, start + round(offset_bits * ns_per_bit)))
        q.occupancy_bytes -= sent
        used[tid] = sent
    return departures, used


@dataclass
class PonParams:
    line_rate_bps: float = 9.95328e9
    upstream_capacity_bps: float = 8.64e9
    cycle: float = 125e-6
    ema_tau: float = 30e-3
    be_headroom: float = 0.25
    credit_burst: float = 8.0
    report_interval: int = 4
    fiber_km: float = 10.0
    group_index: float = 1.468
    downstream_buffer_bytes: int = 2_000_000

    @property
    def cycle_ns(self) -> int:
        return to_ns(self.cycle)

    @property
    def cycle_capacity_bytes(self) -> int:
        return int(round(self.upstream_capacity_bps * self.cycle / 8))

    @property
    def ema_alpha(self) -> float:
        return min(1.0, self.cycle / self.ema_tau)

    @property
    def propagation_ns(self) -> int:
        return to_ns(propagation_delay(self.fiber_km, self.group_index))


class CapacityViolation(AssertionError):
    pass


class PonSegment:
    """OLT, ONU and feeder fibre.

    Upstream packets enter a T-CONT at the ONU; once per cycle the OLT serves
    the grant map computed in the previous cycle, polls occupancy every
    ``report_interval`` cycles, and computes the next map. Served packets are
    handed to ``up_out(packet, t_at_olt)`` in time order.
    """

    def __init__(self, engine: Engine, params: PonParams,
                 profiles: list[TContProfile],
                 up_out: Callable[[Packet, int], None],
                 on_drop: Callable[[Packet, str], None],
                 log_grants: bool = False) -> None:
        self.engine = engine
        self.params = params
        self.profiles = sorted(profiles, key=lambda p: p.tcont_id)
        self.queues = {p.tcont_id: TContQueue(p) for p in self.profiles}
        self.state = DbaState.for_profiles(
            self.profiles, ema_alpha=params.ema_alpha, cycle_period=params.cycle,
            be_headroom=params.be_headroom, credit_burst=params.credit_burst)
        self.up_out = up_out
        self.on_drop = on_drop
        self.downstream = FifoLink(params.line_rate_bps, params.propagation_ns,
                                   params.downstream_buffer_bytes, name="olt-downstream")
        self.cycles = 0
        self.max_cycle_load = 0.0
        self.grant_log: list[tuple] | None = [] if log_grants else None
        self._next = GrantMap(0, {p.tcont_id: 0 for p in self.profiles})
        self._stop_ns = 0
        self._running = False

    # upstream ----------------------------------------------------------
    def enqueue(self, tcont_id: int, p: Packet) -> None:
        """Accept ``p`` into a T-CONT at the current engine time."""
        if not upstream_enqueue(self.queues[tcont_id], p):
            self.on_drop(p, "tcont")

    def start(self, stop_ns: int) -> None:
        """Run DBA cycles until ``stop_ns`` and then until the T-CONTs drain."""
        self._stop_ns = stop_ns
        if not self._running:
            self._running = True
            first = -(-self.engine.now // self.params.cycle_ns) * self.params.cycle_ns
            self._next.cycle_start = first
            self.engine.at(first, self._cycle)

    def _cycle(self, _arg=None) -> None:
        now = self.engine.now
        params = self.params
        gm = self._next
        gm.cycle_start = now
        departures, used = serve_grants(gm, self.queues, params.line_rate_bps)
        for tid, nbytes in used.items():
            self.state.record_usage(tid, nbytes)
        prop = params.propagation_ns
        out = self.up_out
        for p, t in departures:
            out(p, t + prop)

        reports = []
        if self.cycles % params.report_interval == 0:
            reports = [OccupancyReport(tid, q.occupancy_bytes, now)
                       for tid, q in self.queues.items()]
        nxt = dba_allocate(reports, self.state, params.cycle_capacity_bytes,
                           self.profiles, cycle_start=now + params.cycle_ns)
        total = nxt.total
        if total > params.cycle_capacity_bytes:
            raise CapacityViolation(
                f"cycle {self.cycles}: grants {total} B > capacity "
                f"{params.cycle_capacity_bytes} B")
        self.max_cycle_load = max(self.max_cycle_load, total / params.cycle_capacity_bytes)
        if self.grant_log is not None:
            reported = {r.tcont_id: r.reported_bytes for r in reports}
            for tid, g in nxt.grants.items():
                e = self.state.entries[tid]
                self.grant_log.append((now, tid, reported.get(tid, -1),
                                       e.smoothed_demand, g, used.get(tid, 0)))
        self._next = nxt
        self.cycles += 1
        if now < self._stop_ns or any(q.fifo for q in self.queues.values()):
            self.engine.at(now + params.cycle_ns, self._cycle)
        else:
            self._running = False

    # downstream --------------------------------------------------------
    def downstream_transmit(self, p: Packet, t: int) -> int:
        """Arrival instant at the ONU, or -1 if the OLT buffer overflowed."""
        arrival = self.downstream.transmit(p.size, t)
        if arrival < 0:
            self.on_drop(p, "olt-downstream")
        return arrival

    def queued_packets(self) -> int:
        return sum(len(q) for q in self.queues.values())
