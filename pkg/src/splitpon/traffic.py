"""Packet sources and sinks: CBR flows, the RTT echo probe, per-flow accounting."""

from __future__ import annotations

import math
from fractions import Fraction
from functools import lru_cache
from dataclasses import dataclass, field
from enum import IntEnum
from typing import Callable

from .sim import S, Engine, RngStream, to_ns


class FlowId(IntEnum):
    MOBILE = 0
    OVERLOAD = 1
    PROBE = 2


class Packet:
    __slots__ = ("flow", "seq", "size", "payload", "created_at",
                 "departed_source", "arrived_sink", "vlan_tag")

    def __init__(self, flow: FlowId, seq: int, size: int, payload: int,
                 created_at: int) -> None:
        if size <= 0:
            raise ValueError("packet size must be positive")
        self.flow = flow
        self.seq = seq
        self.size = size
        self.payload = payload
        self.created_at = created_at
        self.departed_source = created_at
        self.arrived_sink = -1
        self.vlan_tag = 0

    def __repr__(self) -> str:
        return f"Packet({self.flow.name}, seq={self.seq}, size={self.size})"


@dataclass
class FlowCounters:
    """Exact per-flow ledger. ``drops`` is keyed by the site that dropped."""

    flow: FlowId
    sent: int = 0
    received: int = 0
    late: int = 0
    gap_loss: int = 0
    in_flight: int = 0
    received_bytes: int = 0
    drops: dict[str, int] = field(default_factory=dict)

    def drop(self, site: str) -> None:
        self.drops[site] = self.drops.get(site, 0) + 1

    @property
    def dropped(self) -> int:
        return sum(self.drops.values())


@lru_cache(maxsize=64)
def _interval_ns(rate_bps: float, size: int) -> int:
    return math.floor(Fraction(size * 8 * S) / Fraction(rate_bps))


@dataclass(frozen=True)
class CbrProfile:
    rate_bps: float
    packet_size_bytes: int
    start_at: int = 0
    ramp_duration: float = 0.0
    overhead_bytes: int = 0

    def __post_init__(self) -> None:
        if self.rate_bps <= 0:
            raise ValueError("rate_bps must be positive")
        if self.packet_size_bytes <= 0:
            raise ValueError("packet_size_bytes must be positive")
        if self.ramp_duration < 0 or self.overhead_bytes < 0:
            raise ValueError("ramp_duration and overhead_bytes must be >= 0")

    @property
    def interval_ns(self) -> int:
        """Steady-state inter-departure time, floored to whole nanoseconds."""
        return _interval_ns(self.rate_bps, self.packet_size_bytes)

    def emission_time(self, k: int) -> int:
        """Departure instant of packet ``k`` (ns).

        The rate grows linearly from zero over ``ramp_duration``; packet ``k``
        leaves when the cumulative offered volume reaches ``k`` packets.
        """
        delta = _interval_ns(self.rate_bps, self.packet_size_bytes)
        if self.ramp_duration == 0:
            return self.start_at + k * delta
        # packets offered during the ramp: R*T/2 bits
        k_ramp = math.ceil(self.rate_bps * self.ramp_duration / 2
                           / (self.packet_size_bytes * 8))
        if k < k_ramp:
            bits = k * self.packet_size_bytes * 8
            t = math.sqrt(2 * self.ramp_duration * bits / self.rate_bps)
            return self.start_at + to_ns(t)
        bits_at_k0 = k_ramp * self.packet_size_bytes * 8
        t0 = self.ramp_duration + (bits_at_k0 - self.rate_bps * self.ramp_duration / 2) \
            / self.rate_bps
        return self.start_at + to_ns(t0) + (k - k_ramp) * delta


class CbrSource:
    """Constant-bit-rate emitter (iperf-like UDP).

    Each packet is handed to ``out`` at its departure instant. The wire size
    of a packet is payload plus ``profile.overhead_bytes``.
    """

    def __init__(self, engine: Engine, flow: FlowId, profile: CbrProfile,
                 out: Callable[[Packet], None], counters: FlowCounters,
                 count: int | None = None, stop_at: int | None = None) -> None:
        self.engine = engine
        self.flow = flow
        self.profile = profile
        self.out = out
        self.counters = counters
        self.count = count
        self.stop_at = stop_at
        self.k = 0
        self._size = profile.packet_size_bytes + profile.overhead_bytes
        self._payload = profile.packet_size_bytes
        self._delta = profile.interval_ns
        # after the ramp, departures are an arithmetic sequence from (k0, t0)
        self._k0 = 0
        self._t0 = profile.start_at
        if profile.ramp_duration > 0:
            self._k0 = math.ceil(profile.rate_bps * profile.ramp_duration / 2
                                 / (profile.packet_size_bytes * 8))
            self._t0 = profile.emission_time(self._k0)
        self._limit = count if count is not None else -1

    def start(self) -> None:
        self._schedule_next()

    def _schedule_next(self) -> None:
        k = self.k
        if k == self._limit:
            return
        if k >= self._k0:
            t = self._t0 + (k - self._k0) * self._delta
        else:
            t = self.profile.emission_time(k)
        if self.stop_at is not None and t >= self.stop_at:
            return
        self.engine.at(t, self._emit)

    def _emit(self, _arg=None) -> None:
        now = self.engine.now
        p = Packet(self.flow, self.k, self._size, self._payload, now)
        self.k += 1
        self.counters.sent += 1
        self._schedule_next()
        self.out(p)


@dataclass
class ProbeRecord:
    probe_seq: int
    sent_at: int
    echoed_at: int | None = None

    @property
    def rtt_ns(self) -> int | None:
        if self.echoed_at is None:
            return None
        return self.echoed_at - self.sent_at


class ProbeSource:
    """Periodic echo probes (ping-like), matched on return by ``receive``.

    Probe ``k`` nominally leaves at ``start_at + k*period``; with
    ``send_jitter`` each send is delayed by an independent uniform amount in
    ``[0, send_jitter)``, as a host timer would, so probes are not phase
    locked to any periodic process in the network.
    """

    def __init__(self, engine: Engine, period: float, count: int,
                 out: Callable[[Packet], None], counters: FlowCounters,
                 size: int = 64, start_at: int = 0, send_jitter: float = 0.0,
                 stream: RngStream | None = None) -> None:
        if period <= 0:
            raise ValueError("probe period must be positive")
        if not 0 <= send_jitter < period:
            raise ValueError("send_jitter must be in [0, period)")
        if send_jitter > 0 and stream is None:
            raise ValueError("send_jitter needs a random stream")
        self.engine = engine
        self.jitter_ns = send_jitter * S
        self.stream = stream
        self.period_ns = int(round(period * S))
        self.count = count
        self.size = size
        self.start_at = start_at
        self.out = out
        self.counters = counters
        self.records: dict[int, ProbeRecord] = {}
        self.unmatched = 0
        self._k = 0

    def start(self) -> None:
        if self.count > 0:
            self._schedule(0)

    def _schedule(self, k: int) -> None:
        t = self.start_at + k * self.period_ns
        if self.jitter_ns:
            t += int(self.stream.uniform() * self.jitter_ns)
        self.engine.at(t, self._emit)

    def _emit(self, _arg=None) -> None:
        now = self.engine.now
        p = Packet(FlowId.PROBE, self._k, self.size, self.size, now)
        self.records[self._k] = ProbeRecord(self._k, now)
        self.counters.sent += 1
        self._k += 1
        if self._k < self.count:
            self._schedule(self._k)
        self.out(p)

    def receive(self, p: Packet, now: int | None = None) -> None:
        rec = self.records.get(p.seq)
        if rec is None or rec.echoed_at is not None:
            self.unmatched += 1
            return
        if now is None:
            now = self.engine.now
        rec.echoed_at = now
        p.arrived_sink = now
        self.counters.received += 1
        self.counters.received_bytes += p.payload


class FlowSink:
    """Terminal endpoint: stamps arrival and updates the flow's counters.

    With ``record=True`` the arrival instants and payload sizes are kept for
    throughput series.
    """

    def __init__(self, engine: Engine, counters: FlowCounters,
                 record: bool = False) -> None:
        self.engine = engine
        self.counters = counters
        self.record = record
        self.arrival_times: list[int] = []
        self.arrival_payloads: list[int] = []

    def receive(self, p: Packet, now: int | None = None) -> None:
        if now is None:
            now = self.engine.now
        p.arrived_sink = now
        c = self.counters
        c.received += 1
        c.received_bytes += p.payload
        if self.record:
            self.arrival_times.append(now)
            self.arrival_payloads.append(p.payload)


def sink_record(sink: FlowSink, packet: Packet) -> FlowCounters:
    sink.receive(packet)
    return sink.counters
