"""Test-bed topology in back-to-back or PON mode.

Downlink: CU -> impairment -> aggregation switch trunk -> (OLT downstream |
10GbE link) -> access switch port -> host stack -> receiver budget -> reorder
buffer. Uplink: UE -> access switch port -> (T-CONT + TDMA | shared 10GbE
link) -> aggregation switch port -> host stack -> CU sink.

Stages that see a single time-ordered input are evaluated analytically; events
are only scheduled where streams merge or where a random delay may reorder.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum

from .degrade import DegradationEngine, DegradationParams, Switch, SwitchPortMap
from .endpoints import HostStack, ReceiverBudget, ReorderBuffer
from .links import FifoLink
from .pon import PonParams, PonSegment, TContProfile
from .sim import (STREAM_DEGRADE_DOWN, STREAM_DEGRADE_UP, STREAM_HOST_CU,
                  STREAM_HOST_DU, STREAM_HOST_UE, Engine, RngStream)
from .traffic import FlowCounters, FlowId, FlowSink, Packet, ProbeSource


class Mode(Enum):
    B2B = "b2b"
    PON = "pon"


TCONT_OF_FLOW = {FlowId.MOBILE: 1, FlowId.PROBE: 1, FlowId.OVERLOAD: 2}


@dataclass
class NetworkParams:
    trunk_rate_bps: float = 10e9
    trunk_buffer_bytes: int = 2_000_000
    host_latency: float = 200e-6
    host_jitter: float = 20e-6
    playout_deadline: float = 0.5e-3
    reorder_capacity: int = 256
    receiver_budget_bps: float = 160e6
    receiver_depth: int = 64
    assured_bps: float = 150e6
    tcont_queue_bytes: int = 1_000_000
    pon: PonParams = field(default_factory=PonParams)
    degrade_down: DegradationParams | None = None
    degrade_up: DegradationParams | None = None

    def tcont_profiles(self) -> list[TContProfile]:
        return [TContProfile(tid, self.assured_bps, self.tcont_queue_bytes)
                for tid in sorted(set(TCONT_OF_FLOW.values()))]


class Network:
    def __init__(self, engine: Engine, mode: Mode, params: NetworkParams,
                 seed: int, log_grants: bool = False) -> None:
        self.engine = engine
        self.mode = mode
        self.params = params
        self.ledger = {f: FlowCounters(f) for f in FlowId}
        self.mobile_dropped: set[int] = set()
        port_map = SwitchPortMap()
        rate, buf = params.trunk_rate_bps, params.trunk_buffer_bytes

        def port(name: str) -> FifoLink:
            return FifoLink(rate, 0, buf, name=name)

        # downlink
        self.agg_switch = Switch(engine, port_map, port("agg-trunk"),
                                 self._access_down, self.ledger)
        self.access_switch = Switch(engine, port_map, port("access-trunk"),
                                    self._agg_up, self.ledger)
        self.down_ports = {f: port(f"access-{f.name.lower()}") for f in FlowId}
        self.up_ingress = {f: port(f"ue-{f.name.lower()}") for f in FlowId}
        self.up_ports = {f: port(f"agg-{f.name.lower()}") for f in FlowId}
        self.degrade_down = None
        if params.degrade_down is not None:
            self.degrade_down = DegradationEngine(
                engine, params.degrade_down, RngStream(seed, STREAM_DEGRADE_DOWN),
                self.agg_switch.send)
        self.degrade_up = None
        if params.degrade_up is not None:
            self.degrade_up = DegradationEngine(
                engine, params.degrade_up, RngStream(seed, STREAM_DEGRADE_UP),
                self._cu_now)

        self.cu_host = HostStack(params.host_latency, params.host_jitter,
                                 RngStream(seed, STREAM_HOST_CU))
        self.du_host = HostStack(params.host_latency, params.host_jitter,
                                 RngStream(seed, STREAM_HOST_DU))
        self.ue_host = HostStack(params.host_latency, params.host_jitter,
                                 RngStream(seed, STREAM_HOST_UE))
        self.budget = ReceiverBudget(params.receiver_budget_bps, params.receiver_depth)
        self.reorder = ReorderBuffer(params.playout_deadline, params.reorder_capacity,
                                     self.ledger[FlowId.MOBILE])
        self.mobile_sink = FlowSink(engine, self.ledger[FlowId.MOBILE], record=True)
        self.overload_sink = FlowSink(engine, self.ledger[FlowId.OVERLOAD])
        self.overload_down_sink = FlowSink(engine, self.ledger[FlowId.OVERLOAD])
        self.probe: ProbeSource | None = None

        if mode is Mode.PON:
            self.pon: PonSegment | None = PonSegment(
                engine, params.pon, params.tcont_profiles(), self._agg_up,
                self.drop, log_grants=log_grants)
            self.b2b_down = self.b2b_up = None
        else:
            self.pon = None
            self.b2b_down = FifoLink(rate, 0, buf, name="b2b-down")
            self.b2b_up = FifoLink(rate, 0, buf, name="b2b-up")

    # bookkeeping -------------------------------------------------------
    def drop(self, p: Packet, site: str) -> None:
        self.ledger[p.flow].drop(site)
        if p.flow is FlowId.MOBILE:
            self.mobile_dropped.add(p.seq)

    def start_dba(self, stop_ns: int) -> None:
        if self.pon is not None:
            self.pon.start(stop_ns)

    # downlink ----------------------------------------------------------
    def send_down(self, p: Packet) -> None:
        """CU-side injection at ``engine.now``."""
        if self.degrade_down is not None:
            self.degrade_down.degrade(p)
        else:
            self._agg_down(p)

    def _agg_down(self, p: Packet) -> None:
        self.agg_switch.send(p)

    def _access_down(self, p: Packet, t: int) -> None:
        if self.pon is not None:
            t = self.pon.downstream_transmit(p, t)
        else:
            t = self.b2b_down.transmit(p.size, t)
            if t < 0:
                self.drop(p, "b2b-down")
        if t < 0:
            return
        port = self.access_switch.untag(p)
        if port is None:
            self.drop(p, "misrouted")
            return
        flow = p.flow
        t = self.down_ports[port].transmit(p.size, t)
        if t < 0:
            self.drop(p, "access-port")
            return
        if flow is FlowId.MOBILE:
            t = self.du_host.delay(t)
            t = self.budget.offer(p.size, t)
            if t < 0:
                self.drop(p, "receiver")
                return
            p.arrived_sink = t
            self.reorder.receive(p, t)
        elif flow is FlowId.PROBE:
            t = self.ue_host.delay(t)
            if self.probe is not None:
                self.probe.receive(p, t)
        else:
            self.overload_down_sink.receive(p, t)

    # uplink ------------------------------------------------------------
    def send_up(self, p: Packet) -> None:
        """UE-side injection at ``engine.now``."""
        t = self.up_ingress[p.flow].transmit(p.size, self.engine.now)
        if t < 0:
            self.drop(p, "ue-port")
            return
        if self.pon is not None:
            self.engine.at(t, self._tcont_arrive, p)
        else:
            self.engine.at(t, self._b2b_arrive, p)

    def _tcont_arrive(self, p: Packet) -> None:
        self.pon.enqueue(TCONT_OF_FLOW[p.flow], p)

    def _b2b_arrive(self, p: Packet) -> None:
        t = self.b2b_up.transmit(p.size, self.engine.now)
        if t < 0:
            self.drop(p, "b2b-up")
            return
        self._agg_up(p, t)

    def _agg_up(self, p: Packet, t: int) -> None:
        # upstream flows arrive on their own ports, untagged
        flow = p.flow
        t = self.up_ports[flow].transmit(p.size, t)
        if t < 0:
            self.drop(p, "agg-port")
            return
        if flow is FlowId.OVERLOAD:
            self.overload_sink.receive(p, t)
            return
        if self.degrade_up is not None:
            self.engine.at(t, self.degrade_up.degrade, p)
            return
        self._cu(p, t)

    def _cu_now(self, p: Packet) -> None:
        self._cu(p, self.engine.now)

    def _cu(self, p: Packet, t: int) -> None:
        t = self.cu_host.delay(t)
        if p.flow is FlowId.PROBE:
            # echo back towards the UE once the CU has it
            self.engine.at(t, self._echo, p)
        else:
            self.mobile_sink.receive(p, t)

    def _echo(self, p: Packet) -> None:
        self.send_down(p)

    # end of run --------------------------------------------------------
    def in_flight_packets(self) -> list[Packet]:
        pkts = [a for a in self.engine.pending_args() if isinstance(a, Packet)]
        if self.pon is not None:
            for q in self.pon.queues.values():
                pkts.extend(q.fifo)
        return pkts

    def finalize(self, downlink_mobile: bool, drained: bool) -> None:
        """Fill in gap losses and in-flight counts so the ledger balances."""
        for c in self.ledger.values():
            c.in_flight = 0
        flying = self.in_flight_packets()
        for p in flying:
            self.ledger[p.flow].in_flight += 1
        if downlink_mobile:
            buf = self.reorder
            buf.finish(None if drained else self.engine.now)
            mobile = self.ledger[FlowId.MOBILE]
            mobile.in_flight += len(buf)
            excluded = self.mobile_dropped | {p.seq for p in flying
                                              if p.flow is FlowId.MOBILE}
            mobile.gap_loss = buf.gap_losses(excluded)
