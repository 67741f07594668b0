"""Latency/jitter impairment on the V1 path and the VLAN mux/demux switch."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

from .links import FifoLink
from .sim import Engine, RngStream, normal_sample, to_ns
from .traffic import FlowCounters, FlowId, Packet


@dataclass(frozen=True)
class DegradationParams:
    mean_latency: float = 2e-3
    jitter_sigma: float = 0.0
    min_latency_floor: float = 0.0

    def __post_init__(self) -> None:
        for name in ("mean_latency", "jitter_sigma", "min_latency_floor"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")


def sample_delay_ns(params: DegradationParams, stream: RngStream) -> int:
    d = normal_sample(stream, params.mean_latency, params.jitter_sigma)
    if d < params.min_latency_floor:
        d = params.min_latency_floor
    return to_ns(d)


class DegradationEngine:
    """Delays every packet independently; packets may overtake each other.

    Output is not re-serialized, so a packet drawn a short delay can leave
    before one that entered earlier.
    """

    def __init__(self, engine: Engine, params: DegradationParams,
                 stream: RngStream, out: Callable[[Packet], None]) -> None:
        self.engine = engine
        self.params = params
        self.stream = stream
        self.out = out
        self.applied_ns = 0
        self.count = 0

    def degrade(self, p: Packet) -> int:
        """Schedule delivery of ``p`` to ``out``; returns the delivery instant."""
        d = sample_delay_ns(self.params, self.stream)
        self.applied_ns += d
        self.count += 1
        t = self.engine.now + d
        self.engine.at(t, self.out, p)
        return t


@dataclass
class SwitchPortMap:
    tags: dict[FlowId, int] = field(default_factory=lambda: {
        FlowId.MOBILE: 100, FlowId.OVERLOAD: 200, FlowId.PROBE: 100})

    def __post_init__(self) -> None:
        # probes share the mobile VLAN; every other flow needs its own tag
        seen: dict[int, FlowId] = {}
        for flow, tag in self.tags.items():
            if flow is FlowId.PROBE:
                continue
            if tag in seen:
                raise ValueError(f"flows {seen[tag].name} and {flow.name} share tag {tag}")
            seen[tag] = flow

    def port_for(self, tag: int) -> FlowId | None:
        for flow, t in self.tags.items():
            if t == tag and flow is not FlowId.PROBE:
                return flow
        return None


def mux(p: Packet, port_map: SwitchPortMap) -> Packet:
    p.vlan_tag = port_map.tags[p.flow]
    return p


def demux(p: Packet, port_map: SwitchPortMap) -> FlowId | None:
    """Clear the tag and return the egress port (``None`` when unknown)."""
    port = port_map.port_for(p.vlan_tag)
    p.vlan_tag = 0
    return port


class Switch:
    """Aggregation switch: tags flows onto a shared 10GbE trunk.

    ``send(p)`` must be called in time order (from an event at ``engine.now``);
    the trunk is an analytic FIFO and ``trunk_out(p, t)`` receives the far-end
    arrival instant.
    """

    def __init__(self, engine: Engine, port_map: SwitchPortMap,
                 trunk: FifoLink, trunk_out: Callable[[Packet, int], None],
                 ledger: dict[FlowId, FlowCounters]) -> None:
        self.engine = engine
        self.port_map = port_map
        self.trunk = trunk
        self.trunk_out = trunk_out
        self.ledger = ledger
        self.misrouted = 0

    def send(self, p: Packet) -> None:
        mux(p, self.port_map)
        t = self.trunk.transmit(p.size, self.engine.now)
        if t < 0:
            self.ledger[p.flow].drop("trunk")
            return
        self.trunk_out(p, t)

    def untag(self, p: Packet) -> FlowId | None:
        port = demux(p, self.port_map)
        if port is None:
            self.misrouted += 1
        return port
