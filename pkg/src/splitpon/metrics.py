"""Run-level statistics: RTT summaries and the per-flow conservation audit."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable

from .traffic import FlowCounters, FlowId, ProbeRecord


@dataclass(frozen=True)
class RttSummary:
    """RTT statistics in milliseconds over completed probes."""

    min: float
    average: float
    max: float
    std_deviation: float
    sample_count: int
    incomplete: int = 0


def summarize_rtt(records: Iterable[ProbeRecord]) -> RttSummary:
    """Min/avg/max and sample (n-1) standard deviation of completed probes."""
    records = list(records)
    rtts = sorted(r.rtt_ns / 1e6 for r in records if r.rtt_ns is not None)
    n = len(rtts)
    if n < 2:
        raise ValueError(f"need at least 2 completed probes, got {n}")
    mean = math.fsum(rtts) / n
    var = math.fsum((x - mean) ** 2 for x in rtts) / (n - 1)
    return RttSummary(min=rtts[0], average=mean, max=rtts[-1],
                      std_deviation=math.sqrt(var), sample_count=n,
                      incomplete=len(records) - n)


@dataclass
class AuditResult:
    passed: bool
    rows: dict[FlowId, dict[str, int]] = field(default_factory=dict)
    problems: list[str] = field(default_factory=list)

    def __bool__(self) -> bool:
        return self.passed


def conservation_audit(ledger: dict[FlowId, FlowCounters]) -> AuditResult:
    """Check sent = received + late + gap_loss + drops + in_flight per flow."""
    result = AuditResult(passed=True)
    for flow, c in ledger.items():
        accounted = c.received + c.late + c.gap_loss + c.dropped + c.in_flight
        row = {"sent": c.sent, "received": c.received, "late": c.late,
               "gap_loss": c.gap_loss, "dropped": c.dropped,
               "in_flight": c.in_flight}
        result.rows[flow] = row
        bad = [k for k, v in row.items() if v < 0]
        if accounted != c.sent or bad:
            result.passed = False
            result.problems.append(
                f"{FlowId(flow).name}: sent {c.sent} != accounted {accounted} {row}")
    return result


@dataclass
class RunMetrics:
    ledger: dict[FlowId, FlowCounters]
    audit: AuditResult
    per: float | None = None
    rtt: RttSummary | None = None
    max_cycle_load: float = 0.0
    dba_cycles: int = 0
    extra: dict[str, float] = field(default_factory=dict)
