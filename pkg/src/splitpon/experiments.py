"""Scenario runners for the three experiments and their CSV output."""

from __future__ import annotations

import csv
import io
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

from .config import ScenarioConfig
from .degrade import DegradationParams
from .endpoints import ThroughputSeries, per, t95_convergence, windowed_throughput
from .metrics import AuditResult, RttSummary, conservation_audit, summarize_rtt
from .pon import PonParams
from .sim import STREAM_PROBE, Engine, RngStream, to_ns
from .topology import Mode, Network, NetworkParams
from .traffic import CbrProfile, CbrSource, FlowId, ProbeSource

log = logging.getLogger(__name__)

FIG3_SCHEMA = "fig3.v1"
FIG4_SCHEMA = "fig4.v1"
FIG4_SUMMARY_SCHEMA = "fig4-summary.v1"
TAB1_SCHEMA = "tab1.v1"
GRANTS_SCHEMA = "grants.v1"
NOT_CONVERGED = "not-converged"


class AuditFailure(RuntimeError):
    def __init__(self, what: str, audit: AuditResult) -> None:
        self.audit = audit
        super().__init__(f"{what}: conservation audit failed: " + "; ".join(audit.problems))


def fmt(x) -> str:
    """Deterministic text form for CSV cells."""
    if x is None:
        return ""
    if isinstance(x, float):
        return format(x, ".10g")
    return str(x)


def network_params(cfg: ScenarioConfig, degrade_down: DegradationParams | None = None,
                   degrade_up: DegradationParams | None = None) -> NetworkParams:
    pon = PonParams(
        line_rate_bps=cfg.line_rate, upstream_capacity_bps=cfg.upstream_capacity,
        cycle=cfg.cycle, ema_tau=cfg.ema_tau, be_headroom=cfg.be_headroom,
        credit_burst=cfg.credit_burst, report_interval=cfg.report_interval,
        fiber_km=cfg.fiber, group_index=cfg.group_index,
        downstream_buffer_bytes=cfg.downstream_buffer)
    if degrade_up is None and cfg.degrade_uplink:
        degrade_up = DegradationParams(cfg.mean_latency, cfg.sigma, cfg.latency_floor)
    return NetworkParams(
        trunk_rate_bps=cfg.trunk_rate, trunk_buffer_bytes=cfg.trunk_buffer,
        host_latency=cfg.host_latency, host_jitter=cfg.host_jitter,
        playout_deadline=cfg.deadline, reorder_capacity=cfg.reorder_capacity,
        receiver_budget_bps=cfg.receiver_budget, receiver_depth=cfg.receiver_depth,
        assured_bps=cfg.assured, tcont_queue_bytes=cfg.tcont_queue, pon=pon,
        degrade_down=degrade_down, degrade_up=degrade_up)


def _audit(net: Network, what: str) -> AuditResult:
    audit = conservation_audit(net.ledger)
    if not audit:
        raise AuditFailure(what, audit)
    return audit


# downlink PER ----------------------------------------------------------

@dataclass
class Fig3Cell:
    rate_bps: float
    sigma: float
    per: float
    sent: int
    received: int
    late: int
    gap_loss: int
    dropped: int
    forced_flushes: int
    max_cycle_load: float = 0.0


def run_fig3_cell(cfg: ScenarioConfig, rate_bps: float, sigma: float,
                  packets: int | None = None, mode: Mode = Mode.PON) -> Fig3Cell:
    """Downlink mobile flow through the impairment engine; drained to the end."""
    packets = cfg.fig3_packets if packets is None else packets
    engine = Engine()
    deg = DegradationParams(cfg.mean_latency, sigma, cfg.latency_floor)
    net = Network(engine, mode, network_params(cfg, degrade_down=deg), cfg.seed)
    mobile = CbrSource(engine, FlowId.MOBILE,
                       CbrProfile(rate_bps, cfg.payload, overhead_bytes=cfg.v1_overhead),
                       net.send_down, net.ledger[FlowId.MOBILE], count=packets)
    mobile.start()
    if cfg.fig3_overload > 0:
        end = mobile.profile.emission_time(packets)
        CbrSource(engine, FlowId.OVERLOAD, CbrProfile(cfg.fig3_overload, cfg.overload_packet),
                  net.send_down, net.ledger[FlowId.OVERLOAD], stop_at=end).start()
    engine.run()
    net.finalize(downlink_mobile=True, drained=True)
    _audit(net, f"fig3 rate={rate_bps} sigma={sigma}")
    c = net.ledger[FlowId.MOBILE]
    return Fig3Cell(rate_bps, sigma, per(c), c.sent, c.received, c.late, c.gap_loss,
                    c.dropped, net.reorder.forced_flushes)


def _fig3_job(args):
    cfg, rate, sigma = args
    return run_fig3_cell(cfg, rate, sigma)


def run_fig3(cfg: ScenarioConfig, jobs: int = 1) -> list[Fig3Cell]:
    grid = [(cfg, r, s) for r in cfg.fig3_rates for s in cfg.fig3_sigmas]
    return _map(_fig3_job, grid, jobs)


def fig3_csv(cfg: ScenarioConfig, cells: list[Fig3Cell]) -> str:
    header = ["schema", "config_hash", "seed", "rate_bps", "sigma_s", "per", "sent",
              "received", "late", "gap_loss", "dropped", "forced_flushes"]
    rows = [[FIG3_SCHEMA, cfg.hash(), cfg.seed, c.rate_bps, c.sigma, c.per, c.sent,
             c.received, c.late, c.gap_loss, c.dropped, c.forced_flushes] for c in cells]
    return _csv(header, rows)


# uplink convergence ----------------------------------------------------

@dataclass
class Fig4Run:
    mode: Mode
    rate_bps: float
    series: ThroughputSeries
    t95: float | None
    steady_bps: float
    max_cycle_load: float
    dba_cycles: int
    ledger: dict = field(default_factory=dict)
    grant_log: list | None = None


def run_fig4_run(cfg: ScenarioConfig, mode: Mode, rate_bps: float,
                 log_grants: bool = False) -> Fig4Run:
    """Uplink mobile flow starting against a running overload flow."""
    engine = Engine()
    net = Network(engine, mode, network_params(cfg), cfg.seed, log_grants=log_grants)
    stop = to_ns(cfg.fig4_duration)
    start = to_ns(cfg.fig4_mobile_start)
    if cfg.fig4_overload > 0:
        CbrSource(engine, FlowId.OVERLOAD, CbrProfile(cfg.fig4_overload, cfg.overload_packet),
                  net.send_up, net.ledger[FlowId.OVERLOAD], stop_at=stop).start()
    prof = CbrProfile(rate_bps, cfg.payload, start_at=start, ramp_duration=cfg.fig4_ramp,
                      overhead_bytes=cfg.v1_overhead)
    CbrSource(engine, FlowId.MOBILE, prof, net.send_up, net.ledger[FlowId.MOBILE],
              stop_at=stop).start()
    net.start_dba(stop)
    engine.run()
    net.finalize(downlink_mobile=False, drained=True)
    _audit(net, f"fig4 {mode.value} rate={rate_bps}")
    sink = net.mobile_sink
    series = windowed_throughput(sink.arrival_times, sink.arrival_payloads,
                                 cfg.window, cfg.step, start=start, end=stop)
    t95 = t95_convergence(series, rate_bps, source_start=start, hold=cfg.hold)
    tail = series.times >= stop - to_ns(min(0.5, (stop - start) / 2e9))
    steady = float(series.bps[tail].mean()) if tail.any() else 0.0
    pon = net.pon
    return Fig4Run(mode, rate_bps, series, t95, steady,
                   pon.max_cycle_load if pon else 0.0, pon.cycles if pon else 0,
                   net.ledger, pon.grant_log if pon else None)


def _fig4_job(args):
    cfg, mode, rate = args
    return run_fig4_run(cfg, mode, rate)


def run_fig4(cfg: ScenarioConfig, jobs: int = 1) -> list[Fig4Run]:
    grid = [(cfg, m, r) for m in (Mode.B2B, Mode.PON) for r in cfg.fig4_rates]
    return _map(_fig4_job, grid, jobs)


def fig4_csv(cfg: ScenarioConfig, runs: list[Fig4Run]) -> str:
    header = ["schema", "config_hash", "seed", "mode", "rate_bps", "time_ms",
              "throughput_bps"]
    rows = []
    start = to_ns(cfg.fig4_mobile_start)
    for r in runs:
        for t, s in zip(r.series.times.tolist(), r.series.bps.tolist()):
            rows.append([FIG4_SCHEMA, cfg.hash(), cfg.seed, r.mode.value, r.rate_bps,
                         (t - start) / 1e6, float(s)])
    return _csv(header, rows)


def fig4_summary_csv(cfg: ScenarioConfig, runs: list[Fig4Run]) -> str:
    header = ["schema", "config_hash", "seed", "mode", "rate_bps", "t95_s",
              "steady_bps", "max_cycle_load", "dba_cycles"]
    rows = [[FIG4_SUMMARY_SCHEMA, cfg.hash(), cfg.seed, r.mode.value, r.rate_bps,
             NOT_CONVERGED if r.t95 is None else r.t95, r.steady_bps,
             r.max_cycle_load, r.dba_cycles] for r in runs]
    return _csv(header, rows)


def grants_csv(cfg: ScenarioConfig, run: Fig4Run) -> str:
    header = ["schema", "config_hash", "seed", "cycle_start_ns", "tcont_id",
              "reported_bytes", "smoothed_demand_bytes", "granted_bytes", "used_bytes"]
    rows = [[GRANTS_SCHEMA, cfg.hash(), cfg.seed, *row] for row in run.grant_log or []]
    return _csv(header, rows)


# RTT -------------------------------------------------------------------

@dataclass
class Tab1Row:
    mode: Mode
    summary: RttSummary
    unmatched: int
    max_cycle_load: float = 0.0

    @property
    def warning(self) -> bool:
        s = self.summary
        return s.incomplete > 0.01 * (s.sample_count + s.incomplete)


def run_tab1_mode(cfg: ScenarioConfig, mode: Mode) -> Tab1Row:
    """Echo probes from the UE side to the CU side and back, over a
    background uplink mobile flow."""
    engine = Engine()
    deg = None
    if cfg.tab1_degrade:
        deg = DegradationParams(cfg.mean_latency, cfg.sigma, cfg.latency_floor)
    net = Network(engine, mode, network_params(cfg, degrade_down=deg), cfg.seed)
    warmup = to_ns(0.05)
    period = to_ns(cfg.tab1_probe_period)
    stop = warmup + cfg.tab1_probe_count * period
    CbrSource(engine, FlowId.MOBILE,
              CbrProfile(cfg.tab1_background, cfg.payload, overhead_bytes=cfg.v1_overhead),
              net.send_up, net.ledger[FlowId.MOBILE], stop_at=stop).start()
    probe = ProbeSource(engine, cfg.tab1_probe_period, cfg.tab1_probe_count, net.send_up,
                        net.ledger[FlowId.PROBE], size=cfg.tab1_probe_size, start_at=warmup,
                        send_jitter=cfg.tab1_probe_jitter,
                        stream=RngStream(cfg.seed, STREAM_PROBE))
    net.probe = probe
    probe.start()
    net.start_dba(stop)
    engine.run()
    net.finalize(downlink_mobile=False, drained=True)
    _audit(net, f"tab1 {mode.value}")
    return Tab1Row(mode, summarize_rtt(probe.records.values()), probe.unmatched,
                   net.pon.max_cycle_load if net.pon else 0.0)


def _tab1_job(args):
    cfg, mode = args
    return run_tab1_mode(cfg, mode)


def run_tab1(cfg: ScenarioConfig, jobs: int = 1) -> list[Tab1Row]:
    rows = _map(_tab1_job, [(cfg, Mode.B2B), (cfg, Mode.PON)], jobs)
    for r in rows:
        if r.warning:
            log.warning("%s: %d probes never returned", r.mode.value, r.summary.incomplete)
    return rows


def tab1_csv(cfg: ScenarioConfig, rows: list[Tab1Row]) -> str:
    header = ["schema", "config_hash", "seed", "mode", "min_ms", "avg_ms", "max_ms",
              "std_ms", "samples", "incomplete", "warning"]
    out = [[TAB1_SCHEMA, cfg.hash(), cfg.seed, r.mode.value, r.summary.min,
            r.summary.average, r.summary.max, r.summary.std_deviation,
            r.summary.sample_count, r.summary.incomplete, int(r.warning)] for r in rows]
    return _csv(header, out)


def tab1_table(rows: list[Tab1Row]) -> str:
    lines = [f"{'mode':<6}{'min':>9}{'avg':>9}{'max':>9}{'std':>9}  (ms)"]
    for r in rows:
        s = r.summary
        lines.append(f"{r.mode.value:<6}{s.min:9.3f}{s.average:9.3f}{s.max:9.3f}"
                     f"{s.std_deviation:9.3f}")
    return "\n".join(lines)


# helpers ---------------------------------------------------------------

def _csv(header: list[str], rows: list[list]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([fmt(x) for x in row])
    return buf.getvalue()


def _map(fn, items, jobs: int):
    if jobs <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, items))


def write_text(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text)
