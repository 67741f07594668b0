"""Scenario configuration: a line-oriented ``key = value`` format with units.

Every dimensional value must carry a unit suffix (``150Mbps``, ``0.66ms``,
``10km``, ``1MB``). Lists are comma separated and share the key's unit kind.
Parsing collects every problem before failing.
"""

from __future__ import annotations

import hashlib
import re
from dataclasses import dataclass, fields, replace
from fractions import Fraction
from pathlib import Path

from .sim import ConfigurationError

RATE_UNITS = {"bps": 1.0, "kbps": 1e3, "mbps": 1e6, "gbps": 1e9}
TIME_UNITS = {"ns": 1e-9, "us": 1e-6, "ms": 1e-3, "s": 1.0}
SIZE_UNITS = {"b": 1, "kb": 1_000, "mb": 1_000_000}
LENGTH_UNITS = {"m": 1e-3, "km": 1.0}

UNIT_TABLES = {"rate": RATE_UNITS, "time": TIME_UNITS, "size": SIZE_UNITS,
               "length": LENGTH_UNITS}

_NUMBER = re.compile(r"^\s*([-+]?(?:\d+\.?\d*|\.\d+)(?:[eE][-+]?\d+)?)\s*([A-Za-z/]*)\s*$")


@dataclass(frozen=True)
class ScenarioConfig:
    """All knobs of the simulated test bed. Units: bits/s, seconds, bytes, km."""

    seed: int = 1
    payload: int = 1200
    v1_overhead: int = 108
    overload_packet: int = 1500
    mean_latency: float = 2e-3
    sigma: float = 0.0
    latency_floor: float = 0.0
    degrade_uplink: bool = False
    line_rate: float = 9.95328e9
    upstream_capacity: float = 8.64e9
    cycle: float = 125e-6
    report_interval: int = 4
    ema_tau: float = 30e-3
    assured: float = 150e6
    be_headroom: float = 0.25
    credit_burst: float = 8.0
    tcont_queue: int = 1_000_000
    downstream_buffer: int = 2_000_000
    fiber: float = 10.0
    group_index: float = 1.468
    trunk_rate: float = 10e9
    trunk_buffer: int = 2_000_000
    host_latency: float = 200e-6
    host_jitter: float = 20e-6
    deadline: float = 0.5e-3
    reorder_capacity: int = 256
    receiver_budget: float = 160e6
    receiver_depth: int = 64
    window: float = 10e-3
    step: float = 1e-3
    hold: float = 50e-3
    fig3_rates: tuple[float, ...] = (20e6, 40e6, 60e6, 80e6, 100e6, 120e6, 140e6, 150e6)
    fig3_sigmas: tuple[float, ...] = (0.0, 0.1e-3, 0.66e-3)
    fig3_packets: int = 1_000_000
    fig3_overload: float = 0.0
    fig4_rates: tuple[float, ...] = (100e6, 150e6)
    fig4_overload: float = 8.5e9
    fig4_duration: float = 2.0
    fig4_mobile_start: float = 0.5
    fig4_ramp: float = 60e-3
    tab1_background: float = 100e6
    tab1_probe_period: float = 10e-3
    tab1_probe_count: int = 1000
    tab1_probe_size: int = 64
    tab1_probe_jitter: float = 1e-3
    tab1_degrade: bool = False

    def with_overrides(self, **kw) -> "ScenarioConfig":
        cfg = replace(self, **kw)
        problems = validate(cfg)
        if problems:
            raise ConfigError([(0, p) for p in problems])
        return cfg

    def canonical(self) -> str:
        lines = []
        for f in fields(self):
            v = getattr(self, f.name)
            if isinstance(v, tuple):
                text = ",".join(repr(float(x)) for x in v)
            elif isinstance(v, bool):
                text = "on" if v else "off"
            else:
                text = repr(v)
            lines.append(f"{f.name}={text}")
        return "\n".join(lines) + "\n"

    def hash(self) -> str:
        return hashlib.sha256(self.canonical().encode()).hexdigest()[:16]


# key -> value kind; "rates"/"times" are comma lists
KEY_KINDS = {
    "seed": "int", "payload": "size", "v1_overhead": "size",
    "overload_packet": "size", "mean_latency": "time", "sigma": "time",
    "latency_floor": "time", "degrade_uplink": "bool", "line_rate": "rate",
    "upstream_capacity": "rate", "cycle": "time", "report_interval": "int",
    "ema_tau": "time", "assured": "rate", "be_headroom": "float",
    "credit_burst": "float", "tcont_queue": "size", "downstream_buffer": "size",
    "fiber": "length", "group_index": "float", "trunk_rate": "rate",
    "trunk_buffer": "size", "host_latency": "time", "host_jitter": "time",
    "deadline": "time", "reorder_capacity": "int", "receiver_budget": "rate",
    "receiver_depth": "int", "window": "time", "step": "time", "hold": "time",
    "fig3_rates": "rates", "fig3_sigmas": "times", "fig3_packets": "int",
    "fig3_overload": "rate", "fig4_rates": "rates", "fig4_overload": "rate",
    "fig4_duration": "time", "fig4_mobile_start": "time", "fig4_ramp": "time",
    "tab1_background": "rate", "tab1_probe_period": "time",
    "tab1_probe_count": "int", "tab1_probe_size": "size",
    "tab1_probe_jitter": "time", "tab1_degrade": "bool",
}
assert set(KEY_KINDS) == {f.name for f in fields(ScenarioConfig)}


class ConfigError(ConfigurationError):
    """Carries every diagnostic as ``(line, message)`` pairs."""

    def __init__(self, diagnostics: list[tuple[int, str]]) -> None:
        self.diagnostics = diagnostics
        super().__init__("\n".join(
            f"line {n}: {m}" if n else m for n, m in diagnostics))


def parse_quantity(text: str, kind: str) -> float:
    """Parse one value of ``kind`` (rate, time, size, length) into base units."""
    m = _NUMBER.match(text)
    if not m:
        raise ValueError(f"cannot parse {text!r} as a {kind}")
    number, unit = m.groups()
    if not unit:
        raise ValueError(f"{text.strip()!r} is missing a {kind} unit")
    table = UNIT_TABLES[kind]
    key = unit.lower().replace("/s", "ps")
    if key not in table:
        raise ValueError(f"unknown {kind} unit {unit!r} (expected one of "
                         f"{', '.join(sorted(table))})")
    # exact decimal arithmetic so that 200us == 200e-6 bit for bit
    value = Fraction(number) * Fraction(str(table[key]))
    if kind == "size":
        if value.denominator != 1:
            raise ValueError(f"{text.strip()!r} is not a whole number of bytes")
        return int(value)
    return float(value)


def _parse_value(text: str, kind: str):
    text = text.strip()
    if kind == "int":
        if not re.fullmatch(r"[-+]?\d+", text):
            raise ValueError(f"{text!r} is not an integer")
        return int(text)
    if kind == "float":
        try:
            return float(text)
        except ValueError:
            raise ValueError(f"{text!r} is not a number") from None
    if kind == "bool":
        low = text.lower()
        if low in ("on", "true", "yes", "1"):
            return True
        if low in ("off", "false", "no", "0"):
            return False
        raise ValueError(f"{text!r} is not on/off")
    if kind in ("rates", "times"):
        items = [t for t in text.split(",")]
        if any(not t.strip() for t in items):
            raise ValueError("empty list element")
        return tuple(parse_quantity(t, kind[:-1]) for t in items)
    return parse_quantity(text, kind)


def validate(cfg: ScenarioConfig) -> list[str]:
    problems = []

    def need(cond: bool, msg: str) -> None:
        if not cond:
            problems.append(msg)

    need(0 <= cfg.seed < 2**64, "seed must be a 64-bit unsigned integer")
    for name in ("payload", "overload_packet", "tab1_probe_size", "tcont_queue",
                 "downstream_buffer", "trunk_buffer"):
        need(getattr(cfg, name) > 0, f"{name} must be > 0")
    need(cfg.v1_overhead >= 0, "v1_overhead must be >= 0")
    for name in ("line_rate", "upstream_capacity", "trunk_rate", "receiver_budget",
                 "tab1_background", "cycle", "ema_tau", "window", "step",
                 "tab1_probe_period", "deadline", "fig4_duration", "group_index"):
        need(getattr(cfg, name) > 0, f"{name} must be > 0")
    for name in ("mean_latency", "sigma", "latency_floor", "host_latency",
                 "host_jitter", "hold", "fig4_mobile_start", "fig4_ramp", "fiber",
                 "be_headroom", "assured", "fig3_overload", "fig4_overload"):
        need(getattr(cfg, name) >= 0, f"{name} must be >= 0")
    for name in ("report_interval", "reorder_capacity", "receiver_depth",
                 "fig3_packets", "tab1_probe_count"):
        need(getattr(cfg, name) >= 1, f"{name} must be >= 1")
    need(0 <= cfg.tab1_probe_jitter < cfg.tab1_probe_period,
         "tab1_probe_jitter must be in [0, tab1_probe_period)")
    need(cfg.credit_burst >= 1, "credit_burst must be >= 1")
    need(cfg.upstream_capacity <= cfg.line_rate,
         "upstream_capacity must not exceed line_rate")
    need(2 * cfg.assured <= cfg.upstream_capacity,
         "sum of assured rates over both T-CONTs exceeds upstream_capacity")
    need(cfg.ema_tau >= cfg.cycle, "ema_tau must be >= cycle")
    need(bool(cfg.fig3_rates) and all(r > 0 for r in cfg.fig3_rates),
         "fig3_rates must be nonempty and > 0")
    need(all(s >= 0 for s in cfg.fig3_sigmas), "fig3_sigmas must be >= 0")
    need(bool(cfg.fig4_rates) and all(r > 0 for r in cfg.fig4_rates),
         "fig4_rates must be nonempty and > 0")
    settle = cfg.fig4_duration - cfg.fig4_mobile_start
    need(settle >= 10 * max(cfg.ema_tau, cfg.window, cfg.fig4_ramp),
         "fig4 measurement span must be >= 10x every smoothing constant")
    return problems


def _line_for(msg: str, seen: dict[str, int]) -> int:
    """Line of the key mentioned first in ``msg`` (0 when it was defaulted)."""
    hits = [(m.start(), seen[k]) for k in seen
            if (m := re.search(rf"\b{k}\b", msg))]
    return min(hits)[1] if hits else 0


def parse_config_text(text: str) -> ScenarioConfig:
    values = {}
    diags: list[tuple[int, str]] = []
    seen: dict[str, int] = {}
    for n, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            diags.append((n, f"expected 'key = value', got {raw.strip()!r}"))
            continue
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in KEY_KINDS:
            diags.append((n, f"unknown key {key!r}"))
            continue
        if key in seen:
            diags.append((n, f"duplicate key {key!r} (first set on line {seen[key]})"))
            continue
        seen[key] = n
        try:
            values[key] = _parse_value(value, KEY_KINDS[key])
        except ValueError as exc:
            diags.append((n, f"{key}: {exc}"))
    # invariants are checked even when some lines failed to parse, so that a
    # single pass reports everything
    cfg = ScenarioConfig(**values)
    for msg in validate(cfg):
        diags.append((_line_for(msg, seen), msg))
    if diags:
        raise ConfigError(sorted(diags, key=lambda d: d[0]))
    return cfg


def parse_config(path: str | Path) -> ScenarioConfig:
    return parse_config_text(Path(path).read_text())


def parse_override(item: str) -> tuple[str, object]:
    """Parse a command-line ``key=value`` override."""
    if "=" not in item:
        raise ConfigError([(0, f"override {item!r} is not key=value")])
    key, value = (s.strip() for s in item.split("=", 1))
    if key not in KEY_KINDS:
        raise ConfigError([(0, f"unknown key {key!r}")])
    try:
        return key, _parse_value(value, KEY_KINDS[key])
    except ValueError as exc:
        raise ConfigError([(0, f"{key}: {exc}")]) from None
