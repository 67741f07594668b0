"""Discrete-event simulator of a PDCP-RLC split interface carried over an
XGS-PON access segment and an emulated aggregation network."""

from .config import ScenarioConfig, parse_config
from .sim import Engine, RngStream

__all__ = ["Engine", "RngStream", "ScenarioConfig", "parse_config"]
__version__ = "0.1.0"
