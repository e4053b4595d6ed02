"""Sidelink (NR-V2X Mode 2) simulator for split-rendering AR glasses."""

from .config import SimConfig, load_config, parse_config
from .engine import run, run_once
from .metrics import MetricsReport

__all__ = ["SimConfig", "load_config", "parse_config", "run", "run_once", "MetricsReport"]
__version__ = "0.1.0"
