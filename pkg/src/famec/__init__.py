"""Fluid-antenna MEC offloading: channel estimation, power pricing and multi-agent control."""

from .config import ConfigError, ExperimentSpec, ScenarioConfig, emit_config, parse_config

__version__ = "0.1.0"
