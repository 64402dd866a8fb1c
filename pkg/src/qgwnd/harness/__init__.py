"""Configuration, experiment drivers, records and the command line."""

from __future__ import annotations

from .config import KINDS, ConfigError, ExperimentConfig, load_config
from .experiments import (
    converge_eps,
    fit_decay_slope,
    ks_distance,
    run_experiment,
    strichartz_beta,
    strichartz_ratio,
)
from .records import ReportRecord, build_id, read_records

__all__ = [
    "KINDS",
    "ConfigError",
    "ExperimentConfig",
    "load_config",
    "run_experiment",
    "fit_decay_slope",
    "strichartz_beta",
    "strichartz_ratio",
    "ks_distance",
    "converge_eps",
    "ReportRecord",
    "build_id",
    "read_records",
]
