"""Experiment front end: configs, runs, sweeps and reports."""

from .cli import main
from .config import ConfigError, ExperimentConfig, load, resolve
from .reports import table_report
from .runner import ratio_sweep, run_experiment

__all__ = ["main", "ConfigError", "ExperimentConfig", "load", "resolve", "table_report",
           "ratio_sweep", "run_experiment"]
