"""Experiment registry, configuration and runner."""
from .config import ConfigError, ExperimentConfig, from_dict, load_config
from .registry import REGISTRY, Experiment, Outcome, Row
from .runner import CSV_FIELDS, ResultRecord, get_experiment, run, validate, write_outputs

__all__ = [
    "CSV_FIELDS", "ConfigError", "Experiment", "ExperimentConfig", "Outcome", "REGISTRY",
    "ResultRecord", "Row", "from_dict", "get_experiment", "load_config", "run", "validate",
    "write_outputs",
]
