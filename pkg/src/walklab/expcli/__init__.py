"""Experiment registry, configuration, deterministic runs and tabular output."""
from .config import ExperimentConfig, build_config, read_config_text
from .experiments import EXPERIMENTS, Experiment
from .records import TABLE_COLUMNS, RunRecord, emit_csv, read_records
from .runner import EXIT_FAIL, EXIT_OK, EXIT_USAGE, execute, run_experiment

__all__ = [
    "ExperimentConfig", "build_config", "read_config_text", "EXPERIMENTS", "Experiment",
    "TABLE_COLUMNS", "RunRecord", "emit_csv", "read_records",
    "EXIT_OK", "EXIT_FAIL", "EXIT_USAGE", "execute", "run_experiment",
]
