"""Experiment harness: CSV ingestion, the split/CV/sweep protocol and the CLI."""

from .data import DataError, load_csv, write_csv
from .protocol import (
    ConfigError,
    ExperimentConfig,
    ResultsTable,
    cross_validate,
    export_spectrum,
    format_table,
    format_table_csv,
    make_folds,
    run_experiment,
    split_and_label,
)

__all__ = [
    "ConfigError",
    "DataError",
    "ExperimentConfig",
    "ResultsTable",
    "cross_validate",
    "export_spectrum",
    "format_table",
    "format_table_csv",
    "load_csv",
    "make_folds",
    "run_experiment",
    "split_and_label",
    "write_csv",
]
