from .config import ConfigError, ExperimentConfig, experiment_grid, parse_key_values
from .evaluate import EvalReport, improvement_percent, median, summarize, truncate
from .experiment import (
    OUTPUT_ENV, RunResult, evaluate, evaluate_manifest, load_data, output_root, plot_curves,
    run_experiment,
)
from .tables import LAYOUTS, Table, emit_table

__all__ = [
    "ConfigError", "EvalReport", "ExperimentConfig", "LAYOUTS", "OUTPUT_ENV", "RunResult", "Table",
    "emit_table", "evaluate", "evaluate_manifest", "experiment_grid", "improvement_percent",
    "load_data", "median", "output_root", "parse_key_values", "plot_curves", "run_experiment",
    "summarize", "truncate",
]
