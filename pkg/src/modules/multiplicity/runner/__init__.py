"""
Experiment orchestration: configuration, per-cell evaluation DAG, results archive and plot data.
"""
from .archive import ResultsArchive, aggregate_records
from .experiment import ExperimentConfig, run_experiment
from .figures import FIGURES, emit_plot_data

__all__ = [
    "ExperimentConfig",
    "run_experiment",
    "ResultsArchive",
    "aggregate_records",
    "FIGURES",
    "emit_plot_data",
]
