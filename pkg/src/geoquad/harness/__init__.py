"""Experiment configs, runners and report emission."""

from .config import Axis, ExperimentConfig, from_mapping, load_config
from .experiments import (
    run_experiment,
    run_fig2,
    run_fig3,
    run_metric,
    run_miscalibration,
    run_optimal_time,
    run_population_trace,
    run_pulse,
    run_quasistatic,
    run_transfer_grid,
)
from .report import ExperimentReport, emit, load_json
