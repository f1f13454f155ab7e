"""Scenario configuration, Monte-Carlo trials and metric output."""

from .config import (ClusterModel, Cooperation, ScenarioConfig, UETrajectory, config_from_dict,
                     load_scenario, nominal_config)
from .runner import MonteCarloResult, read_metrics_csv, run_monte_carlo, summarize, write_metrics
from .trial import CSV_FIELDS, MetricsRow, TrialError, run_trial

__all__ = [
    "CSV_FIELDS", "ClusterModel", "Cooperation", "MetricsRow", "MonteCarloResult",
    "ScenarioConfig", "TrialError", "UETrajectory", "config_from_dict", "load_scenario",
    "nominal_config", "read_metrics_csv", "run_monte_carlo", "run_trial", "summarize",
    "write_metrics",
]
