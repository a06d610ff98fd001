"""Experiment runner, analytic calculator and history oracles."""
from .calculator import analytic_ccp_d2pc, analytic_commit_latency, path_model
from .config import ExperimentConfig, load_config
from .metrics import MetricsRecord, SummaryReport
from .oracles import check_history, decisions, vote_oracle
from .runner import run_experiment

__all__ = ["analytic_ccp_d2pc", "analytic_commit_latency", "path_model", "ExperimentConfig",
           "load_config", "MetricsRecord", "SummaryReport", "check_history", "decisions",
           "vote_oracle", "run_experiment"]
