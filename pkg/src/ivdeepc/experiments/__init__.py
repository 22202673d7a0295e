"""Scenario configs, Monte-Carlo runs, result files and the CLI."""
from .config import ScenarioConfig, figure_config, load_config
from .io import emit, load_manifest, rerun_manifest
from .runner import RunRecord, SummaryRow, medians, run_one, run_scenario, summarize, tracking_metric

__all__ = [
    "ScenarioConfig", "figure_config", "load_config", "emit", "load_manifest", "rerun_manifest",
    "RunRecord", "SummaryRow", "medians", "run_one", "run_scenario", "summarize", "tracking_metric",
]
