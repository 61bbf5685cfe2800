"""Two-tier agentic trading research framework with a reflective replay memory."""
from .backtest import RunData, RunResult, decision_schedule, load_run_data, replay_metrics, run_backtest
from .config import RunConfig, load_config

__all__ = ["RunConfig", "RunData", "RunResult", "decision_schedule", "load_config", "load_run_data",
           "replay_metrics", "run_backtest"]
__version__ = "0.1.0"
