"""Experiment orchestration: evaluation, experiment grids, and reporting."""

from .evaluation import (
    EvalResult,
    action_matching,
    reference_returns,
    run_rollout_eval,
    scale_return,
)
from .experiments import (
    ExperimentConfig,
    report,
    run_ablation,
    run_matrix,
    run_noise_sweep,
)

__all__ = [
    "EvalResult", "ExperimentConfig", "action_matching", "reference_returns",
    "report", "run_ablation", "run_matrix", "run_noise_sweep",
    "run_rollout_eval", "scale_return",
]
