"""Multi-view fusion models trained with a small numpy autodiff engine, and a
benchmark of their robustness to views that are missing at prediction time."""

from .data import MultiViewDataset, SyntheticConfig, generate_synthetic, load_csv
from .fusion import METHODS, TECHNIQUES, FusionModel, Task, forward
from .harness import ExperimentConfig, run_experiment
from .metrics import average_accuracy, prediction_error, prs, r2_score
from .missing import MissingScenario, scenario_grid

__version__ = "0.1.0"

__all__ = [
    "METHODS",
    "TECHNIQUES",
    "ExperimentConfig",
    "FusionModel",
    "MissingScenario",
    "MultiViewDataset",
    "SyntheticConfig",
    "Task",
    "average_accuracy",
    "forward",
    "generate_synthetic",
    "load_csv",
    "prediction_error",
    "prs",
    "r2_score",
    "run_experiment",
    "scenario_grid",
]
