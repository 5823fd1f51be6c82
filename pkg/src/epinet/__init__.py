"""Round-based multi-agent simulation of research on a synthetic significance landscape."""
from .landscape import Approach, Landscape, PerceptionParams, generate_landscape
from .runtime import ExperimentConfig, LandscapeConfig, RunLog, replay, run_ablation_independent, run_experiment

__version__ = "0.1.0"

__all__ = [
    "Approach",
    "Landscape",
    "PerceptionParams",
    "generate_landscape",
    "ExperimentConfig",
    "LandscapeConfig",
    "RunLog",
    "replay",
    "run_ablation_independent",
    "run_experiment",
]
