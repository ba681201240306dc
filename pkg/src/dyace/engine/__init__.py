from .population import Population, init_population, population_diversity
from .engine import GenerationRecord, GenerationTrace, run_horizon, step, trajectory_metric

__all__ = [
    "GenerationRecord",
    "GenerationTrace",
    "Population",
    "init_population",
    "population_diversity",
    "run_horizon",
    "step",
    "trajectory_metric",
]
