"""Ensemble IRM games: benchmarks, best-response training, baselines and equilibrium checks."""

from ._eirm import (
    Benchmark,
    ConfigError,
    EirmError,
    EnvironmentDataset,
    TerminationMonitor,
    bounded_linear_ne,
    make_benchmark,
    preset_config,
    run_experiment,
    scalar_game_grid,
    sem_nash_check,
    synth_shapes,
)

__all__ = [
    "Benchmark",
    "ConfigError",
    "EirmError",
    "EnvironmentDataset",
    "TerminationMonitor",
    "bounded_linear_ne",
    "make_benchmark",
    "preset_config",
    "run_experiment",
    "scalar_game_grid",
    "sem_nash_check",
    "synth_shapes",
]

__version__ = "0.1.0"
