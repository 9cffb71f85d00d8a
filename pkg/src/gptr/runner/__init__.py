"""Experiment runner: configs, experiment bundles and the ``gptr`` command line."""
from .config import ConfigError, DesignConfig, ExperimentConfig, ProblemConfig, config_hash, defaults_reference, load_config
from .experiment import compare_modes, load_model, reactor_assessment, run_experiment, save_model, write_comparison_csv

__all__ = [
    "ConfigError",
    "DesignConfig",
    "ExperimentConfig",
    "ProblemConfig",
    "config_hash",
    "defaults_reference",
    "load_config",
    "compare_modes",
    "load_model",
    "reactor_assessment",
    "run_experiment",
    "save_model",
    "write_comparison_csv",
]
