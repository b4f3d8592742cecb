"""Configuration, pipelines and command line for pruning experiments."""
from .config import ConfigError, ExperimentConfig, defaults_for, derive_seed, parse_config
from .runner import RunManifest, UniversalityReport, compare_runs, run

__all__ = ["ConfigError", "ExperimentConfig", "RunManifest", "UniversalityReport", "compare_runs",
           "defaults_for", "derive_seed", "parse_config", "run"]
