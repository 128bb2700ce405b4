"""Experiment harness: config parsing, the method grid runner, result files and the CLI."""
from .config import RunConfig, build_config, parse_config
from .io import write_results
from .runner import RunResult, run_experiment

__all__ = ["RunConfig", "RunResult", "build_config", "parse_config", "run_experiment", "write_results"]
