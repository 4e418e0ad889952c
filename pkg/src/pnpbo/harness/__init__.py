"""Experiment harness: configs, grid search, plot data and the CLI."""

from .config import RunConfig, build_problem, load_config, parse_config, solver_config
from .grid import GridSpec, run_grid

__all__ = ["GridSpec", "RunConfig", "build_problem", "load_config", "parse_config", "run_grid", "solver_config"]
