"""Single-loop stochastic bilevel optimization with pluggable estimators."""

from .estimators import PAGE, SAGA, SGD, STORM, ZeroSARAH, make_estimator
from .exceptions import DivergedError, EstimatorStateError, InfeasibleError, NoConvergenceError, ParseError
from .model import BilevelProblem, Iterate, clip, direction_x, direction_y, direction_z
from .oracle import OracleConfig, hypergradient, solve_all
from .solver import PRESETS, PnPBO, RunTrace, SolverConfig, preset, run
from .theory import SmoothnessParams, build_ledger, check_biased, check_unbiased, suggest_steps

__version__ = "0.1.0"

__all__ = [
    "BilevelProblem", "DivergedError", "EstimatorStateError", "InfeasibleError", "Iterate",
    "NoConvergenceError", "OracleConfig", "PAGE", "PRESETS", "ParseError", "PnPBO", "RunTrace",
    "SAGA", "SGD", "STORM", "SmoothnessParams", "SolverConfig", "ZeroSARAH", "build_ledger",
    "check_biased", "check_unbiased", "clip", "direction_x", "direction_y", "direction_z",
    "hypergradient", "make_estimator", "preset", "run", "solve_all", "suggest_steps",
]
