"""Network utility maximization by proximal message passing."""

from .estimator import PMPSolver, check_problem
from .gen import (
    GenSpec,
    PruneMap,
    TransitMetadata,
    TransitSpec,
    degrade,
    fail_and_prune,
    gen_congested,
    gen_transit,
    gen_uncongested,
    path_prices,
    prune,
)
from .model import LINEAR, LOG, Problem, Stream, ValidationError, build_problem, validate
from .oracle import prox_oracle_1d, solve_barrier
from .prox import (
    ProxExtension,
    min_potential_delay,
    prox_extension,
    prox_linear,
    prox_log,
    prox_slack,
    register_extension,
)
from .solver import Solution, SolverConfig, Status, WarmStart, solve

__all__ = [
    "LINEAR",
    "LOG",
    "GenSpec",
    "PMPSolver",
    "Problem",
    "ProxExtension",
    "PruneMap",
    "Solution",
    "SolverConfig",
    "Status",
    "Stream",
    "TransitMetadata",
    "TransitSpec",
    "ValidationError",
    "WarmStart",
    "build_problem",
    "check_problem",
    "degrade",
    "fail_and_prune",
    "gen_congested",
    "gen_transit",
    "gen_uncongested",
    "min_potential_delay",
    "path_prices",
    "prox_extension",
    "prox_linear",
    "prox_log",
    "prox_oracle_1d",
    "prox_slack",
    "prune",
    "register_extension",
    "solve",
    "solve_barrier",
    "validate",
]
