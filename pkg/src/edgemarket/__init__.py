"""Market-based joint allocation of edge compute and radio resources."""

from .model import (
    Allocation,
    InstanceError,
    MarketInstance,
    load_instance,
    mec_jobs,
    ran_jobs,
    save_instance,
    utility,
    validate_instance,
)
from .solver import (
    EquilibriumSolution,
    SolverError,
    SolverSettings,
    solve_eg,
    solve_linear,
)
from .mechanisms import MechanismResult, allocate_proportional_sharing, run_mechanism

__all__ = [
    "Allocation",
    "EquilibriumSolution",
    "InstanceError",
    "MarketInstance",
    "MechanismResult",
    "SolverError",
    "SolverSettings",
    "allocate_proportional_sharing",
    "load_instance",
    "mec_jobs",
    "ran_jobs",
    "run_mechanism",
    "save_instance",
    "solve_eg",
    "solve_linear",
    "utility",
    "validate_instance",
]
