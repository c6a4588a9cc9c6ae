"""Uniform interface over the four allocation mechanisms.

ME: market equilibrium (budget-weighted log-utility program).
SO / WSO: plain and budget-weighted social optimum (welfare LPs).
PS: static proportional sharing, a budget-proportional slice of every
resource in the system.

Results always carry utilities re-evaluated from the allocation through
the model module, never trusted from solver internals, so the mechanisms
are compared on identical semantics.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from . import model, solver
from .model import Allocation, InstanceError, MarketInstance

MECHANISMS = ("ME", "SO", "WSO", "PS")


@dataclass(frozen=True)
class MechanismResult:
    mechanism: str
    utilities: np.ndarray            # (S,) re-evaluated from the allocation
    allocation: Allocation
    social_welfare: float            # sum of utilities
    objective_value: float = float("nan")   # mechanism's own optimum (LP/log welfare)
    mec_prices: np.ndarray | None = None    # ME only
    ran_prices: np.ndarray | None = None    # ME only
    equilibrium: solver.EquilibriumSolution | None = None  # ME only
    solver_status: str = solver.STATUS_CONVERGED


def allocate_proportional_sharing(instance: MarketInstance) -> MechanismResult:
    """Give every provider a budget-proportional share of every resource.

    The allocation exhausts each capacity exactly; it ignores demand
    profiles and load entirely, which is what makes it a useful static
    baseline.
    """
    shares = instance.budgets / instance.budgets.sum()
    mec = shares[:, None, None] * instance.mec_capacity[None, :, :]
    ran = shares[:, None] * instance.ran_capacity[None, :]
    allocation = Allocation(mec, ran)
    utilities = model.utility_all(instance, allocation)
    return MechanismResult(
        mechanism="PS",
        utilities=utilities,
        allocation=allocation,
        social_welfare=float(utilities.sum()),
        objective_value=float(utilities.sum()),
    )


def run_mechanism(instance: MarketInstance, mechanism: str,
                  settings: solver.SolverSettings | None = None) -> MechanismResult:
    """Dispatch to one of ME | SO | WSO | PS on a validated instance."""
    tag = mechanism.upper()
    if tag == "PS":
        return allocate_proportional_sharing(instance)
    if tag == "SO":
        result = solver.solve_linear(instance, np.ones(instance.num_providers), settings)
        return replace(result, mechanism="SO")
    if tag == "WSO":
        result = solver.solve_linear(instance, instance.budgets, settings)
        return replace(result, mechanism="WSO")
    if tag == "ME":
        eq = solver.solve_eg(instance, settings)
        utilities = model.utility_all(instance, eq.allocation)
        return MechanismResult(
            mechanism="ME",
            utilities=utilities,
            allocation=eq.allocation,
            social_welfare=float(utilities.sum()),
            objective_value=eq.objective_value,
            mec_prices=eq.mec_prices,
            ran_prices=eq.ran_prices,
            equilibrium=eq,
            solver_status=eq.solver_status,
        )
    raise InstanceError(f"unknown mechanism {mechanism!r}; expected one of {MECHANISMS}")
