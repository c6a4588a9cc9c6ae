"""Machine-checkable certificates for equilibrium solutions.

Every efficiency and fairness property the market mechanism promises is
re-derived here from primal/dual data alone, so a solution can be audited
without trusting the solver: optimality conditions become residuals,
never bare booleans, and each check is tolerance-parameterized.

Multiplier recovery follows the equality cases of the program's
optimality conditions: the radio-domain multiplier of a provider equals
price times demand on any cell it actually buys, the compute-domain
multiplier is budget-per-utility minus the radio multiplier, and the
per-resource bottleneck multipliers equal price times demand.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import model
from .model import MarketInstance
from .solver import EquilibriumSolution


@dataclass(frozen=True)
class BangPerBuckReport:
    """Per-provider job costs implied by a price system.

    ``job_cost_mec[s, m]`` is the money needed to schedule one job of
    provider s in node m (sum over resource types of price * demand);
    ``job_cost_ran[s, c]`` the cost of uploading it through cell c.  The
    inverse of a job cost is the bang-per-buck of that node or cell.
    """

    job_cost_mec: np.ndarray        # (S, M)
    job_cost_ran: np.ndarray        # (S, C)
    min_job_cost: np.ndarray        # (S,) cheapest node-cell pair
    budget_per_utility: np.ndarray  # (S,) B_s / u_s

    @property
    def num_providers(self) -> int:
        return self.min_job_cost.shape[0]


def bang_per_buck(instance: MarketInstance, solution: EquilibriumSolution) -> BangPerBuckReport:
    q = instance.mec_demand @ solution.mec_prices.T          # (S, M)
    w = solution.ran_prices[None, :] * instance.ran_demand   # (S, C)
    min_cost = q.min(axis=1) + w.min(axis=1)
    with np.errstate(divide="ignore"):
        bpu = np.where(solution.utilities > 0,
                       instance.budgets / np.maximum(solution.utilities, 1e-300),
                       np.inf)
    return BangPerBuckReport(q, w, min_cost, bpu)


@dataclass(frozen=True)
class KktResiduals:
    """Residuals of every optimality condition, grouped by family.

    ``stationarity`` carries the four gradient equations (utility, per
    resource, per cell, per node), ``complementarity`` the capacity and
    sign-constraint slackness products, ``dual`` the sign violations of
    the recovered multipliers and prices, and ``primal`` the constraint
    violations of the allocation itself.  ``max_abs`` is the maximum over
    every entry of every family.
    """

    stationarity: dict[str, np.ndarray]
    complementarity: dict[str, np.ndarray]
    dual: dict[str, np.ndarray]
    primal: dict[str, np.ndarray]
    max_abs: float
    multipliers: dict[str, np.ndarray] = field(repr=False, default_factory=dict)

    def families(self) -> dict[str, np.ndarray]:
        out = {}
        for group, data in (("stationarity", self.stationarity),
                            ("complementarity", self.complementarity),
                            ("dual", self.dual),
                            ("primal", self.primal)):
            for name, arr in data.items():
                out[f"{group}.{name}"] = arr
        return out


def kkt_residuals(instance: MarketInstance, solution: EquilibriumSolution,
                  positive_threshold: float = 1e-8) -> KktResiduals:
    """Evaluate the optimality conditions at a solution with duals.

    ``positive_threshold`` decides which variables count as purchased
    when recovering multipliers from prices.  The maximum residual is
    below the solver tolerance exactly when the solution is a genuine
    optimum of the program; a merely feasible point fails loudly.
    """
    x = solution.allocation.mec_alloc
    y = solution.allocation.ran_alloc
    j = solution.job_split
    u = solution.utilities
    p_mec = solution.mec_prices
    p_ran = solution.ran_prices
    B = instance.budgets
    d_mec = instance.mec_demand
    d_ran = instance.ran_demand

    report = bang_per_buck(instance, solution)
    q, w = report.job_cost_mec, report.job_cost_ran

    # lambda_ran: on purchased cells price*demand is binding; take the
    # cheapest purchased cell (they all agree at an exact optimum)
    purchased = y > positive_threshold
    w_masked = np.where(purchased, w, np.inf)
    lam_ran = np.where(purchased.any(axis=1), w_masked.min(axis=1), w.min(axis=1))
    lam_mec = report.budget_per_utility - lam_ran

    # remaining multipliers from the stationarity equalities
    nu_cell = np.maximum(0.0, p_ran[None, :] - lam_ran[:, None] / d_ran)
    nu_node = np.maximum(0.0, q - lam_mec[:, None])
    lam_bottleneck = p_mec[None, :, :] * d_mec[:, None, :]   # (S, M, R)

    with np.errstate(invalid="ignore"):
        stat_utility = np.abs(report.budget_per_utility - lam_mec - lam_ran)
        stat_utility = np.where(np.isfinite(report.budget_per_utility), stat_utility, np.inf)
    stat_resource = np.abs(lam_bottleneck / d_mec[:, None, :] - p_mec[None, :, :])
    stat_cell = np.maximum(0.0, lam_ran[:, None] / d_ran - p_ran[None, :])
    stat_node = np.where(np.isfinite(lam_mec[:, None]),
                         np.maximum(0.0, lam_mec[:, None] - q), np.inf)

    mec_used = x.sum(axis=0)
    ran_used = y.sum(axis=0)
    comp_mec_capacity = np.abs(p_mec * (instance.mec_capacity - mec_used))
    comp_ran_capacity = np.abs(p_ran * (instance.ran_capacity - ran_used))
    comp_x_sign = np.abs(x * np.maximum(0.0, p_mec[None, :, :] - lam_bottleneck / d_mec[:, None, :]))
    comp_y_sign = np.abs(y * nu_cell)
    with np.errstate(invalid="ignore"):
        comp_j_sign = np.abs(j * np.where(np.isfinite(lam_mec[:, None]), q - lam_mec[:, None], np.inf))

    dual_mec_price = np.maximum(0.0, -p_mec)
    dual_ran_price = np.maximum(0.0, -p_ran)
    dual_lam_mec = np.maximum(0.0, -lam_mec)
    dual_lam_ran = np.maximum(0.0, -lam_ran)

    primal_mec_capacity = np.maximum(0.0, mec_used - instance.mec_capacity)
    primal_ran_capacity = np.maximum(0.0, ran_used - instance.ran_capacity)
    primal_bottleneck = np.maximum(0.0, j[:, :, None] - x / d_mec[:, None, :])
    primal_mec_domain = np.maximum(0.0, u - j.sum(axis=1))
    primal_ran_domain = np.maximum(0.0, u - (y / d_ran).sum(axis=1))
    primal_nonneg = np.concatenate([
        np.maximum(0.0, -x).ravel(), np.maximum(0.0, -y).ravel(),
        np.maximum(0.0, -j).ravel(), np.maximum(0.0, -u).ravel(),
    ])

    stationarity = {"utility": stat_utility, "resource": stat_resource,
                    "cell": stat_cell, "node": stat_node}
    complementarity = {"mec_capacity": comp_mec_capacity, "ran_capacity": comp_ran_capacity,
                       "x_sign": comp_x_sign, "y_sign": comp_y_sign, "j_sign": comp_j_sign}
    dual = {"mec_price": dual_mec_price, "ran_price": dual_ran_price,
            "lambda_mec": dual_lam_mec, "lambda_ran": dual_lam_ran}
    primal = {"mec_capacity": primal_mec_capacity, "ran_capacity": primal_ran_capacity,
              "bottleneck": primal_bottleneck, "mec_domain": primal_mec_domain,
              "ran_domain": primal_ran_domain, "nonneg": primal_nonneg}
    max_abs = 0.0
    for group in (stationarity, complementarity, dual, primal):
        for arr in group.values():
            if arr.size:
                max_abs = max(max_abs, float(np.max(arr)))
    multipliers = {"lambda_mec": lam_mec, "lambda_ran": lam_ran,
                   "nu_cell": nu_cell, "nu_node": nu_node,
                   "lambda_bottleneck": lam_bottleneck}
    return KktResiduals(stationarity, complementarity, dual, primal, max_abs, multipliers)


@dataclass(frozen=True)
class MarketEquilibriumCertificate:
    """Direct audit of the two defining equilibrium conditions.

    Optimal goods: each provider's budget-per-utility never undercuts the
    cheapest node-cell job cost, and matches it on every pair it actually
    buys (maximum bang-per-buck).  Market clearing: every resource is
    either fully sold or free, and every budget is exhausted.
    """

    passed: bool
    optimal_goods_passed: bool
    clearing_passed: bool
    budget_passed: bool
    max_inequality_violation: float   # B/u above some pair's job cost
    max_equality_gap: float           # purchased pairs off the minimum cost
    max_clearing_residual: float      # min(price, relative slack) over resources
    max_budget_error: float           # relative budget mismatch
    tolerance: float
    bang_per_buck: BangPerBuckReport


def check_market_equilibrium(instance: MarketInstance, solution: EquilibriumSolution,
                             tol: float = 1e-5,
                             purchase_threshold: float = 1e-3) -> MarketEquilibriumCertificate:
    """Verify the equilibrium conditions of an allocation-plus-prices pair.

    ``purchase_threshold`` is in job units: bundles carrying fewer jobs
    than this are not audited for the exact bang-per-buck equality (an
    interior-point solution leaves asymptotically-zero variables slightly
    positive).  Capacity slack is measured relative to the capacity.
    """
    x = solution.allocation.mec_alloc
    y = solution.allocation.ran_alloc
    j = solution.job_split
    u = solution.utilities
    report = bang_per_buck(instance, solution)
    q, w, bpu = report.job_cost_mec, report.job_cost_ran, report.budget_per_utility

    pair_cost = q[:, :, None] + w[:, None, :]                 # (S, M, C)
    with np.errstate(invalid="ignore"):
        ineq = np.maximum(0.0, bpu[:, None, None] - pair_cost)
    ineq = np.where(np.isfinite(bpu)[:, None, None], ineq, np.inf)
    max_inequality = float(ineq.max())

    node_used = j > purchase_threshold                        # (S, M)
    cell_used = (y / instance.ran_demand) > purchase_threshold  # (S, C)
    pair_used = node_used[:, :, None] & cell_used[:, None, :]
    gaps = np.abs(pair_cost - bpu[:, None, None])
    max_equality = float(gaps[pair_used].max()) if pair_used.any() else 0.0

    mec_slack = instance.mec_capacity - x.sum(axis=0)
    ran_slack = instance.ran_capacity - y.sum(axis=0)
    clearing_mec = np.minimum(np.abs(solution.mec_prices),
                              np.abs(mec_slack) / instance.mec_capacity)
    clearing_ran = np.minimum(np.abs(solution.ran_prices),
                              np.abs(ran_slack) / instance.ran_capacity)
    feas = max(float(np.maximum(0.0, -mec_slack / instance.mec_capacity).max()),
               float(np.maximum(0.0, -ran_slack / instance.ran_capacity).max()),
               float(np.maximum(0.0, -x).max()), float(np.maximum(0.0, -y).max()))
    max_clearing = max(float(clearing_mec.max()), float(clearing_ran.max()), feas)

    spend = (np.einsum("smr,mr->s", x, solution.mec_prices)
             + y @ solution.ran_prices)
    max_budget = float(np.max(np.abs(spend - instance.budgets) / instance.budgets))

    optimal_goods = max_inequality <= tol and max_equality <= tol
    clearing = max_clearing <= tol
    budget = max_budget <= tol
    return MarketEquilibriumCertificate(
        passed=bool(optimal_goods and clearing and budget),
        optimal_goods_passed=bool(optimal_goods),
        clearing_passed=bool(clearing),
        budget_passed=bool(budget),
        max_inequality_violation=max_inequality,
        max_equality_gap=max_equality,
        max_clearing_residual=max_clearing,
        max_budget_error=max_budget,
        tolerance=tol,
        bang_per_buck=report,
    )


@dataclass(frozen=True)
class ProportionalFairnessCertificate:
    """Budget-weighted aggregate of relative utility changes vs alternatives.

    A proportional-fair utility vector makes this aggregate non-positive
    for every feasible alternative; the certificate reports the worst
    aggregate over structured (other mechanisms) plus random alternatives.
    """

    status: str                       # pass | fail | undefined
    max_aggregate: float
    worst_source: str
    tolerance: float
    n_alternatives: int

    @property
    def passed(self) -> bool:
        return self.status == "pass"


def _random_feasible_utilities(instance: MarketInstance, rng: np.random.Generator) -> np.ndarray:
    shares = rng.dirichlet(np.ones(instance.num_providers),
                           size=instance.num_nodes * instance.num_resources
                           + instance.num_cells)
    m_r = instance.num_nodes * instance.num_resources
    mec_shares = shares[:m_r].T.reshape(instance.num_providers, instance.num_nodes,
                                        instance.num_resources)
    ran_shares = shares[m_r:].T
    alloc = model.Allocation(mec_shares * instance.mec_capacity[None, :, :],
                             ran_shares * instance.ran_capacity[None, :])
    return model.utility_all(instance, alloc)


def check_proportional_fairness(instance: MarketInstance, utilities, budgets,
                                samples: int = 50, seed: int = 0,
                                tol: float | None = None,
                                structured: dict[str, np.ndarray] | None = None,
                                ) -> ProportionalFairnessCertificate:
    """Test the proportional-fairness inequality against alternatives.

    Alternatives are the utility vectors of the other mechanisms (passed
    via ``structured`` or computed here) plus ``samples`` random feasible
    allocations; random-only sampling would be a weak test.
    """
    utilities = np.asarray(utilities, dtype=float)
    budgets = np.asarray(budgets, dtype=float)
    if tol is None:
        tol = 1e-6 * float(budgets.sum())
    if (utilities <= 0).any():
        return ProportionalFairnessCertificate("undefined", np.inf, "zero-utility",
                                               tol, 0)
    if structured is None:
        from . import mechanisms as mech
        structured = {}
        for tag in ("SO", "WSO", "PS"):
            structured[tag] = mech.run_mechanism(instance, tag).utilities
    rng = np.random.default_rng(seed)
    worst = -np.inf
    worst_source = "none"
    count = 0
    for name, alt in structured.items():
        agg = float(budgets @ ((np.asarray(alt) - utilities) / utilities))
        count += 1
        if agg > worst:
            worst, worst_source = agg, name
    for k in range(samples):
        alt = _random_feasible_utilities(instance, rng)
        agg = float(budgets @ ((alt - utilities) / utilities))
        count += 1
        if agg > worst:
            worst, worst_source = agg, f"random-{k}"
    status = "pass" if worst <= tol else "fail"
    return ProportionalFairnessCertificate(status, worst, worst_source, tol, count)


@dataclass(frozen=True)
class EnvyFreenessCertificate:
    """Pairwise bundle comparison under equal budgets.

    Not applicable when budgets differ: with unequal purchasing power the
    comparison is meaningless, so the status says so instead of failing.
    """

    status: str                       # pass | fail | not-applicable
    max_envy: float
    tolerance: float

    @property
    def passed(self) -> bool:
        return self.status != "fail"


def check_envy_freeness(instance: MarketInstance, solution: EquilibriumSolution,
                        tol: float = 1e-6) -> EnvyFreenessCertificate:
    budgets = instance.budgets
    if not np.allclose(budgets, budgets[0], rtol=1e-12, atol=0):
        return EnvyFreenessCertificate("not-applicable", 0.0, tol)
    x = solution.allocation.mec_alloc
    y = solution.allocation.ran_alloc
    # cross_jobs[s, t]: utility provider s would get from provider t's bundle
    mec_cross = (x[None, :, :, :] / instance.mec_demand[:, None, None, :]).min(axis=3).sum(axis=2)
    ran_cross = (y[None, :, :] / instance.ran_demand[:, None, :]).sum(axis=2)
    cross = np.minimum(mec_cross, ran_cross)
    own = np.diagonal(cross)
    envy = cross - own[:, None]
    max_envy = float(envy.max())
    return EnvyFreenessCertificate("pass" if max_envy <= tol else "fail", max_envy, tol)
