"""Equilibrium computation for the resource market.

``solve_eg`` maximizes the budget-weighted sum of log utilities over the
joint compute/radio allocation polytope

    max  sum_s B_s log(u_s)
    s.t. j[s,m]  <= x[s,m,r] / d_mec[s,r]        for all s, m, r
         u[s]    <= sum_m j[s,m]                 for all s
         u[s]    <= sum_c y[s,c] / d_ran[s,c]    for all s
         sum_s x[s,m,r] <= D_mec[m,r]            for all m, r
         sum_s y[s,c]   <= D_ran[c]              for all c
         x, y, j >= 0

using a feasible-start log-barrier method: Newton-center the composite
objective  -t * sum B log u - sum log(slack) - sum log(j, x, y)  along an
increasing ladder of t.  At a centered point every inequality multiplier
is 1/(t * slack), so complementarity products equal 1/t exactly and the
dual variables of the two capacity families are the resource prices.
The job-split variables j[s,m] are kept explicitly so the dual report
matches the program's optimality conditions term for term.

``solve_linear`` maximizes a weighted sum of utilities over the identical
polytope (the social-optimum family) through scipy's HiGHS LP solver; the
optimal welfare value is unique even though the argmax generally is not.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import yaml
from scipy.linalg import cho_factor, cho_solve
from scipy.optimize import linprog

from . import model
from ._yamlfmt import dump_yaml
from .model import Allocation, InstanceError, MarketInstance, validate_instance

STATUS_CONVERGED = "converged"
STATUS_MAX_ITERATIONS = "max-iterations"
STATUS_NUMERICS = "infeasible-numerics"


class SolverError(RuntimeError):
    """Raised when a solve cannot produce a usable iterate at all."""


@dataclass(frozen=True)
class SolverSettings:
    """Numerical knobs; defaults are tuned for certificate-grade output.

    ``complementarity_target`` is the final per-constraint barrier weight
    (each price-times-slack product ends up at exactly this value), and
    ``kkt_tolerance`` is the stationarity budget used for the convergence
    status.  ``utility_floor`` guards the log domain: the solve fails
    loudly rather than clamping if an iterate would leave it.
    """

    kkt_tolerance: float = 1e-6
    utility_floor: float = 1e-9
    max_iterations: int = 800
    barrier_t0: float = 1.0
    barrier_increase: float = 10.0
    complementarity_target: float = 1e-9
    newton_tolerance: float = 1e-10
    initial_jitter: float = 0.0
    jitter_seed: int = 0

    def __post_init__(self):
        if self.kkt_tolerance <= 0 or self.utility_floor <= 0:
            raise ValueError("tolerances must be positive")
        if self.barrier_increase <= 1 or self.complementarity_target <= 0:
            raise ValueError("barrier schedule must increase toward a positive target")


@dataclass(frozen=True)
class EquilibriumSolution:
    """Primal allocation plus the dual prices that support it."""

    allocation: Allocation
    utilities: np.ndarray            # (S,) program utility variables
    job_split: np.ndarray            # (S, M) jobs executed per node
    mec_prices: np.ndarray           # (M, R) money per resource unit
    ran_prices: np.ndarray           # (C,) money per MHz
    objective_value: float           # sum_s B_s log u_s
    solver_status: str
    diagnostics: dict = field(default_factory=dict, repr=False, compare=False)


class _Layout:
    """Flat packing of the (u, j, x, y) variable blocks."""

    def __init__(self, instance: MarketInstance):
        s, m, r, c = (instance.num_providers, instance.num_nodes,
                      instance.num_resources, instance.num_cells)
        self.S, self.M, self.R, self.C = s, m, r, c
        self.off_u = 0
        self.off_j = s
        self.off_x = s + s * m
        self.off_y = s + s * m + s * m * r
        self.n = s + s * m + s * m * r + s * c

    def split(self, z: np.ndarray):
        u = z[self.off_u:self.off_j]
        j = z[self.off_j:self.off_x].reshape(self.S, self.M)
        x = z[self.off_x:self.off_y].reshape(self.S, self.M, self.R)
        y = z[self.off_y:].reshape(self.S, self.C)
        return u, j, x, y


def _build_constraints(instance: MarketInstance, layout: _Layout):
    """Sparse G z <= h for the five inequality families.

    Row order: bottleneck j<=x/d, compute-domain u<=sum j, radio-domain
    u<=sum y/d, node capacities, cell capacities.  Returns (G, h, rows)
    where rows maps family name to its row slice.
    """
    S, M, R, C = layout.S, layout.M, layout.R, layout.C
    entries_r, entries_c, entries_v = [], [], []

    def add(rows, cols, vals):
        entries_r.append(np.asarray(rows, dtype=np.int64).ravel())
        entries_c.append(np.asarray(cols, dtype=np.int64).ravel())
        entries_v.append(np.asarray(vals, dtype=float).ravel())

    s_idx, m_idx, r_idx = np.meshgrid(np.arange(S), np.arange(M), np.arange(R), indexing="ij")
    row_a = (s_idx * M * R + m_idx * R + r_idx)
    add(row_a, layout.off_j + s_idx * M + m_idx, np.ones(row_a.shape))
    add(row_a, layout.off_x + s_idx * M * R + m_idx * R + r_idx,
        -1.0 / instance.mec_demand[s_idx, r_idx])
    base_b = S * M * R
    s_only = np.arange(S)
    add(base_b + s_only, layout.off_u + s_only, np.ones(S))
    s2, m2 = np.meshgrid(s_only, np.arange(M), indexing="ij")
    add(base_b + s2, layout.off_j + s2 * M + m2, -np.ones(s2.shape))
    base_c = base_b + S
    add(base_c + s_only, layout.off_u + s_only, np.ones(S))
    s3, c3 = np.meshgrid(s_only, np.arange(C), indexing="ij")
    add(base_c + s3, layout.off_y + s3 * C + c3, -1.0 / instance.ran_demand[s3, c3])
    base_d = base_c + S
    s4, m4, r4 = np.meshgrid(s_only, np.arange(M), np.arange(R), indexing="ij")
    add(base_d + m4 * R + r4, layout.off_x + s4 * M * R + m4 * R + r4, np.ones(s4.shape))
    base_e = base_d + M * R
    s5, c5 = np.meshgrid(s_only, np.arange(C), indexing="ij")
    add(base_e + c5, layout.off_y + s5 * C + c5, np.ones(s5.shape))
    n_rows = base_e + C

    G = sp.coo_matrix(
        (np.concatenate(entries_v), (np.concatenate(entries_r), np.concatenate(entries_c))),
        shape=(n_rows, layout.n)).tocsr()
    h = np.zeros(n_rows)
    h[base_d:base_e] = instance.mec_capacity.ravel()
    h[base_e:] = instance.ran_capacity.ravel()
    rows = {
        "bottleneck": slice(0, base_b),
        "mec_domain": slice(base_b, base_c),
        "ran_domain": slice(base_c, base_d),
        "mec_capacity": slice(base_d, base_e),
        "ran_capacity": slice(base_e, n_rows),
    }
    return G, h, rows


def _initial_point(instance: MarketInstance, layout: _Layout,
                   settings: SolverSettings) -> np.ndarray:
    shares = instance.budgets / instance.budgets.sum()
    if settings.initial_jitter > 0:
        rng = np.random.default_rng(settings.jitter_seed)
        shares = shares * np.exp(settings.initial_jitter * rng.standard_normal(layout.S))
        shares = shares / shares.sum()
    x = 0.5 * shares[:, None, None] * instance.mec_capacity[None, :, :]
    y = 0.5 * shares[:, None] * instance.ran_capacity[None, :]
    j = 0.8 * (x / instance.mec_demand[:, None, :]).min(axis=2)
    u = 0.8 * np.minimum(j.sum(axis=1), (y / instance.ran_demand).sum(axis=1))
    z = np.empty(layout.n)
    z[layout.off_u:layout.off_j] = u
    z[layout.off_j:layout.off_x] = j.ravel()
    z[layout.off_x:layout.off_y] = x.ravel()
    z[layout.off_y:] = y.ravel()
    return z


def _barrier_value(z, t, weights, G, h, layout) -> float:
    slack = h - G @ z
    pos = z[layout.off_j:]
    u = z[:layout.off_j]
    if slack.min() <= 0 or pos.min() <= 0 or u.min() <= 0:
        return np.inf
    return float(-t * weights @ np.log(u) - np.log(slack).sum() - np.log(pos).sum())


def _newton_direction(Hs, gs):
    """Solve the Jacobi-scaled Newton system with one refinement pass.

    Cholesky first; at the deepest barrier stages roundoff can make the
    matrix numerically indefinite, in which case progressively stronger
    diagonal regularization restores a guaranteed descent direction.
    """
    for jitter in (0.0, 1e-12, 1e-9, 1e-6):
        Ht = Hs if jitter == 0.0 else Hs + jitter * np.eye(Hs.shape[0])
        try:
            chol = cho_factor(Ht, lower=True, check_finite=False)
            q = cho_solve(chol, -gs, check_finite=False)
            q += cho_solve(chol, -gs - Ht @ q, check_finite=False)
        except np.linalg.LinAlgError:
            continue
        if np.all(np.isfinite(q)):
            return q
    return None


def _center(z, t, weights, G, h, layout, settings, step_budget):
    """Newton-center the barrier objective at fixed t.

    Returns (z, steps_used, scaled_grad_inf, ok) where scaled_grad_inf is
    the max-norm of the barrier gradient divided by t (the stationarity
    residual of the original program at the implied multipliers) and ok
    is False only on numerical breakdown.
    """
    n_u = layout.off_j
    GT = G.T.tocsr()

    def scaled_grad_at(point: np.ndarray) -> float:
        slack = h - G @ point
        g = GT @ (1.0 / slack)
        g[:n_u] -= t * weights / point[:n_u]
        g[n_u:] -= 1.0 / point[n_u:]
        return float(np.abs(g).max()) / t

    def guarded_step(point, direction, slack, Gp) -> np.ndarray:
        alpha = 1.0
        hit = Gp > 0
        if hit.any():
            alpha = min(alpha, 0.99 * float((slack[hit] / Gp[hit]).min()))
        neg = direction < 0
        if neg.any():
            alpha = min(alpha, 0.99 * float((point[neg] / -direction[neg]).min()))
        return point + alpha * direction

    for step in range(step_budget):
        slack = h - G @ z
        u = z[:n_u]
        pos = z[n_u:]
        w1 = 1.0 / slack
        grad = GT @ w1
        grad[:n_u] -= t * weights / u
        grad[n_u:] -= 1.0 / pos
        scaled_grad = float(np.abs(grad).max()) / t
        diag = np.empty(layout.n)
        diag[:n_u] = t * weights / u ** 2
        diag[n_u:] = 1.0 / pos ** 2
        Gw = sp.diags(w1) @ G
        H = (Gw.T @ Gw).toarray()
        H[np.diag_indices_from(H)] += diag
        # Jacobi-scale to unit diagonal before factorizing: the raw matrix
        # mixes barrier weights spanning ~18 orders of magnitude at the
        # final stage and defeats an unscaled Cholesky
        d = np.sqrt(H.diagonal())
        Hs = H / d[:, None] / d[None, :]
        gs = grad / d
        p = _newton_direction(Hs, gs)
        if p is None:
            return z, step, scaled_grad, False
        p /= d
        decrement2 = float(-grad @ p)
        if not np.isfinite(decrement2):
            return z, step, scaled_grad, False
        phi0 = _barrier_value(z, t, weights, G, h, layout)
        noise = 1e-13 * (abs(phi0) + 1.0)
        if decrement2 / 2 <= settings.newton_tolerance or decrement2 <= 0:
            # centered to Newton precision: one last guarded full step
            # typically cuts the gradient another order, but only keep it
            # if it genuinely helps
            if decrement2 > 0:
                cand = guarded_step(z, p, slack, G @ p)
                if (_barrier_value(cand, t, weights, G, h, layout) <= phi0 + noise):
                    cand_grad = scaled_grad_at(cand)
                    if cand_grad < scaled_grad:
                        return cand, step + 1, cand_grad, True
            return z, step + 1, scaled_grad, True

        Gp = G @ p
        if decrement2 <= 0.35 ** 2:
            # quadratically-convergent region of the self-concordant
            # barrier: the guarded full step is safe when it does not
            # raise the (float-noisy) objective
            cand = guarded_step(z, p, slack, Gp)
            if _barrier_value(cand, t, weights, G, h, layout) <= phi0 + noise:
                z = cand
                continue
            return z, step + 1, scaled_grad, True
        alpha = 1.0
        hit = Gp > 0
        if hit.any():
            alpha = min(alpha, 0.99 * float((slack[hit] / Gp[hit]).min()))
        neg = p < 0
        if neg.any():
            alpha = min(alpha, 0.99 * float((z[neg] / -p[neg]).min()))
        gdotp = float(grad @ p)
        accepted = False
        for _ in range(60):
            cand = z + alpha * p
            phi = _barrier_value(cand, t, weights, G, h, layout)
            if phi <= phi0 + 1e-4 * alpha * gdotp + noise:
                z = cand
                accepted = True
                break
            alpha *= 0.5
        if not accepted:
            # stalled below float resolution: keep the current iterate and
            # report it with its residual
            return z, step + 1, scaled_grad, True
    return z, step_budget, scaled_grad_at(z), True


def _polish(z, t, weights, G, h, layout, step_budget, scaled_grad):
    """Extended-precision Newton cleanup at the deepest barrier stage.

    Double-precision gradient evaluation bottoms out around 1e-7 * t here
    because binding slacks shrink to ~1e-9 of their capacities; an 80-bit
    gradient with the ordinary double Hessian recovers three more orders
    of stationarity in one or two steps.  Steps are kept only while the
    residual actually improves.
    """
    n_u = layout.off_j
    Gd = np.asarray(G.todense(), dtype=np.longdouble)
    h_ld = h.astype(np.longdouble)
    w_ld = weights.astype(np.longdouble)
    z_ld = z.astype(np.longdouble)

    def gradient(point):
        slack = h_ld - Gd @ point
        if slack.min() <= 0 or point.min() <= 0:
            return None, None
        g = Gd.T @ (1.0 / slack)
        g[:n_u] -= t * w_ld / point[:n_u]
        g[n_u:] -= 1.0 / point[n_u:]
        return g, slack

    grad, slack = gradient(z_ld)
    if grad is None:
        return z, 0, scaled_grad, None
    best = float(np.abs(grad).max()) / t
    used = 0
    for _ in range(step_budget):
        w1 = np.asarray(1.0 / slack, dtype=float)
        diag = np.empty(layout.n)
        diag[:n_u] = t * weights / np.asarray(z_ld[:n_u], dtype=float) ** 2
        diag[n_u:] = 1.0 / np.asarray(z_ld[n_u:], dtype=float) ** 2
        Gw = sp.diags(w1) @ G
        H = (Gw.T @ Gw).toarray()
        H[np.diag_indices_from(H)] += diag
        d = np.sqrt(H.diagonal())
        p = _newton_direction(H / d[:, None] / d[None, :],
                              np.asarray(grad, dtype=float) / d)
        if p is None:
            break
        p = (p / d).astype(np.longdouble)
        Gp = Gd @ p
        alpha = np.longdouble(1.0)
        hit = Gp > 0
        if hit.any():
            alpha = min(alpha, 0.99 * (slack[hit] / Gp[hit]).min())
        neg = p < 0
        if neg.any():
            alpha = min(alpha, 0.99 * (z_ld[neg] / -p[neg]).min())
        cand = z_ld + alpha * p
        used += 1
        cand_grad, cand_slack = gradient(cand)
        if cand_grad is None:
            break
        cand_res = float(np.abs(cand_grad).max()) / t
        if cand_res >= best:
            break
        z_ld, grad, slack, best = cand, cand_grad, cand_slack, cand_res
    # duals must come from the extended-precision slacks: binding slacks
    # are ~1e-9 of the capacities, below double summation noise
    duals = np.asarray(1.0 / (t * slack), dtype=float)
    return np.asarray(z_ld, dtype=float), used, best, duals


def solve_eg(instance: MarketInstance, settings: SolverSettings | None = None) -> EquilibriumSolution:
    """Compute the market equilibrium allocation, utilities and prices.

    Every provider ends with utility above ``settings.utility_floor``
    (any provider can afford some bundle, and the log objective repels
    the boundary).  Non-convergence within the iteration budget returns
    the best iterate flagged ``max-iterations`` rather than failing
    silently.
    """
    settings = settings or SolverSettings()
    violations = validate_instance(instance)
    if violations:
        raise InstanceError("invalid instance: " + "; ".join(violations))
    layout = _Layout(instance)
    G, h, rows = _build_constraints(instance, layout)
    weights = instance.budgets
    z = _initial_point(instance, layout, settings)

    t_final = 1.0 / settings.complementarity_target
    t = min(settings.barrier_t0, t_final)
    steps_left = settings.max_iterations
    status = STATUS_MAX_ITERATIONS
    scaled_grad = np.inf
    duals = None
    while steps_left > 0:
        z, used, scaled_grad, ok = _center(z, t, weights, G, h, layout, settings,
                                           min(steps_left, 80))
        steps_left -= max(used, 1)
        if not ok:
            status = STATUS_NUMERICS
            break
        if t >= t_final:
            if steps_left > 0:
                z, used, scaled_grad, duals = _polish(z, t, weights, G, h, layout,
                                                      min(steps_left, 6), scaled_grad)
                steps_left -= used
            status = (STATUS_CONVERGED
                      if scaled_grad <= settings.kkt_tolerance
                      else STATUS_MAX_ITERATIONS)
            break
        t = min(t * settings.barrier_increase, t_final)

    u, j, x, y = layout.split(z)
    if (u <= settings.utility_floor).any():
        status = STATUS_NUMERICS if status != STATUS_CONVERGED else status
    if duals is None:
        duals = 1.0 / (t * (h - G @ z))
    mec_prices = duals[rows["mec_capacity"]].reshape(layout.M, layout.R)
    ran_prices = duals[rows["ran_capacity"]].copy()
    allocation = Allocation(x.copy(), y.copy())
    objective = float(weights @ np.log(u))
    diagnostics = {
        "newton_steps": settings.max_iterations - steps_left,
        "final_mu": 1.0 / t,
        "stationarity_residual": scaled_grad,
        "mec_domain_duals": duals[rows["mec_domain"]].copy(),
        "ran_domain_duals": duals[rows["ran_domain"]].copy(),
    }
    return EquilibriumSolution(allocation, u.copy(), j.copy(), mec_prices, ran_prices,
                               objective, status, diagnostics)


def solve_linear(instance: MarketInstance, weights, settings: SolverSettings | None = None):
    """Maximize ``sum_s weights[s] * u_s`` over the shared polytope.

    Returns a ``MechanismResult`` whose ``objective_value`` is the unique
    optimal welfare; the allocation attaining it is whatever the LP
    solver picks among the optima and may change across solver versions.
    """
    from .mechanisms import MechanismResult

    violations = validate_instance(instance)
    if violations:
        raise InstanceError("invalid instance: " + "; ".join(violations))
    weights = np.asarray(weights, dtype=float)
    if weights.shape != (instance.num_providers,):
        raise InstanceError(f"weights must have shape ({instance.num_providers},)")
    if (weights < 0).any():
        raise InstanceError("weights must be non-negative")
    layout = _Layout(instance)
    G, h, _ = _build_constraints(instance, layout)
    c = np.zeros(layout.n)
    c[:layout.off_j] = -weights
    res = linprog(c, A_ub=G, b_ub=h, bounds=(0, None), method="highs")
    if not res.success:
        raise SolverError(f"welfare LP failed: {res.message}")
    u, j, x, y = layout.split(res.x)
    allocation = Allocation(x.copy(), y.copy())
    utilities = model.utility_all(instance, allocation)
    tag = "SO" if np.allclose(weights, weights[0]) else "WSO"
    return MechanismResult(
        mechanism=tag,
        utilities=utilities,
        allocation=allocation,
        social_welfare=float(utilities.sum()),
        objective_value=float(-res.fun),
    )


# --- solution files -------------------------------------------------------

def solution_to_dict(solution: EquilibriumSolution) -> dict:
    return {
        "solver_status": solution.solver_status,
        "objective_value": float(solution.objective_value),
        "utilities": [float(v) for v in solution.utilities],
        "job_split": [[float(v) for v in row] for row in solution.job_split],
        "mec_prices": [[float(v) for v in row] for row in solution.mec_prices],
        "ran_prices": [float(v) for v in solution.ran_prices],
        "mec_alloc": [[[float(v) for v in row] for row in mat]
                      for mat in solution.allocation.mec_alloc],
        "ran_alloc": [[float(v) for v in row] for row in solution.allocation.ran_alloc],
    }


def solution_from_dict(data: dict) -> EquilibriumSolution:
    return EquilibriumSolution(
        allocation=Allocation(np.asarray(data["mec_alloc"], dtype=float),
                              np.asarray(data["ran_alloc"], dtype=float)),
        utilities=np.asarray(data["utilities"], dtype=float),
        job_split=np.asarray(data["job_split"], dtype=float),
        mec_prices=np.asarray(data["mec_prices"], dtype=float),
        ran_prices=np.asarray(data["ran_prices"], dtype=float),
        objective_value=float(data["objective_value"]),
        solver_status=str(data["solver_status"]),
    )


def save_solution(solution: EquilibriumSolution, path) -> None:
    with open(path, "w") as fh:
        fh.write(dump_yaml(solution_to_dict(solution)))


def load_solution(path) -> EquilibriumSolution:
    with open(path) as fh:
        return solution_from_dict(yaml.safe_load(fh))
