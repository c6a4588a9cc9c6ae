"""Welfare and fairness metrics for mechanism comparison.

Social welfare is the plain sum of utilities; efficiency of a mechanism
is its welfare relative to the social optimum on the same instance.
Nash social welfare (NSW) is the budget-weighted product of utilities,
the geometric-mean-style index the equilibrium mechanism maximizes.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

# utilities below this count as zero when evaluating NSW: welfare LPs
# return exact zeros, interior-point output leaves ~1e-9 dust
ZERO_UTILITY_FLOOR = 1e-6


def log_nash_social_welfare(utilities, budgets, zero_floor: float = ZERO_UTILITY_FLOOR) -> float:
    """log of the budget-weighted utility product; -inf if any utility is zero."""
    u = np.asarray(utilities, dtype=float)
    b = np.asarray(budgets, dtype=float)
    if u.shape != b.shape:
        raise ValueError(f"length mismatch: {u.shape} vs {b.shape}")
    if (u < 0).any():
        raise ValueError("negative utility")
    if (u <= zero_floor).any():
        return -math.inf
    return float(b @ np.log(u))


def nash_social_welfare(utilities, budgets, zero_floor: float = ZERO_UTILITY_FLOOR) -> float:
    """Budget-weighted product of utilities; 0 if any utility is zero.

    Evaluated in log space and exponentiated, so it only overflows where
    the true value does.
    """
    log_value = log_nash_social_welfare(utilities, budgets, zero_floor)
    if log_value == -math.inf:
        return 0.0
    return math.exp(log_value)


def zero_utility_fraction(utilities, zero_floor: float = ZERO_UTILITY_FLOOR) -> float:
    u = np.asarray(utilities, dtype=float)
    return float((u <= zero_floor).mean())


def efficiency(result, so_result) -> float:
    """Welfare of a mechanism relative to the social optimum.

    NaN if the social-optimum welfare is zero (degenerate instance).
    """
    sw_so = float(so_result.social_welfare)
    if sw_so <= 0:
        return math.nan
    return float(result.social_welfare) / sw_so


@dataclass(frozen=True)
class MetricsReport:
    """Per-instance mechanism comparison with certificate outcomes.

    ``eta``, ``kkt_max_abs`` and the pass flags are NaN/None where not
    applicable (no SO run, mechanism without prices, toggled-off
    certificates).  The empirical worst-case efficiency over a batch is
    only a proxy for the price of anarchy, which is a worst case over all
    instances.
    """

    instance_id: str
    mechanism: str
    social_welfare: float
    nsw_log: float
    eta: float
    sharing_incentive_ok: bool | None = None
    welfare_order_ok: bool | None = None
    nsw_max_ok: bool | None = None
    me_cert_ok: bool | None = None
    pf_ok: bool | None = None
    ef_status: str | None = None
    kkt_max_abs: float = math.nan
    me_cert_residual: float = math.nan
    pf_max_aggregate: float = math.nan


CSV_COLUMNS = (
    "instance_id", "mechanism", "SW", "NSW_log", "eta",
    "sharing_incentive_ok", "welfare_order_ok", "nsw_max_ok",
    "me_cert_ok", "pf_ok", "ef_status",
    "kkt_max_abs", "me_cert_residual", "pf_max_aggregate",
)


def _flag(value) -> str:
    if value is None:
        return ""
    return "1" if value else "0"


def _num(value) -> str:
    if value is None or (isinstance(value, float) and math.isnan(value)):
        return ""
    if isinstance(value, float) and math.isinf(value):
        return "-inf" if value < 0 else "inf"
    return f"{value:.12g}"


def report_to_row(report: MetricsReport) -> dict[str, str]:
    return {
        "instance_id": report.instance_id,
        "mechanism": report.mechanism,
        "SW": _num(report.social_welfare),
        "NSW_log": _num(report.nsw_log),
        "eta": _num(report.eta),
        "sharing_incentive_ok": _flag(report.sharing_incentive_ok),
        "welfare_order_ok": _flag(report.welfare_order_ok),
        "nsw_max_ok": _flag(report.nsw_max_ok),
        "me_cert_ok": _flag(report.me_cert_ok),
        "pf_ok": _flag(report.pf_ok),
        "ef_status": report.ef_status or "",
        "kkt_max_abs": _num(report.kkt_max_abs),
        "me_cert_residual": _num(report.me_cert_residual),
        "pf_max_aggregate": _num(report.pf_max_aggregate),
    }
