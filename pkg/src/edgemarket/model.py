"""Problem data and bottleneck utility semantics.

A market instance describes a set of service providers competing for two
resource domains: a cluster of edge nodes offering R computing resource
types (CPU cores, GB of RAM, ...) and a set of radio cells offering
bandwidth (MHz).  Each provider has a per-job demand profile; its utility
is the number of jobs it can run concurrently, limited by whichever
domain performs worse.

Units are fixed at cores / GB / MHz throughout; no conversion logic.
Utilities are real valued (fractional jobs are allowed), matching a
divisible-goods market.  Instances and allocations are immutable after
construction and every operation here is a pure function.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import yaml

from ._yamlfmt import dump_yaml


class InstanceError(ValueError):
    """Raised when data is dimensionally inconsistent or unusable."""


def _frozen_array(value, shape_hint: str, ndim: int) -> np.ndarray:
    arr = np.asarray(value, dtype=float)
    if arr.ndim != ndim:
        raise InstanceError(f"{shape_hint} must be {ndim}-dimensional, got shape {arr.shape}")
    arr = arr.copy()
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True)
class MarketInstance:
    """Full problem datum: capacities, demand profiles, budgets.

    Shapes: mec_capacity (M, R), ran_capacity (C,), mec_demand (S, R),
    ran_demand (S, C), budgets (S,).
    """

    mec_capacity: np.ndarray
    ran_capacity: np.ndarray
    mec_demand: np.ndarray
    ran_demand: np.ndarray
    budgets: np.ndarray
    resource_names: tuple[str, ...] = ()
    node_names: tuple[str, ...] = ()
    cell_names: tuple[str, ...] = ()
    provider_names: tuple[str, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "mec_capacity", _frozen_array(self.mec_capacity, "mec_capacity", 2))
        object.__setattr__(self, "ran_capacity", _frozen_array(self.ran_capacity, "ran_capacity", 1))
        object.__setattr__(self, "mec_demand", _frozen_array(self.mec_demand, "mec_demand", 2))
        object.__setattr__(self, "ran_demand", _frozen_array(self.ran_demand, "ran_demand", 2))
        object.__setattr__(self, "budgets", _frozen_array(self.budgets, "budgets", 1))
        s, m, r, c = self.num_providers, self.num_nodes, self.num_resources, self.num_cells
        if min(s, m, r, c) < 1:
            raise InstanceError("instance needs at least one provider, node, resource type and cell")
        if self.mec_demand.shape != (s, r):
            raise InstanceError(f"mec_demand shape {self.mec_demand.shape} != ({s}, {r})")
        if self.ran_demand.shape != (s, c):
            raise InstanceError(f"ran_demand shape {self.ran_demand.shape} != ({s}, {c})")
        object.__setattr__(self, "resource_names", _default_names(self.resource_names, r, "res"))
        object.__setattr__(self, "node_names", _default_names(self.node_names, m, "node"))
        object.__setattr__(self, "cell_names", _default_names(self.cell_names, c, "cell"))
        object.__setattr__(self, "provider_names", _default_names(self.provider_names, s, "sp"))

    @property
    def num_providers(self) -> int:
        return self.budgets.shape[0]

    @property
    def num_nodes(self) -> int:
        return self.mec_capacity.shape[0]

    @property
    def num_resources(self) -> int:
        return self.mec_capacity.shape[1]

    @property
    def num_cells(self) -> int:
        return self.ran_capacity.shape[0]

    def replace_budgets(self, budgets) -> "MarketInstance":
        return MarketInstance(
            self.mec_capacity, self.ran_capacity, self.mec_demand, self.ran_demand,
            budgets, self.resource_names, self.node_names, self.cell_names, self.provider_names,
        )


def _default_names(names, n: int, prefix: str) -> tuple[str, ...]:
    names = tuple(names)
    if not names:
        return tuple(f"{prefix}{i}" for i in range(n))
    if len(names) != n:
        raise InstanceError(f"{prefix} names: expected {n} entries, got {len(names)}")
    return names


@dataclass(frozen=True)
class Allocation:
    """Per-provider resource bundles: mec_alloc (S, M, R), ran_alloc (S, C)."""

    mec_alloc: np.ndarray
    ran_alloc: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "mec_alloc", _frozen_array(self.mec_alloc, "mec_alloc", 3))
        object.__setattr__(self, "ran_alloc", _frozen_array(self.ran_alloc, "ran_alloc", 2))

    def scale(self, factor: float) -> "Allocation":
        return Allocation(self.mec_alloc * factor, self.ran_alloc * factor)

    def bundle_of(self, provider: int) -> tuple[np.ndarray, np.ndarray]:
        return self.mec_alloc[provider], self.ran_alloc[provider]


def _check_dims(instance: MarketInstance, allocation: Allocation) -> None:
    s, m, r, c = (instance.num_providers, instance.num_nodes,
                  instance.num_resources, instance.num_cells)
    if allocation.mec_alloc.shape != (s, m, r):
        raise InstanceError(
            f"mec_alloc shape {allocation.mec_alloc.shape} does not match instance ({s}, {m}, {r})")
    if allocation.ran_alloc.shape != (s, c):
        raise InstanceError(
            f"ran_alloc shape {allocation.ran_alloc.shape} does not match instance ({s}, {c})")


def mec_jobs_all(instance: MarketInstance, allocation: Allocation) -> np.ndarray:
    """Concurrent jobs each provider can run in the compute domain.

    Per node the count is limited by the provider's dominant resource
    (the smallest allocation-to-demand ratio); nodes add up.
    """
    _check_dims(instance, allocation)
    ratios = allocation.mec_alloc / instance.mec_demand[:, None, :]
    return ratios.min(axis=2).sum(axis=1)


def ran_jobs_all(instance: MarketInstance, allocation: Allocation) -> np.ndarray:
    """Job payloads each provider can push through the radio domain."""
    _check_dims(instance, allocation)
    return (allocation.ran_alloc / instance.ran_demand).sum(axis=1)


def utility_all(instance: MarketInstance, allocation: Allocation) -> np.ndarray:
    """Provider utilities: jobs supported by the worse of the two domains."""
    return np.minimum(mec_jobs_all(instance, allocation), ran_jobs_all(instance, allocation))


def mec_jobs(instance: MarketInstance, allocation: Allocation, provider: int) -> float:
    return float(mec_jobs_all(instance, allocation)[provider])


def ran_jobs(instance: MarketInstance, allocation: Allocation, provider: int) -> float:
    return float(ran_jobs_all(instance, allocation)[provider])


def utility(instance: MarketInstance, allocation: Allocation, provider: int) -> float:
    return float(utility_all(instance, allocation)[provider])


def validate_instance(instance: MarketInstance) -> list[str]:
    """Check instance invariants; returns a list of violations (empty = ok).

    A report rather than an exception, so batch runs can skip-and-log
    malformed instances.  Every provider must demand a non-zero amount of
    every resource type, which is what guarantees a market equilibrium
    exists.
    """
    violations: list[str] = []
    for (m, r) in zip(*np.nonzero(~(instance.mec_capacity > 0))):
        violations.append(f"mec_capacity[{m},{r}] = {instance.mec_capacity[m, r]} is not > 0")
    for (c,) in zip(*np.nonzero(~(instance.ran_capacity > 0))):
        violations.append(f"ran_capacity[{c}] = {instance.ran_capacity[c]} is not > 0")
    for (s, r) in zip(*np.nonzero(~(instance.mec_demand > 0))):
        violations.append(f"mec_demand[{s},{r}] = {instance.mec_demand[s, r]} is not > 0")
    for (s, c) in zip(*np.nonzero(~(instance.ran_demand > 0))):
        violations.append(f"ran_demand[{s},{c}] = {instance.ran_demand[s, c]} is not > 0")
    for (s,) in zip(*np.nonzero(~(instance.budgets > 0))):
        violations.append(f"budget[{s}] = {instance.budgets[s]} is not > 0")
    for arr, name in ((instance.mec_capacity, "mec_capacity"),
                      (instance.ran_capacity, "ran_capacity"),
                      (instance.mec_demand, "mec_demand"),
                      (instance.ran_demand, "ran_demand"),
                      (instance.budgets, "budgets")):
        if not np.all(np.isfinite(arr)):
            violations.append(f"{name} contains non-finite entries")
    return violations


def allocation_feasible(instance: MarketInstance, allocation: Allocation,
                        tol: float = 1e-9) -> bool:
    _check_dims(instance, allocation)
    if (allocation.mec_alloc < -tol).any() or (allocation.ran_alloc < -tol).any():
        return False
    mec_used = allocation.mec_alloc.sum(axis=0)
    ran_used = allocation.ran_alloc.sum(axis=0)
    return bool((mec_used <= instance.mec_capacity + tol).all()
                and (ran_used <= instance.ran_capacity + tol).all())


# --- instance file format -------------------------------------------------
#
# resource_types: [cpu, ram]
# nodes:    [{name: cpu-0, capacity: {cpu: 32, ram: 128}}, ...]
# cells:    [{name: large-0, bandwidth: 40.0}, ...]
# providers:
#   - {name: sp0, budget: 1.0, mec_demand: {cpu: 4, ram: 8}, ran_demand: 3.0}
#
# ran_demand may be a scalar (replicated over cells) or a {cell: value} map.

def instance_to_dict(instance: MarketInstance) -> dict:
    nodes = [
        {"name": instance.node_names[m],
         "capacity": {name: float(instance.mec_capacity[m, r])
                      for r, name in enumerate(instance.resource_names)}}
        for m in range(instance.num_nodes)
    ]
    cells = [
        {"name": instance.cell_names[c], "bandwidth": float(instance.ran_capacity[c])}
        for c in range(instance.num_cells)
    ]
    providers = []
    for s in range(instance.num_providers):
        row = instance.ran_demand[s]
        ran: float | dict = float(row[0]) if np.all(row == row[0]) else {
            instance.cell_names[c]: float(row[c]) for c in range(instance.num_cells)}
        providers.append({
            "name": instance.provider_names[s],
            "budget": float(instance.budgets[s]),
            "mec_demand": {name: float(instance.mec_demand[s, r])
                           for r, name in enumerate(instance.resource_names)},
            "ran_demand": ran,
        })
    return {"resource_types": list(instance.resource_names),
            "nodes": nodes, "cells": cells, "providers": providers}


def instance_from_dict(data: dict) -> MarketInstance:
    try:
        resource_names = tuple(str(x) for x in data["resource_types"])
        node_names = tuple(str(n["name"]) for n in data["nodes"])
        cell_names = tuple(str(c["name"]) for c in data["cells"])
        provider_names = tuple(str(p["name"]) for p in data["providers"])
        mec_capacity = [[float(n["capacity"][r]) for r in resource_names] for n in data["nodes"]]
        ran_capacity = [float(c["bandwidth"]) for c in data["cells"]]
        mec_demand = [[float(p["mec_demand"][r]) for r in resource_names]
                      for p in data["providers"]]
        ran_demand = []
        for p in data["providers"]:
            raw = p["ran_demand"]
            if isinstance(raw, dict):
                ran_demand.append([float(raw[name]) for name in cell_names])
            else:
                ran_demand.append([float(raw)] * len(cell_names))
        budgets = [float(p["budget"]) for p in data["providers"]]
    except (KeyError, TypeError) as exc:
        raise InstanceError(f"malformed instance document: {exc}") from exc
    return MarketInstance(mec_capacity, ran_capacity, mec_demand, ran_demand, budgets,
                          resource_names, node_names, cell_names, provider_names)


def save_instance(instance: MarketInstance, path) -> None:
    with open(path, "w") as fh:
        fh.write(dump_yaml(instance_to_dict(instance)))


def load_instance(path) -> MarketInstance:
    with open(path) as fh:
        data = yaml.safe_load(fh)
    if not isinstance(data, dict):
        raise InstanceError(f"{path}: not a mapping document")
    return instance_from_dict(data)
