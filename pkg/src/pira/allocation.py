"""Per-slot allocation ledger and assignment/activation/placement/path/priority
feasibility rules.

The ledger keeps incremental per-priority loads for every compute node,
network device, and link.  Device and link loads count each walk occurrence:
a request whose out-and-back walk passes a device twice contributes its
bandwidth demand twice to that device's queue.  Activation flags are derived
(an instance is active iff it serves a request; a node is active iff it hosts
an active instance), which is equivalent to the big-M linking form of the
original constraints.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass, field
from typing import Optional

from .topology import Topology
from .workload import Request, ServiceCatalog

CONSTRAINT_IDS = tuple(f"C{i}" for i in range(1, 14))


class AllocationError(ValueError):
    """Raised on slot mismatches, invalid indices, or infeasible applies."""


@dataclass(frozen=True, order=True)
class Action:
    """One allocation decision: instance, host node, path, priority level."""

    instance: int
    node: int
    path: int
    priority: int

    def as_tuple(self) -> tuple[int, int, int, int]:
        return (self.instance, self.node, self.path, self.priority)


@dataclass(frozen=True)
class FeasibilityVerdict:
    feasible: bool
    violations: tuple[str, ...] = ()

    def __bool__(self) -> bool:
        return self.feasible


@dataclass(frozen=True)
class Assignment:
    request: Request
    action: Action


@dataclass
class AllocationState:
    """Assignment ledger for one slot plus the node-activation history of the
    completed slots before it (needed for transition energy)."""

    topology: Topology
    catalog: ServiceCatalog
    slot: int = 1
    assignments: dict[int, Assignment] = field(default_factory=dict)
    instance_host: dict[int, int] = field(default_factory=dict)
    instance_load: dict[int, float] = field(default_factory=dict)
    node_placed_capacity: dict[int, float] = field(default_factory=dict)
    node_load: dict[tuple[int, int], float] = field(default_factory=dict)
    device_load: dict[tuple[int, int], float] = field(default_factory=dict)
    link_load: dict[tuple[int, int], float] = field(default_factory=dict)
    device_total: dict[int, float] = field(default_factory=dict)
    link_total: dict[int, float] = field(default_factory=dict)
    activity_history: tuple[frozenset[int], ...] = ()

    @staticmethod
    def initial(topology: Topology, catalog: ServiceCatalog, slot: int = 1) -> "AllocationState":
        return AllocationState(topology=topology, catalog=catalog, slot=slot)

    def copy(self) -> "AllocationState":
        return AllocationState(
            topology=self.topology,
            catalog=self.catalog,
            slot=self.slot,
            assignments=dict(self.assignments),
            instance_host=dict(self.instance_host),
            instance_load=dict(self.instance_load),
            node_placed_capacity=dict(self.node_placed_capacity),
            node_load=dict(self.node_load),
            device_load=dict(self.device_load),
            link_load=dict(self.link_load),
            device_total=dict(self.device_total),
            link_total=dict(self.link_total),
            activity_history=self.activity_history,
        )

    # -- derived flags ------------------------------------------------------

    def active_instances(self) -> frozenset[int]:
        return frozenset(self.instance_host)

    def active_nodes(self) -> frozenset[int]:
        return frozenset(self.instance_host.values())

    def node_is_active(self, v: int) -> bool:
        return v in self.instance_host.values()

    # -- residual capacities (the time-varying quantities fed to the encoder) --

    def residual_node_capacity(self, v: int, k: int) -> float:
        return self.topology.nodes[v].priority_capacity[k] - self.node_load.get((v, k), 0.0)

    def residual_device_bandwidth(self, n: int, k: int) -> float:
        return self.topology.devices[n].priority_bandwidth[k] - self.device_load.get((n, k), 0.0)

    def residual_link_bandwidth(self, l: int, k: int) -> float:
        return self.topology.links[l].priority_bandwidth[k] - self.link_load.get((l, k), 0.0)

    def requests_on_node(self, v: int, k: Optional[int] = None) -> list[Assignment]:
        out = []
        for a in self.assignments.values():
            if a.action.node == v and (k is None or a.action.priority == k):
                out.append(a)
        return out


def _validate_indices(state: AllocationState, request: Request, action: Action) -> None:
    topo, cat = state.topology, state.catalog
    if request.arrival_slot != state.slot:
        raise AllocationError(
            f"request {request.id} belongs to slot {request.arrival_slot}, state is at {state.slot}"
        )
    if not 0 <= action.instance < cat.num_instances:
        raise AllocationError(f"unknown instance {action.instance}")
    if not 0 <= action.node < topo.num_nodes:
        raise AllocationError(f"unknown node {action.node}")
    if not 0 <= action.path < topo.num_paths:
        raise AllocationError(f"unknown path {action.path}")
    if not 0 <= action.priority < topo.priority_levels:
        raise AllocationError(f"unknown priority {action.priority}")


def check_feasibility(state: AllocationState, request: Request, action: Action) -> FeasibilityVerdict:
    """Evaluate assignment (C1-C6), path (C7-C9), and priority (C10-C13) rules
    for adding one action on top of the current ledger.

    Every violated rule is reported; nothing short-circuits.  Capacity rules
    C5/C6/C8/C9 are non-strict, the per-priority rules C11-C13 are strict so
    that every priority queue keeps a positive service margin.
    """
    _validate_indices(state, request, action)
    topo, cat = state.topology, state.catalog
    i, v, p, k = action.as_tuple()
    inst = cat.instances[i]
    path = topo.paths[p]
    violations: list[str] = []

    # C1: at most one instance, and only of the request's own service.
    if request.id in state.assignments or inst.service != request.service:
        violations.append("C1")

    # C3: an active instance has exactly one host.
    if state.instance_host.get(i, v) != v:
        violations.append("C3")

    # C5: instance capacity.
    if state.instance_load.get(i, 0.0) + request.min_capacity > inst.capacity:
        violations.append("C5")

    # C6: node capacity in placed-instance units.
    placed = state.node_placed_capacity.get(v, 0.0)
    if state.instance_host.get(i) != v:
        placed += inst.capacity
    if placed > topo.nodes[v].total_capacity:
        violations.append("C6")

    # C7: the walk starts/ends at the PoA and visits the host's device.
    host_device = topo.attachment[v]
    if path.endpoint_device != request.poa or host_device not in path.device_set:
        violations.append("C7")

    dev_mult = path.device_multiplicity()
    link_mult = path.link_multiplicity()

    # C8/C9: total link and device bandwidth.
    if any(
        state.link_total.get(l, 0.0) + request.min_bandwidth * m > topo.links[l].total_bandwidth
        for l, m in link_mult.items()
    ):
        violations.append("C8")
    if any(
        state.device_total.get(n, 0.0) + request.min_bandwidth * m > topo.devices[n].total_bandwidth
        for n, m in dev_mult.items()
    ):
        violations.append("C9")

    # C10 holds by construction: an action always carries a priority level and
    # rejected requests carry none.

    # C11-C13: strict per-priority headroom.
    if (
        state.node_load.get((v, k), 0.0) + request.min_capacity
        >= topo.nodes[v].priority_capacity[k]
    ):
        violations.append("C11")
    if any(
        state.link_load.get((l, k), 0.0) + request.min_bandwidth * m
        >= topo.links[l].priority_bandwidth[k]
        for l, m in link_mult.items()
    ):
        violations.append("C12")
    if any(
        state.device_load.get((n, k), 0.0) + request.min_bandwidth * m
        >= topo.devices[n].priority_bandwidth[k]
        for n, m in dev_mult.items()
    ):
        violations.append("C13")

    return FeasibilityVerdict(feasible=not violations, violations=tuple(violations))


def apply_action(state: AllocationState, request: Request, action: Action) -> AllocationState:
    """Record a feasible assignment and return the updated ledger.

    Re-checks feasibility and refuses infeasible actions, leaving the input
    state untouched either way.
    """
    verdict = check_feasibility(state, request, action)
    if not verdict.feasible:
        raise AllocationError(
            f"infeasible action for request {request.id}: violates {','.join(verdict.violations)}"
        )
    nxt = state.copy()
    i, v, p, k = action.as_tuple()
    path = state.topology.paths[p]

    nxt.assignments[request.id] = Assignment(request=request, action=action)
    if i not in nxt.instance_host:
        nxt.instance_host[i] = v
        nxt.node_placed_capacity[v] = (
            nxt.node_placed_capacity.get(v, 0.0) + state.catalog.instances[i].capacity
        )
    nxt.instance_load[i] = nxt.instance_load.get(i, 0.0) + request.min_capacity
    nxt.node_load[(v, k)] = nxt.node_load.get((v, k), 0.0) + request.min_capacity
    for n, m in path.device_multiplicity().items():
        add = request.min_bandwidth * m
        nxt.device_load[(n, k)] = nxt.device_load.get((n, k), 0.0) + add
        nxt.device_total[n] = nxt.device_total.get(n, 0.0) + add
    for l, m in path.link_multiplicity().items():
        add = request.min_bandwidth * m
        nxt.link_load[(l, k)] = nxt.link_load.get((l, k), 0.0) + add
        nxt.link_total[l] = nxt.link_total.get(l, 0.0) + add
    return nxt


def advance_slot(state: AllocationState) -> AllocationState:
    """Close the slot: assignments expire, residuals reset, and the node
    activation vector is appended to the history consumed by energy accounting."""
    return AllocationState(
        topology=state.topology,
        catalog=state.catalog,
        slot=state.slot + 1,
        activity_history=state.activity_history + (state.active_nodes(),),
    )


def recompute_loads(state: AllocationState) -> dict[str, dict]:
    """Rebuild every incremental ledger quantity from the raw assignment map.

    Used by audits and property tests to confirm the incremental bookkeeping
    never drifts.
    """
    instance_host: dict[int, int] = {}
    instance_load: dict[int, float] = {}
    node_placed: dict[int, float] = {}
    node_load: dict[tuple[int, int], float] = {}
    device_load: dict[tuple[int, int], float] = {}
    link_load: dict[tuple[int, int], float] = {}
    device_total: dict[int, float] = {}
    link_total: dict[int, float] = {}
    for a in sorted(state.assignments.values(), key=lambda x: x.request.id):
        i, v, p, k = a.action.as_tuple()
        path = state.topology.paths[p]
        if i not in instance_host:
            instance_host[i] = v
            node_placed[v] = node_placed.get(v, 0.0) + state.catalog.instances[i].capacity
        instance_load[i] = instance_load.get(i, 0.0) + a.request.min_capacity
        node_load[(v, k)] = node_load.get((v, k), 0.0) + a.request.min_capacity
        for n, m in path.device_multiplicity().items():
            add = a.request.min_bandwidth * m
            device_load[(n, k)] = device_load.get((n, k), 0.0) + add
            device_total[n] = device_total.get(n, 0.0) + add
        for l, m in path.link_multiplicity().items():
            add = a.request.min_bandwidth * m
            link_load[(l, k)] = link_load.get((l, k), 0.0) + add
            link_total[l] = link_total.get(l, 0.0) + add
    return {
        "instance_host": instance_host,
        "instance_load": instance_load,
        "node_placed_capacity": node_placed,
        "node_load": node_load,
        "device_load": device_load,
        "link_load": link_load,
        "device_total": device_total,
        "link_total": link_total,
    }


def audit_ledger(state: AllocationState) -> list[str]:
    """Re-derive the ledger from scratch and check the standing constraints
    over the whole slot; returns the list of discrepancies (empty when clean)."""
    problems = []
    fresh = recompute_loads(state)
    current = {
        "instance_host": state.instance_host,
        "instance_load": state.instance_load,
        "node_placed_capacity": state.node_placed_capacity,
        "node_load": state.node_load,
        "device_load": state.device_load,
        "link_load": state.link_load,
        "device_total": state.device_total,
        "link_total": state.link_total,
    }
    for name, fresh_map in fresh.items():
        live = {key: val for key, val in current[name].items() if abs(val) > 1e-12 or name == "instance_host"}
        if name == "instance_host":
            live = dict(current[name])
        for key in set(fresh_map) | set(live):
            a, b = fresh_map.get(key, 0.0), live.get(key, 0.0)
            if isinstance(a, float) or isinstance(b, float):
                if abs(float(a) - float(b)) > 1e-9:
                    problems.append(f"{name}[{key}]: recomputed {a} vs ledger {b}")
            elif a != b:
                problems.append(f"{name}[{key}]: recomputed {a} vs ledger {b}")

    topo, cat = state.topology, state.catalog
    for i, load in state.instance_load.items():
        if load > cat.instances[i].capacity:
            problems.append(f"C5 violated on instance {i}")
    for v, placed in state.node_placed_capacity.items():
        if placed > topo.nodes[v].total_capacity:
            problems.append(f"C6 violated on node {v}")
    for (v, k), load in state.node_load.items():
        if load >= topo.nodes[v].priority_capacity[k]:
            problems.append(f"C11 violated on node {v} priority {k}")
    for (l, k), load in state.link_load.items():
        if load >= topo.links[l].priority_bandwidth[k]:
            problems.append(f"C12 violated on link {l} priority {k}")
    for (n, k), load in state.device_load.items():
        if load >= topo.devices[n].priority_bandwidth[k]:
            problems.append(f"C13 violated on device {n} priority {k}")
    for l, load in state.link_total.items():
        if load > topo.links[l].total_bandwidth:
            problems.append(f"C8 violated on link {l}")
    for n, load in state.device_total.items():
        if load > topo.devices[n].total_bandwidth:
            problems.append(f"C9 violated on device {n}")
    return problems
