"""Exact desk-scale solver: exhaustive per-slot assignment search combined with
dynamic programming over node-activation vectors across slots.

Within a slot, profit and service/transmission energy are fully determined by
the joint assignment; activation transition charges couple consecutive slots
but depend only on which compute nodes operate.  The DP state is therefore the
activation vector, and for each reachable vector the per-slot search keeps the
best joint assignment.  Instances above the configured size bounds are refused
with an estimate rather than approximated.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .allocation import (
    Action,
    AllocationState,
    Assignment,
    advance_slot,
    apply_action,
    check_feasibility,
)
from .energy import SlotRecord, Trace, make_slot_record, objective_value
from .latency import deadline_violations
from .topology import Topology
from .workload import Request, ServiceCatalog, Workload


class OracleSizeError(ValueError):
    """Instance exceeds the configured exact-search bounds."""


@dataclass(frozen=True)
class OracleLimits:
    max_requests_per_slot: int = 6
    max_actions: int = 512
    max_nodes: int = 4
    max_leaf_estimate: float = 5e6


@dataclass(frozen=True)
class SlotSolution:
    actions: dict[int, Optional[Action]]
    profit: float
    service_energy: float
    transmission_energy: float
    activation: frozenset[int]
    tie_key: tuple

    def value(self, alpha: float) -> float:
        return self.profit - alpha * (self.service_energy + self.transmission_energy)


@dataclass(frozen=True)
class HorizonSolution:
    trace: Trace
    objective: float


def candidate_actions(topology: Topology, catalog: ServiceCatalog, request: Request) -> list[Action]:
    """Actions that can possibly serve the request: a matching-service
    instance, any host, a walk from the request's PoA visiting the host's
    device, any priority.  Deterministically ordered."""
    out = []
    for i in catalog.instances_of(request.service):
        for v in range(topology.num_nodes):
            for p in topology.candidate_paths(request.poa, topology.attachment[v]):
                for k in range(topology.priority_levels):
                    out.append(Action(instance=i, node=v, path=p, priority=k))
    return out


def _action_space_size(topology: Topology, catalog: ServiceCatalog) -> int:
    return (
        catalog.num_instances
        * topology.num_nodes
        * topology.num_paths
        * topology.priority_levels
    )


def _check_slot_bounds(topology: Topology, catalog: ServiceCatalog,
                       requests: Sequence[Request], limits: OracleLimits,
                       candidates: Sequence[Sequence[Action]]) -> None:
    if len(requests) > limits.max_requests_per_slot:
        raise OracleSizeError(
            f"slot has {len(requests)} requests, bound is {limits.max_requests_per_slot}"
        )
    space = _action_space_size(topology, catalog)
    if space > limits.max_actions:
        raise OracleSizeError(f"action space has {space} actions, bound is {limits.max_actions}")
    estimate = 1.0
    for cands in candidates:
        estimate *= 1 + len(cands)
    if estimate > limits.max_leaf_estimate:
        raise OracleSizeError(
            f"joint search would visit up to {estimate:.2e} assignments, "
            f"bound is {limits.max_leaf_estimate:.2e}"
        )


def _reject_key() -> tuple:
    return (1,)


def _accept_key(action: Action) -> tuple:
    return (0,) + action.as_tuple()


def _enumerate_slot(
    topology: Topology,
    catalog: ServiceCatalog,
    requests: Sequence[Request],
    slot: int,
    on_leaf: Callable[[dict[int, Optional[Action]], float, float, float, frozenset[int], tuple], None],
    prune: Optional[Callable[[float, frozenset[int]], bool]] = None,
    history: tuple[frozenset[int], ...] = (),
    limits: OracleLimits = OracleLimits(),
) -> None:
    """Depth-first walk over all feasible joint assignments of one slot.

    Requests are decided in id order; each may be rejected or take any action
    that passes the assignment rules and keeps every co-resident request
    within its deadline (latency terms only grow as requests join queues, so
    partial violations prune soundly).  ``on_leaf`` receives the assignment
    map, profit, service energy, transmission energy, activation vector, and
    lexicographic tie key of every complete feasible assignment.
    """
    requests = sorted(requests, key=lambda r: r.id)
    cands = [candidate_actions(topology, catalog, r) for r in requests]
    _check_slot_bounds(topology, catalog, requests, limits, cands)

    remaining_profit = [0.0] * (len(requests) + 1)
    for idx in range(len(requests) - 1, -1, -1):
        remaining_profit[idx] = remaining_profit[idx + 1] + requests[idx].profit

    state0 = AllocationState.initial(topology, catalog, slot=slot)
    state0.activity_history = history

    def recurse(idx: int, state: AllocationState, profit: float, service_e: float,
                trans_e: float, key: tuple) -> None:
        if prune is not None and prune(profit + remaining_profit[idx], state.active_nodes()):
            return
        if idx == len(requests):
            actions = {r.id: (state.assignments[r.id].action if r.id in state.assignments else None)
                       for r in requests}
            on_leaf(actions, profit, service_e, trans_e, state.active_nodes(), key)
            return
        r = requests[idx]
        for action in cands[idx]:
            verdict = check_feasibility(state, r, action)
            if not verdict.feasible:
                continue
            nxt = apply_action(state, r, action)
            if deadline_violations(nxt):
                continue
            node = topology.nodes[action.node]
            recurse(
                idx + 1,
                nxt,
                profit + r.profit,
                service_e + node.energy_per_unit * r.min_capacity,
                trans_e + r.min_bandwidth * topology.path_transmission_energy(action.path),
                key + _accept_key(action),
            )
        recurse(idx + 1, state, profit, service_e, trans_e, key + _reject_key())

    recurse(0, state0, 0.0, 0.0, 0.0, ())


def solve_slot(
    topology: Topology,
    catalog: ServiceCatalog,
    requests: Sequence[Request],
    alpha: float,
    slot: int = 1,
    limits: OracleLimits = OracleLimits(),
) -> dict[frozenset[int], SlotSolution]:
    """Best joint assignment per reachable activation vector.

    The per-slot value is profit minus alpha times service and transmission
    energy; transition charges are settled by the cross-slot DP.  Exhaustive,
    hence exact; equal values break ties toward the lexicographically smallest
    assignment.  A branch whose optimistic bound (current value plus all
    remaining profit) cannot beat the stored value of any activation superset
    is cut, which is sound because activation only grows along a branch.
    """
    best: dict[frozenset[int], tuple[float, tuple, SlotSolution]] = {}
    all_nodes = frozenset(range(topology.num_nodes))

    def prune(optimistic_profit: float, active: frozenset[int]) -> bool:
        free = sorted(all_nodes - active)
        total = 2 ** len(free)
        if total > 16:
            return False
        for bits in range(total):
            vec = set(active)
            for pos, v in enumerate(free):
                if bits >> pos & 1:
                    vec.add(v)
            entry = best.get(frozenset(vec))
            if entry is None or entry[0] <= optimistic_profit:
                return False
        return True

    def on_leaf(actions, profit, service_e, trans_e, activation, key):
        value = profit - alpha * (service_e + trans_e)
        entry = best.get(activation)
        if entry is None or value > entry[0] or (value == entry[0] and key < entry[1]):
            best[activation] = (
                value,
                key,
                SlotSolution(
                    actions=actions,
                    profit=profit,
                    service_energy=service_e,
                    transmission_energy=trans_e,
                    activation=activation,
                    tie_key=key,
                ),
            )

    _enumerate_slot(topology, catalog, requests, slot, on_leaf, prune=prune, limits=limits)
    return {vec: entry[2] for vec, entry in best.items()}


def _transition_charge(topology: Topology, before: frozenset[int], after: frozenset[int]) -> float:
    return sum(topology.nodes[v].energy_per_transition for v in before ^ after)


def solve_horizon(
    topology: Topology,
    catalog: ServiceCatalog,
    workload: Workload,
    alpha: float,
    limits: OracleLimits = OracleLimits(),
) -> HorizonSolution:
    """Exact optimum over the horizon.

    Forward DP over slots with the activation vector as state; the value of a
    state accumulates per-slot values plus transition charges between
    consecutive vectors, starting from the all-idle vector.  The reported
    objective is recomputed from the returned trace with the standard energy
    accounting.
    """
    if alpha <= 0:
        raise ValueError("alpha must be > 0")
    if topology.num_nodes > limits.max_nodes:
        raise OracleSizeError(
            f"topology has {topology.num_nodes} compute nodes, DP bound is {limits.max_nodes}"
        )

    # value, lexicographic trace key, slot records along the best path
    table: dict[frozenset[int], tuple[float, tuple, tuple[SlotRecord, ...]]] = {
        frozenset(): (0.0, (), ())
    }
    for t, slot_requests in enumerate(workload, start=1):
        by_id = {r.id: r for r in slot_requests}
        solutions = solve_slot(topology, catalog, slot_requests, alpha, slot=t, limits=limits)
        # reject-all is always feasible, so solutions is never empty
        new_table: dict[frozenset[int], tuple[float, tuple, tuple[SlotRecord, ...]]] = {}
        for vec, sol in sorted(solutions.items(), key=lambda kv: sorted(kv[0])):
            record = make_slot_record(
                slot=t,
                assignments=[
                    Assignment(request=by_id[rid], action=act)
                    for rid, act in sol.actions.items()
                    if act is not None
                ],
                rejected=[rid for rid, act in sol.actions.items() if act is None],
            )
            for prev_vec, (prev_value, prev_key, prev_records) in table.items():
                value = prev_value - alpha * _transition_charge(topology, prev_vec, vec) + sol.value(alpha)
                key = prev_key + sol.tie_key
                entry = new_table.get(vec)
                if entry is None or value > entry[0] or (value == entry[0] and key < entry[1]):
                    new_table[vec] = (value, key, prev_records + (record,))
        table = new_table

    best_entry = None
    for value, key, records in table.values():
        if best_entry is None or value > best_entry[0] or (value == best_entry[0] and key < best_entry[1]):
            best_entry = (value, key, records)
    assert best_entry is not None
    trace = Trace(slots=best_entry[2])
    objective = objective_value(trace, topology, alpha)
    return HorizonSolution(trace=trace, objective=objective)


def exhaustive_horizon(
    topology: Topology,
    catalog: ServiceCatalog,
    workload: Workload,
    alpha: float,
    max_combinations: float = 2e5,
    limits: OracleLimits = OracleLimits(),
) -> HorizonSolution:
    """DP-free cross-check: materialize every feasible joint assignment of
    every slot, take the cartesian product across slots, and score each full
    trace with the standard energy accounting.  Refuses products above
    ``max_combinations``."""
    per_slot: list[list[SlotRecord]] = []
    for t, slot_requests in enumerate(workload, start=1):
        by_id = {r.id: r for r in slot_requests}
        leaves: list[tuple[tuple, SlotRecord]] = []

        def on_leaf(actions, profit, service_e, trans_e, activation, key):
            record = make_slot_record(
                slot=t,
                assignments=[
                    Assignment(request=by_id[rid], action=act)
                    for rid, act in actions.items()
                    if act is not None
                ],
                rejected=[rid for rid, act in actions.items() if act is None],
            )
            leaves.append((key, record))

        _enumerate_slot(topology, catalog, slot_requests, t, on_leaf, limits=limits)
        leaves.sort(key=lambda kv: kv[0])
        per_slot.append([record for _, record in leaves])

    total = math.prod(len(records) for records in per_slot)
    if total > max_combinations:
        raise OracleSizeError(
            f"exhaustive cross-check would score {total:.2e} traces, bound is {max_combinations:.2e}"
        )

    best: Optional[tuple[float, tuple, Trace]] = None
    indices = [0] * len(per_slot)
    while True:
        records = tuple(per_slot[t][indices[t]] for t in range(len(per_slot)))
        trace = Trace(slots=records)
        value = objective_value(trace, topology, alpha)
        key = tuple(indices)
        if best is None or value > best[0] or (value == best[0] and key < best[1]):
            best = (value, key, trace)
        pos = len(indices) - 1
        while pos >= 0:
            indices[pos] += 1
            if indices[pos] < len(per_slot[pos]):
                break
            indices[pos] = 0
            pos -= 1
        if pos < 0:
            break
    assert best is not None
    return HorizonSolution(trace=best[2], objective=best[0])


def random_feasible_trace(
    topology: Topology,
    catalog: ServiceCatalog,
    workload: Workload,
    rng: np.random.Generator,
    tries_per_request: int = 4,
) -> Trace:
    """Sample one feasible trace: per request, try a few random candidate
    actions and keep the first that passes the assignment and deadline rules;
    otherwise reject the request.  Used as the oracle's optimality foil."""
    records = []
    state = AllocationState.initial(topology, catalog, slot=1)
    cand_cache: dict[int, list[Action]] = {}
    for t, slot_requests in enumerate(workload, start=1):
        accepted = []
        rejected = []
        order = [slot_requests[j] for j in rng.permutation(len(slot_requests))]
        for r in order:
            cands = cand_cache.get(r.id)
            if cands is None:
                cands = candidate_actions(topology, catalog, r)
                cand_cache[r.id] = cands
            placed = False
            if cands:
                for _ in range(tries_per_request):
                    action = cands[int(rng.integers(0, len(cands)))]
                    if not check_feasibility(state, r, action).feasible:
                        continue
                    nxt = apply_action(state, r, action)
                    if deadline_violations(nxt):
                        continue
                    state = nxt
                    accepted.append(Assignment(request=r, action=action))
                    placed = True
                    break
            if not placed:
                rejected.append(r.id)
        records.append(make_slot_record(slot=t, assignments=accepted, rejected=rejected))
        state = advance_slot(state)
    return Trace(slots=tuple(records))
