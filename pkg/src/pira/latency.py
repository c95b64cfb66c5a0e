"""Per-hop M/M/1 latencies and end-to-end deadline checks.

Each (resource, priority) pair is an isolated M/M/1 queue: the mean sojourn
time is 1/(mu - lambda), with the service rate mu given by the resource's
priority partition and the arrival rate lambda by the bandwidth (or capacity)
demands of the co-resident requests at that priority.  Device arrival rates
count each walk occurrence.  Link forwarding costs packet_size / partition per
traversal.  The end-to-end total weights each per-visit term by its walk
multiplicity; a request meets its deadline when the total stays within its
latency bound.
"""

from __future__ import annotations

from dataclasses import dataclass

from .allocation import (
    Action,
    AllocationState,
    FeasibilityVerdict,
    apply_action,
    check_feasibility,
)
from .workload import Request


class UnstableQueueError(ArithmeticError):
    """A priority queue is loaded at or beyond its service rate."""


@dataclass(frozen=True)
class LatencyBreakdown:
    """Walk-weighted latency terms of one assigned request.

    ``device_terms`` and ``link_terms`` map (resource id, priority) to the
    aggregate contribution (per-visit value times walk multiplicity);
    resources off the walk are simply absent, i.e. exactly zero.
    """

    request_id: int
    device_terms: dict[tuple[int, int], float]
    node_term: float
    link_terms: dict[tuple[int, int], float]
    total: float
    deadline: float

    @property
    def meets_deadline(self) -> bool:
        return self.total <= self.deadline and bool(
            self.device_terms or self.link_terms or self.node_term
        )


def device_latency(state: AllocationState, request: Request, device: int, k: int) -> float:
    """Per-visit queueing latency of the request at one network device and
    priority level; zero when the request's walk does not touch the device at
    that priority."""
    assignment = state.assignments.get(request.id)
    if assignment is None:
        return 0.0
    action = assignment.action
    if action.priority != k:
        return 0.0
    path = state.topology.paths[action.path]
    if device not in path.device_set:
        return 0.0
    mu = state.topology.devices[device].priority_bandwidth[k]
    lam = state.device_load.get((device, k), 0.0)
    if lam >= mu:
        raise UnstableQueueError(f"device {device} priority {k}: load {lam} >= rate {mu}")
    return state.topology.latency_scale / (mu - lam)


def node_latency(state: AllocationState, request: Request, node: int, k: int) -> float:
    """Queueing latency at a compute node; zero unless the request is served on
    that node at that priority.

    The arrival rate sums same-priority capacity demands on the node; the
    topology's `c15_aggregate_load` switch reproduces the alternative reading
    that aggregates all priorities into each queue's arrival rate.
    """
    assignment = state.assignments.get(request.id)
    if assignment is None:
        return 0.0
    action = assignment.action
    if action.priority != k or action.node != node:
        return 0.0
    mu = state.topology.nodes[node].priority_capacity[k]
    if state.topology.c15_aggregate_load:
        lam = sum(
            a.request.min_capacity for a in state.assignments.values() if a.action.node == node
        )
    else:
        lam = state.node_load.get((node, k), 0.0)
    if lam >= mu:
        raise UnstableQueueError(f"node {node} priority {k}: load {lam} >= rate {mu}")
    return state.topology.latency_scale / (mu - lam)


def link_latency(state: AllocationState, request: Request, link: int, k: int) -> float:
    """Per-traversal forwarding latency over one link; zero when the link is
    off the request's path or the priority differs."""
    assignment = state.assignments.get(request.id)
    if assignment is None:
        return 0.0
    action = assignment.action
    if action.priority != k:
        return 0.0
    path = state.topology.paths[action.path]
    if link not in path.link_set:
        return 0.0
    rate = state.topology.links[link].priority_bandwidth[k]
    return state.topology.latency_scale * request.packet_size / rate


def e2e_latency(state: AllocationState, request: Request) -> LatencyBreakdown:
    """Sum the request's walk: every device visit, every link traversal, and
    the compute-node term.  Unassigned requests get an all-zero breakdown that
    never meets the deadline (no service)."""
    assignment = state.assignments.get(request.id)
    if assignment is None:
        return LatencyBreakdown(
            request_id=request.id,
            device_terms={},
            node_term=0.0,
            link_terms={},
            total=0.0,
            deadline=request.max_latency,
        )
    action = assignment.action
    k = action.priority
    path = state.topology.paths[action.path]

    device_terms = {}
    for n, mult in path.device_multiplicity().items():
        device_terms[(n, k)] = mult * device_latency(state, request, n, k)
    link_terms = {}
    for l, mult in path.link_multiplicity().items():
        link_terms[(l, k)] = mult * link_latency(state, request, l, k)
    node_term = node_latency(state, request, action.node, k)

    total = sum(device_terms.values()) + node_term + sum(link_terms.values())
    return LatencyBreakdown(
        request_id=request.id,
        device_terms=device_terms,
        node_term=node_term,
        link_terms=link_terms,
        total=total,
        deadline=request.max_latency,
    )


def deadline_violations(state: AllocationState) -> list[int]:
    """Ids of assigned requests whose end-to-end latency exceeds their bound."""
    bad = []
    for rid in sorted(state.assignments):
        breakdown = e2e_latency(state, state.assignments[rid].request)
        if breakdown.total > breakdown.deadline:
            bad.append(rid)
    return bad


def full_feasibility(state: AllocationState, request: Request, action: Action) -> FeasibilityVerdict:
    """Assignment rules plus the deadline rule, prospectively.

    Applies the action on a scratch copy and re-checks every co-resident
    request's end-to-end latency, since a new arrival lengthens the queues it
    joins; any resulting deadline miss (the new request's or a neighbor's) is
    reported as a C18 violation.
    """
    verdict = check_feasibility(state, request, action)
    if not verdict.feasible:
        return verdict
    prospective = apply_action(state, request, action)
    if deadline_violations(prospective):
        return FeasibilityVerdict(feasible=False, violations=("C18",))
    return verdict


def audit_trace(topology, catalog, trace) -> dict[int, FeasibilityVerdict]:
    """Independent end-of-run audit: replay every slot of a finished trace and
    verdict each supported request against the assignment and deadline rules."""
    from .allocation import AllocationState as _State
    from .allocation import advance_slot as _advance

    verdicts: dict[int, FeasibilityVerdict] = {}
    state = _State.initial(topology, catalog, slot=1)
    for record in trace.slots:
        while state.slot < record.slot:
            state = _advance(state)
        for a in sorted(record.assignments, key=lambda x: x.request.id):
            verdict = check_feasibility(state, a.request, a.action)
            verdicts[a.request.id] = verdict
            if verdict.feasible:
                state = apply_action(state, a.request, a.action)
        over = set(deadline_violations(state))
        for a in record.assignments:
            rid = a.request.id
            if rid in over:
                base = verdicts[rid]
                verdicts[rid] = FeasibilityVerdict(False, base.violations + ("C18",))
        state = _advance(state)
    return verdicts


def audit_allocations(state: AllocationState) -> dict[int, FeasibilityVerdict]:
    """Stand-alone verdict per assigned request on the finished slot: the
    assignment rules re-checked against a replay of the ledger plus the
    deadline rule on the full state."""
    from .allocation import AllocationState as _State  # local alias for clarity

    verdicts: dict[int, FeasibilityVerdict] = {}
    replay = _State.initial(state.topology, state.catalog, slot=state.slot)
    replay.activity_history = state.activity_history
    for rid in sorted(state.assignments):
        a = state.assignments[rid]
        v = check_feasibility(replay, a.request, a.action)
        verdicts[rid] = v
        if v.feasible:
            replay = apply_action(replay, a.request, a.action)
    over = set(deadline_violations(state))
    for rid in sorted(state.assignments):
        base = verdicts[rid]
        if rid in over:
            verdicts[rid] = FeasibilityVerdict(
                feasible=False, violations=base.violations + ("C18",)
            )
    return verdicts
