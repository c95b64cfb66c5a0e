"""Energy accounting over finished allocation traces and the profit-minus-
energy objective.

Network devices spend energy per transmitted bandwidth unit, counted once per
walk occurrence.  Compute nodes spend energy per served capacity unit plus a
fixed charge per idle/operating flip between consecutive slots, with every
node idle before the first slot.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

from .allocation import Action, Assignment
from .topology import Topology
from .workload import Request


@dataclass(frozen=True)
class SlotRecord:
    slot: int
    assignments: tuple[Assignment, ...]
    activation: frozenset[int]
    rejected: tuple[int, ...] = ()


@dataclass(frozen=True)
class Trace:
    slots: tuple[SlotRecord, ...]

    @property
    def horizon(self) -> int:
        return len(self.slots)

    def supported_count(self) -> int:
        return sum(len(s.assignments) for s in self.slots)

    def total_profit(self) -> float:
        return sum(a.request.profit for s in self.slots for a in s.assignments)

    def activation_sequence(self, num_nodes: int) -> list[frozenset[int]]:
        return [s.activation for s in self.slots]


def make_slot_record(slot: int, assignments: Iterable[Assignment],
                     rejected: Iterable[int] = ()) -> SlotRecord:
    """Derive the activation vector from the assignments (a node operates iff
    it hosts a serving instance)."""
    assignments = tuple(sorted(assignments, key=lambda a: a.request.id))
    active = frozenset(a.action.node for a in assignments)
    return SlotRecord(slot=slot, assignments=assignments, activation=active,
                      rejected=tuple(sorted(rejected)))


def transition_count(activity: Sequence[int]) -> int:
    """Flips of one node's 0/1 activity sequence with an implicit leading 0.

    Equals the number of adjacent-pair XORs of the 0-prefixed sequence; the
    final state is never charged for a trailing shutdown.
    """
    count = 0
    prev = 0
    for a in activity:
        a = int(bool(a))
        count += prev ^ a
        prev = a
    return count


@dataclass(frozen=True)
class EnergyLedger:
    device_energy: dict[int, float]
    node_service_energy: dict[int, float]
    node_transition_energy: dict[int, float]
    transitions: dict[int, int]

    def total_device(self) -> float:
        return sum(self.device_energy.values())

    def total_node(self) -> float:
        return sum(self.node_service_energy.values()) + sum(self.node_transition_energy.values())

    def total(self) -> float:
        return self.total_device() + self.total_node()


def device_energy(trace: Trace, topology: Topology) -> dict[int, float]:
    """Per-device transmission energy: unit energy times the bandwidth demand
    of every request whose walk visits the device, per visit."""
    out = {n: 0.0 for n in range(topology.num_devices)}
    for record in trace.slots:
        for a in record.assignments:
            path = topology.paths[a.action.path]
            for n, mult in path.device_multiplicity().items():
                out[n] += topology.devices[n].energy_per_unit * a.request.min_bandwidth * mult
    return out


def node_energy(trace: Trace, topology: Topology) -> tuple[dict[int, float], dict[int, float], dict[int, int]]:
    """Per-node (service energy, transition energy, transition count)."""
    service = {v: 0.0 for v in range(topology.num_nodes)}
    for record in trace.slots:
        for a in record.assignments:
            v = a.action.node
            service[v] += topology.nodes[v].energy_per_unit * a.request.min_capacity
    transitions = {}
    transition = {}
    for v in range(topology.num_nodes):
        activity = [1 if v in record.activation else 0 for record in trace.slots]
        count = transition_count(activity)
        transitions[v] = count
        transition[v] = topology.nodes[v].energy_per_transition * count
    return service, transition, transitions


def energy_ledger(trace: Trace, topology: Topology) -> EnergyLedger:
    service, transition, transitions = node_energy(trace, topology)
    return EnergyLedger(
        device_energy=device_energy(trace, topology),
        node_service_energy=service,
        node_transition_energy=transition,
        transitions=transitions,
    )


def objective_value(trace: Trace, topology: Topology, alpha: float) -> float:
    """Total accepted profit minus alpha times total energy."""
    if alpha <= 0:
        raise ValueError("alpha must be > 0")
    ledger = energy_ledger(trace, topology)
    return trace.total_profit() - alpha * ledger.total()


def summarize(trace: Trace, topology: Topology, alpha: float) -> dict:
    """The quantities tracked by the comparison sweeps."""
    ledger = energy_ledger(trace, topology)
    supported = trace.supported_count()
    total_energy = ledger.total()
    return {
        "total_profit": trace.total_profit(),
        "total_energy": total_energy,
        "objective": trace.total_profit() - alpha * total_energy,
        "supported": supported,
        "mean_energy_per_supported": (total_energy / supported) if supported else 0.0,
    }
