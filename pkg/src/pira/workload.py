"""Per-slot request generation and service/instance catalogs.

Requests live for exactly one slot: each slot's set competes for resources in
isolation, while compute-node activation history couples slots through
transition energy.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import Mapping, Optional, Sequence

import numpy as np

from .topology import Topology


class WorkloadError(ValueError):
    """Raised for malformed request distributions or catalogs."""


@dataclass(frozen=True)
class Request:
    id: int
    arrival_slot: int
    poa: int
    service: int
    min_capacity: float
    min_bandwidth: float
    max_latency: float
    packet_size: float
    profit: float

    def validate(self) -> None:
        for name in ("min_capacity", "min_bandwidth", "max_latency", "packet_size", "profit"):
            if getattr(self, name) <= 0:
                raise WorkloadError(f"request {self.id}: {name} must be > 0")


@dataclass(frozen=True)
class Instance:
    id: int
    service: int
    capacity: float


@dataclass(frozen=True)
class ServiceCatalog:
    instances: tuple[Instance, ...]

    def __post_init__(self) -> None:
        for idx, inst in enumerate(self.instances):
            if inst.id != idx:
                raise WorkloadError("instance ids must be consecutive from 0")
            if inst.capacity <= 0:
                raise WorkloadError(f"instance {inst.id}: capacity must be > 0")

    @property
    def num_instances(self) -> int:
        return len(self.instances)

    def services(self) -> tuple[int, ...]:
        return tuple(sorted({inst.service for inst in self.instances}))

    def instances_of(self, service: int) -> tuple[int, ...]:
        return tuple(inst.id for inst in self.instances if inst.service == service)

    def to_dict(self) -> dict:
        return {
            "instances": [
                {"id": i.id, "service": i.service, "capacity": i.capacity}
                for i in self.instances
            ]
        }

    @staticmethod
    def from_dict(data: Mapping) -> "ServiceCatalog":
        return ServiceCatalog(
            instances=tuple(
                Instance(id=int(i["id"]), service=int(i["service"]), capacity=float(i["capacity"]))
                for i in data["instances"]
            )
        )


def default_catalog(num_services: int, instances_per_service: int = 1,
                    capacity: float = 20.0) -> ServiceCatalog:
    """One (or more) fixed-capacity instance types per service."""
    instances = []
    for s in range(num_services):
        for _ in range(instances_per_service):
            instances.append(Instance(id=len(instances), service=s, capacity=capacity))
    return ServiceCatalog(instances=tuple(instances))


# -- distributions -------------------------------------------------------------

TABLE_QOS = {
    "min_capacity": {"kind": "uniform_int", "low": 4, "high": 8},
    "min_bandwidth": {"kind": "uniform_int", "low": 2, "high": 10},
    "max_latency": {"kind": "uniform_int", "low": 1, "high": 3},
    "packet_size": {"kind": "fixed", "value": 1},
    "profit": {"kind": "uniform_int", "low": 5, "high": 15},
}


class Distribution:
    """Small closed family of scalar laws described by dicts."""

    def __init__(self, spec: Mapping):
        kind = spec.get("kind")
        if kind == "fixed":
            self.kind, self.value = "fixed", float(spec["value"])
        elif kind == "uniform_int":
            self.kind = "uniform_int"
            self.low, self.high = int(spec["low"]), int(spec["high"])
            if self.high < self.low:
                raise WorkloadError(f"empty support: {spec}")
        elif kind == "uniform":
            self.kind = "uniform"
            self.low, self.high = float(spec["low"]), float(spec["high"])
            if self.high < self.low:
                raise WorkloadError(f"empty support: {spec}")
        elif kind == "poisson":
            self.kind, self.mean_value = "poisson", float(spec["mean"])
            if self.mean_value < 0:
                raise WorkloadError(f"negative mean: {spec}")
        else:
            raise WorkloadError(f"unknown distribution kind: {spec!r}")

    def sample(self, rng: np.random.Generator) -> float:
        if self.kind == "fixed":
            return self.value
        if self.kind == "uniform_int":
            return float(rng.integers(self.low, self.high + 1))
        if self.kind == "uniform":
            return float(rng.uniform(self.low, self.high))
        return float(rng.poisson(self.mean_value))

    def mean(self) -> float:
        if self.kind == "fixed":
            return self.value
        if self.kind in ("uniform_int", "uniform"):
            return (self.low + self.high) / 2.0
        return self.mean_value

    def min_support(self) -> float:
        if self.kind == "fixed":
            return self.value
        if self.kind in ("uniform_int", "uniform"):
            return float(self.low)
        return 0.0


def _positive_dist(spec: Mapping, what: str) -> Distribution:
    dist = Distribution(spec)
    if dist.min_support() <= 0:
        raise WorkloadError(f"{what}: support must be strictly positive, got {spec}")
    return dist


Workload = list  # list of slots; each slot is a list of Request


def slot_counts(per_slot: Mapping, horizon: int, rng: np.random.Generator) -> list[int]:
    """Resolve the per-slot request-count law.

    ``fixed`` draws the same count every slot; ``balanced_total`` spreads an
    exact total as evenly as possible (earlier slots take the remainder);
    ``poisson`` draws independently per slot.
    """
    kind = per_slot.get("kind", "fixed")
    if kind == "fixed":
        return [int(per_slot["value"])] * horizon
    if kind == "balanced_total":
        total = int(per_slot["total"])
        base, rem = divmod(total, horizon)
        return [base + (1 if t < rem else 0) for t in range(horizon)]
    if kind == "poisson":
        return [int(rng.poisson(float(per_slot["mean"]))) for _ in range(horizon)]
    raise WorkloadError(f"unknown per-slot law: {per_slot!r}")


def generate_workload(
    topology: Topology,
    catalog: ServiceCatalog,
    horizon: int,
    per_slot: Mapping,
    qos: Optional[Mapping] = None,
    seed: int = 0,
) -> Workload:
    """Draw one request stream: slots 1..horizon, PoAs uniform over edge
    devices, services uniform over the catalog, QoS fields per the given laws.
    Deterministic for a fixed seed."""
    if horizon < 1:
        raise WorkloadError("horizon must be >= 1")
    edges = topology.edge_devices()
    if not edges:
        raise WorkloadError("topology has no edge devices to serve as PoAs")
    services = catalog.services()
    if not services:
        raise WorkloadError("catalog is empty")

    qos = dict(TABLE_QOS if qos is None else qos)
    dists = {name: _positive_dist(spec, name) for name, spec in qos.items()}

    rng = np.random.default_rng(seed)
    counts = slot_counts(per_slot, horizon, rng)

    slots: Workload = []
    next_id = 0
    for t in range(1, horizon + 1):
        requests = []
        for _ in range(counts[t - 1]):
            requests.append(
                Request(
                    id=next_id,
                    arrival_slot=t,
                    poa=int(edges[rng.integers(0, len(edges))]),
                    service=int(services[rng.integers(0, len(services))]),
                    min_capacity=dists["min_capacity"].sample(rng),
                    min_bandwidth=dists["min_bandwidth"].sample(rng),
                    max_latency=dists["max_latency"].sample(rng),
                    packet_size=dists["packet_size"].sample(rng),
                    profit=dists["profit"].sample(rng),
                )
            )
            requests[-1].validate()
            next_id += 1
        slots.append(requests)
    check_serviceable(slots, catalog)
    return slots


def check_serviceable(workload: Workload, catalog: ServiceCatalog) -> None:
    """Every request must match at least one catalog instance type."""
    known = set(catalog.services())
    for slot in workload:
        for r in slot:
            if r.service not in known:
                raise WorkloadError(f"request {r.id}: no instance provides service {r.service}")


def total_requests(workload: Workload) -> int:
    return sum(len(slot) for slot in workload)


# -- serialization ---------------------------------------------------------------

def workload_to_dict(workload: Workload) -> list:
    return [
        [
            {
                "id": r.id,
                "arrival_slot": r.arrival_slot,
                "poa": r.poa,
                "service": r.service,
                "min_capacity": r.min_capacity,
                "min_bandwidth": r.min_bandwidth,
                "max_latency": r.max_latency,
                "packet_size": r.packet_size,
                "profit": r.profit,
            }
            for r in slot
        ]
        for slot in workload
    ]


def workload_from_dict(data: Sequence) -> Workload:
    out: Workload = []
    for slot in data:
        out.append(
            [
                Request(
                    id=int(r["id"]),
                    arrival_slot=int(r["arrival_slot"]),
                    poa=int(r["poa"]),
                    service=int(r["service"]),
                    min_capacity=float(r["min_capacity"]),
                    min_bandwidth=float(r["min_bandwidth"]),
                    max_latency=float(r["max_latency"]),
                    packet_size=float(r["packet_size"]),
                    profit=float(r["profit"]),
                )
                for r in slot
            ]
        )
    return out


def workload_to_json(workload: Workload) -> str:
    return json.dumps(workload_to_dict(workload), sort_keys=True, separators=(",", ":"))


def workload_from_json(text: str) -> Workload:
    return workload_from_dict(json.loads(text))
