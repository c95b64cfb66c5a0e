"""Integrated compute/network graph: devices, compute nodes, links, candidate
paths, priority partitions, and energy coefficients.

The graph is immutable after construction and safe to share read-only.  A
candidate path is a loop-free out-and-back walk: it starts at an edge device,
follows a simple device route to a target device, and returns along the same
route.  Walk accounting therefore gives multiplicity 2 to the endpoint and
every intermediate device, 1 to the turn device, and 2 to every link of the
out leg.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Optional, Sequence

import networkx as nx
import numpy as np


class TopologyError(ValueError):
    """Raised when a topology description violates a structural invariant."""


def partition_priorities(
    total: float, levels: int, weights: Optional[Sequence[float]] = None
) -> tuple[float, ...]:
    """Split a total capacity into per-priority shares proportional to weights.

    Defaults to weights 2**(levels-k-1), so priority 0 (highest) receives the
    largest share.  Weights must be positive and non-increasing; the shares sum
    to the total exactly up to floating point.
    """
    if levels < 1:
        raise TopologyError("at least one priority level is required")
    if weights is None:
        weights = [float(2 ** (levels - k - 1)) for k in range(levels)]
    weights = [float(w) for w in weights]
    if len(weights) != levels:
        raise TopologyError(f"expected {levels} weights, got {len(weights)}")
    if any(w <= 0 for w in weights):
        raise TopologyError("priority weights must be positive")
    if any(a < b for a, b in zip(weights, weights[1:])):
        raise TopologyError("priority weights must be non-increasing")
    scale = float(total) / sum(weights)
    return tuple(w * scale for w in weights)


@dataclass(frozen=True)
class NetworkDevice:
    id: int
    total_bandwidth: float
    priority_bandwidth: tuple[float, ...]
    energy_per_unit: float
    is_edge: bool = False

    def validate(self, levels: int) -> None:
        if len(self.priority_bandwidth) != levels:
            raise TopologyError(f"device {self.id}: expected {levels} priority shares")
        _check_partition(self.priority_bandwidth, self.total_bandwidth, f"device {self.id}")
        if self.energy_per_unit <= 0:
            raise TopologyError(f"device {self.id}: energy_per_unit must be > 0")


@dataclass(frozen=True)
class Link:
    id: int
    endpoints: tuple[int, int]
    total_bandwidth: float
    priority_bandwidth: tuple[float, ...]

    def validate(self, levels: int, num_devices: int) -> None:
        n, m = self.endpoints
        for d in (n, m):
            if not 0 <= d < num_devices:
                raise TopologyError(f"link {self.id}: unknown device {d}")
        if n == m:
            raise TopologyError(f"link {self.id}: self-loops are not allowed")
        if len(self.priority_bandwidth) != levels:
            raise TopologyError(f"link {self.id}: expected {levels} priority shares")
        _check_partition(self.priority_bandwidth, self.total_bandwidth, f"link {self.id}")


@dataclass(frozen=True)
class ComputeNode:
    id: int
    total_capacity: float
    priority_capacity: tuple[float, ...]
    energy_per_unit: float
    energy_per_transition: float

    def validate(self, levels: int) -> None:
        if len(self.priority_capacity) != levels:
            raise TopologyError(f"node {self.id}: expected {levels} priority shares")
        _check_partition(self.priority_capacity, self.total_capacity, f"node {self.id}")
        if self.energy_per_unit <= 0:
            raise TopologyError(f"node {self.id}: energy_per_unit must be > 0")
        if self.energy_per_transition < 0:
            raise TopologyError(f"node {self.id}: energy_per_transition must be >= 0")


def _check_partition(shares: Sequence[float], total: float, what: str) -> None:
    if any(s < 0 for s in shares):
        raise TopologyError(f"{what}: negative priority share")
    if sum(shares) > total * (1 + 1e-12):
        raise TopologyError(f"{what}: priority shares exceed total capacity")
    if any(a < b - 1e-12 for a, b in zip(shares, shares[1:])):
        raise TopologyError(f"{what}: priority shares must be non-increasing")


@dataclass(frozen=True)
class Path:
    """Out-and-back walk stored as its out leg.

    ``devices`` is the simple device route from the endpoint (the walk's start
    and end) to the turn device; ``links`` are the out-leg link ids, traversed
    twice each by the full walk.
    """

    id: int
    devices: tuple[int, ...]
    links: tuple[int, ...]

    @property
    def endpoint_device(self) -> int:
        return self.devices[0]

    @property
    def reachable_node_device(self) -> int:
        return self.devices[-1]

    @property
    def device_set(self) -> frozenset[int]:
        return frozenset(self.devices)

    @property
    def link_set(self) -> frozenset[int]:
        return frozenset(self.links)

    def device_multiplicity(self) -> dict[int, int]:
        """Walk-occurrence count per device: endpoint and intermediates twice,
        turn device once."""
        mult = {d: 2 for d in self.devices}
        mult[self.devices[-1]] = 1
        return mult

    def link_multiplicity(self) -> dict[int, int]:
        return {l: 2 for l in self.links}

    def walk_devices(self) -> tuple[int, ...]:
        """Full closed walk as a device-visit sequence."""
        return self.devices + tuple(reversed(self.devices[:-1]))

    def validate(self, topology: "Topology") -> None:
        if not self.links:
            raise TopologyError(f"path {self.id}: link set must be non-empty")
        if len(self.devices) != len(self.links) + 1:
            raise TopologyError(f"path {self.id}: device/link count mismatch")
        if len(set(self.devices)) != len(self.devices):
            raise TopologyError(f"path {self.id}: out leg must be loop-free")
        for pos, lid in enumerate(self.links):
            if not 0 <= lid < len(topology.links):
                raise TopologyError(f"path {self.id}: unknown link {lid}")
            ends = set(topology.links[lid].endpoints)
            if ends != {self.devices[pos], self.devices[pos + 1]}:
                raise TopologyError(f"path {self.id}: link {lid} does not join consecutive devices")
        walk = self.walk_devices()
        if walk[0] != walk[-1]:
            raise TopologyError(f"path {self.id}: walk must return to its endpoint")


@dataclass(frozen=True)
class Topology:
    devices: tuple[NetworkDevice, ...]
    nodes: tuple[ComputeNode, ...]
    links: tuple[Link, ...]
    paths: tuple[Path, ...]
    attachment: dict[int, int]
    priority_levels: int
    latency_scale: float = 1.0
    c15_aggregate_load: bool = False
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self) -> None:
        if self.priority_levels < 1:
            raise TopologyError("priority_levels must be >= 1")
        if not self.devices:
            raise TopologyError("at least one network device is required")
        for idx, dev in enumerate(self.devices):
            if dev.id != idx:
                raise TopologyError("device ids must be consecutive from 0")
            dev.validate(self.priority_levels)
        for idx, node in enumerate(self.nodes):
            if node.id != idx:
                raise TopologyError("node ids must be consecutive from 0")
            node.validate(self.priority_levels)
        for idx, link in enumerate(self.links):
            if link.id != idx:
                raise TopologyError("link ids must be consecutive from 0")
            link.validate(self.priority_levels, len(self.devices))
        for node in self.nodes:
            if node.id not in self.attachment:
                raise TopologyError(f"node {node.id}: missing attachment")
        for v, n in self.attachment.items():
            if not 0 <= v < len(self.nodes):
                raise TopologyError(f"attachment references unknown node {v}")
            if not 0 <= n < len(self.devices):
                raise TopologyError(f"attachment of node {v} references unknown device {n}")
        for idx, path in enumerate(self.paths):
            if path.id != idx:
                raise TopologyError("path ids must be consecutive from 0")
            path.validate(self)
        if self.latency_scale <= 0:
            raise TopologyError("latency_scale must be > 0")

    # -- derived lookups (computed once, topology is immutable) --------------

    @property
    def num_devices(self) -> int:
        return len(self.devices)

    @property
    def num_nodes(self) -> int:
        return len(self.nodes)

    @property
    def num_links(self) -> int:
        return len(self.links)

    @property
    def num_paths(self) -> int:
        return len(self.paths)

    def edge_devices(self) -> tuple[int, ...]:
        return tuple(d.id for d in self.devices if d.is_edge)

    def device_adjacency(self) -> dict[int, set[int]]:
        if "adj" not in self._cache:
            adj: dict[int, set[int]] = {d.id: set() for d in self.devices}
            for link in self.links:
                n, m = link.endpoints
                adj[n].add(m)
                adj[m].add(n)
            self._cache["adj"] = adj
        return self._cache["adj"]

    def node_neighbors(self) -> dict[int, tuple[int, ...]]:
        """Compute-node adjacency used by the state encoder: two nodes are
        neighbors when their attachment devices are at most two hops apart
        (same device, directly linked, or sharing a common device)."""
        if "node_adj" not in self._cache:
            adj = self.device_adjacency()
            out: dict[int, tuple[int, ...]] = {}
            for v in range(self.num_nodes):
                dv = self.attachment[v]
                two_hop = set(adj[dv])
                for mid in adj[dv]:
                    two_hop |= adj[mid]
                two_hop.add(dv)
                near = []
                for u in range(self.num_nodes):
                    if u != v and self.attachment[u] in two_hop:
                        near.append(u)
                out[v] = tuple(near)
            self._cache["node_adj"] = out
        return self._cache["node_adj"]

    def paths_from(self, endpoint: int) -> tuple[int, ...]:
        if "by_endpoint" not in self._cache:
            by_ep: dict[int, list[int]] = {}
            for p in self.paths:
                by_ep.setdefault(p.endpoint_device, []).append(p.id)
            self._cache["by_endpoint"] = {k: tuple(v) for k, v in by_ep.items()}
        return self._cache["by_endpoint"].get(endpoint, ())

    def candidate_paths(self, poa: int, host_device: int) -> tuple[int, ...]:
        """Paths starting and ending at ``poa`` whose walk visits ``host_device``."""
        key = ("cand", poa, host_device)
        if key not in self._cache:
            self._cache[key] = tuple(
                pid for pid in self.paths_from(poa) if host_device in self.paths[pid].device_set
            )
        return self._cache[key]

    def max_partition(self) -> float:
        if "max_part" not in self._cache:
            vals = [s for d in self.devices for s in d.priority_bandwidth]
            vals += [s for l in self.links for s in l.priority_bandwidth]
            vals += [s for v in self.nodes for s in v.priority_capacity]
            self._cache["max_part"] = max(vals) if vals else 1.0
        return self._cache["max_part"]

    def max_unit_energy(self) -> float:
        if "max_unit_e" not in self._cache:
            vals = [d.energy_per_unit for d in self.devices]
            vals += [v.energy_per_unit for v in self.nodes]
            self._cache["max_unit_e"] = max(vals) if vals else 1.0
        return self._cache["max_unit_e"]

    def max_transition_energy(self) -> float:
        if "max_trans_e" not in self._cache:
            vals = [v.energy_per_transition for v in self.nodes]
            self._cache["max_trans_e"] = max(max(vals), 1e-12) if vals else 1.0
        return self._cache["max_trans_e"]

    def path_device_energy(self, path_id: int) -> float:
        """Sum of per-unit energies over the distinct devices of a path."""
        key = ("path_e", path_id)
        if key not in self._cache:
            p = self.paths[path_id]
            self._cache[key] = sum(self.devices[d].energy_per_unit for d in p.device_set)
        return self._cache[key]

    def path_transmission_energy(self, path_id: int) -> float:
        """Energy per bandwidth unit of routing one request over the walk,
        counting each device visit."""
        key = ("path_te", path_id)
        if key not in self._cache:
            p = self.paths[path_id]
            self._cache[key] = sum(
                self.devices[d].energy_per_unit * m for d, m in p.device_multiplicity().items()
            )
        return self._cache[key]

    # -- serialization --------------------------------------------------------

    def to_dict(self) -> dict:
        return {
            "priority_levels": self.priority_levels,
            "latency_scale": self.latency_scale,
            "c15_aggregate_load": self.c15_aggregate_load,
            "devices": [
                {
                    "id": d.id,
                    "total_bandwidth": d.total_bandwidth,
                    "priority_bandwidth": list(d.priority_bandwidth),
                    "energy_per_unit": d.energy_per_unit,
                    "is_edge": d.is_edge,
                }
                for d in self.devices
            ],
            "nodes": [
                {
                    "id": v.id,
                    "attachment": self.attachment[v.id],
                    "total_capacity": v.total_capacity,
                    "priority_capacity": list(v.priority_capacity),
                    "energy_per_unit": v.energy_per_unit,
                    "energy_per_transition": v.energy_per_transition,
                }
                for v in self.nodes
            ],
            "links": [
                {
                    "id": l.id,
                    "endpoints": list(l.endpoints),
                    "total_bandwidth": l.total_bandwidth,
                    "priority_bandwidth": list(l.priority_bandwidth),
                }
                for l in self.links
            ],
            "paths": [
                {"id": p.id, "devices": list(p.devices), "links": list(p.links)}
                for p in self.paths
            ],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))

    @staticmethod
    def from_dict(data: Mapping) -> "Topology":
        levels = int(data["priority_levels"])
        devices = tuple(
            NetworkDevice(
                id=int(d["id"]),
                total_bandwidth=float(d["total_bandwidth"]),
                priority_bandwidth=tuple(float(x) for x in d["priority_bandwidth"]),
                energy_per_unit=float(d["energy_per_unit"]),
                is_edge=bool(d.get("is_edge", False)),
            )
            for d in data["devices"]
        )
        nodes = tuple(
            ComputeNode(
                id=int(v["id"]),
                total_capacity=float(v["total_capacity"]),
                priority_capacity=tuple(float(x) for x in v["priority_capacity"]),
                energy_per_unit=float(v["energy_per_unit"]),
                energy_per_transition=float(v["energy_per_transition"]),
            )
            for v in data["nodes"]
        )
        links = tuple(
            Link(
                id=int(l["id"]),
                endpoints=(int(l["endpoints"][0]), int(l["endpoints"][1])),
                total_bandwidth=float(l["total_bandwidth"]),
                priority_bandwidth=tuple(float(x) for x in l["priority_bandwidth"]),
            )
            for l in data["links"]
        )
        paths = tuple(
            Path(id=int(p["id"]), devices=tuple(int(x) for x in p["devices"]),
                 links=tuple(int(x) for x in p["links"]))
            for p in data["paths"]
        )
        attachment = {int(v["id"]): int(v["attachment"]) for v in data["nodes"]}
        return Topology(
            devices=devices,
            nodes=nodes,
            links=links,
            paths=paths,
            attachment=attachment,
            priority_levels=levels,
            latency_scale=float(data.get("latency_scale", 1.0)),
            c15_aggregate_load=bool(data.get("c15_aggregate_load", False)),
        )

    @staticmethod
    def from_json(text: str) -> "Topology":
        return Topology.from_dict(json.loads(text))


def _draw(rng: np.random.Generator, spec, what: str) -> float:
    """Resolve a capacity/energy entry: a number, or {"range": [lo, hi]} for a
    discrete uniform draw over the inclusive integer range."""
    if isinstance(spec, (int, float)):
        return float(spec)
    if isinstance(spec, Mapping) and "range" in spec:
        lo, hi = spec["range"]
        return float(rng.integers(int(lo), int(hi) + 1))
    raise TopologyError(f"{what}: expected a number or a range, got {spec!r}")


def build_topology(spec: Mapping) -> Topology:
    """Construct a validated Topology from a description dict.

    The description lists devices, nodes (with attachments), links, the number
    of priority levels, and capacity/energy values either as numbers or as
    inclusive integer ranges sampled with the description's seed.  Paths are
    enumerated when absent.
    """
    levels = int(spec.get("priority_levels", 1))
    if levels < 1:
        raise TopologyError("priority_levels must be >= 1")
    seed = int(spec.get("seed", 0))
    rng = np.random.default_rng(seed)
    weights = spec.get("priority_weights")

    raw_devices = list(spec.get("devices", []))
    raw_nodes = list(spec.get("nodes", []))
    raw_links = list(spec.get("links", []))
    if not raw_devices:
        raise TopologyError("at least one network device is required")

    devices = []
    for idx, d in enumerate(raw_devices):
        total = _draw(rng, d.get("total_bandwidth", d.get("bandwidth")), f"device {idx}")
        devices.append(
            NetworkDevice(
                id=idx,
                total_bandwidth=total,
                priority_bandwidth=partition_priorities(total, levels, weights),
                energy_per_unit=_draw(rng, d.get("energy_per_unit"), f"device {idx}"),
                is_edge=bool(d.get("is_edge", False)),
            )
        )

    links = []
    for idx, l in enumerate(raw_links):
        n, m = (int(x) for x in l["endpoints"])
        for dev in (n, m):
            if not 0 <= dev < len(devices):
                raise TopologyError(f"link {idx}: unknown device {dev}")
        total = _draw(rng, l.get("total_bandwidth", l.get("bandwidth")), f"link {idx}")
        links.append(
            Link(
                id=idx,
                endpoints=(n, m),
                total_bandwidth=total,
                priority_bandwidth=partition_priorities(total, levels, weights),
            )
        )

    nodes = []
    attachment: dict[int, int] = {}
    for idx, v in enumerate(raw_nodes):
        if "attachment" not in v:
            raise TopologyError(f"node {idx}: missing attachment")
        att = int(v["attachment"])
        if not 0 <= att < len(devices):
            raise TopologyError(f"node {idx}: unknown device {att}")
        attachment[idx] = att
        total = _draw(rng, v.get("total_capacity", v.get("capacity")), f"node {idx}")
        nodes.append(
            ComputeNode(
                id=idx,
                total_capacity=total,
                priority_capacity=partition_priorities(total, levels, weights),
                energy_per_unit=_draw(rng, v.get("energy_per_unit"), f"node {idx}"),
                energy_per_transition=_draw(rng, v.get("energy_per_transition", 0.0), f"node {idx}"),
            )
        )

    # Default PoA rule: devices of degree one are edge devices unless the
    # description marks edges explicitly.
    if not any(d.is_edge for d in devices):
        degree = {d.id: 0 for d in devices}
        for l in links:
            degree[l.endpoints[0]] += 1
            degree[l.endpoints[1]] += 1
        devices = [
            NetworkDevice(d.id, d.total_bandwidth, d.priority_bandwidth, d.energy_per_unit,
                          is_edge=(degree[d.id] <= 1))
            for d in devices
        ]

    partial = Topology(
        devices=tuple(devices),
        nodes=tuple(nodes),
        links=tuple(links),
        paths=(),
        attachment=attachment,
        priority_levels=levels,
        latency_scale=float(spec.get("latency_scale", 1.0)),
        c15_aggregate_load=bool(spec.get("c15_aggregate_load", False)),
    )

    if "paths" in spec and spec["paths"] is not None:
        paths = tuple(
            Path(id=i, devices=tuple(int(x) for x in p["devices"]),
                 links=tuple(int(x) for x in p["links"]))
            for i, p in enumerate(spec["paths"])
        )
    else:
        paths = enumerate_paths(partial, int(spec.get("path_limit", 3)))

    return Topology(
        devices=partial.devices,
        nodes=partial.nodes,
        links=partial.links,
        paths=paths,
        attachment=partial.attachment,
        priority_levels=levels,
        latency_scale=partial.latency_scale,
        c15_aggregate_load=partial.c15_aggregate_load,
    )


def enumerate_paths(topology: Topology, per_pair_limit: int = 3) -> tuple[Path, ...]:
    """Enumerate up to ``per_pair_limit`` loop-free out-and-back walks for every
    (edge device, compute node) pair, shortest first.

    Routes are simple device paths from the edge device to the node's
    attachment device; unreachable pairs yield nothing.  Pairs whose node sits
    directly on the edge device yield nothing either, because a walk needs at
    least one link; such placements remain reachable through any other walk
    that starts at that device.
    """
    if per_pair_limit < 1:
        raise TopologyError("per_pair_limit must be >= 1")
    graph = nx.Graph()
    graph.add_nodes_from(d.id for d in topology.devices)
    link_for_pair: dict[frozenset[int], int] = {}
    for link in topology.links:
        pair = frozenset(link.endpoints)
        if pair not in link_for_pair:
            link_for_pair[pair] = link.id
            graph.add_edge(*link.endpoints)

    routes: list[tuple[int, ...]] = []
    seen: set[tuple[int, ...]] = set()
    for edge in sorted(topology.edge_devices()):
        for v in range(topology.num_nodes):
            target = topology.attachment[v]
            if target == edge or not nx.has_path(graph, edge, target):
                continue
            found = 0
            for route in nx.shortest_simple_paths(graph, edge, target):
                key = tuple(route)
                if key not in seen:
                    seen.add(key)
                    routes.append(key)
                found += 1
                if found >= per_pair_limit:
                    break

    paths = []
    for pid, route in enumerate(routes):
        link_ids = tuple(link_for_pair[frozenset((a, b))] for a, b in zip(route, route[1:]))
        paths.append(Path(id=pid, devices=tuple(route), links=link_ids))
    return tuple(paths)
