"""Differentiable state-action value function.

The state of a pending request is encoded as one feature row per compute node
(residual capacity slack, prospective service-latency slack per priority, unit
energy, boot cost) and one row per candidate path (bottleneck bandwidth slack,
prospective network-latency slack per priority, device energy along the path).

Two architectures share the dueling head:

* graph: node rows pass through mean-aggregation message passing over the
  compute-node neighborhood graph; each action (instance, node, path,
  priority) scores its advantage from the embeddings of its own node and path
  plus instance/priority one-hots, so relabeling nodes permutes Q-values
  exactly.
* flat: all rows are flattened into a single vector processed by dense layers
  only.

Everything is float64 numpy with hand-written backward passes, so training is
bit-reproducible for a fixed seed and every layer can be verified against
central finite differences.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .allocation import Action, AllocationState
from .topology import Topology
from .workload import Request, ServiceCatalog

CHECKPOINT_VERSION = 1
FEATURE_CLIP_HIGH = 4.0
SENTINEL = -1.0


# ---------------------------------------------------------------------------
# layer primitives (forward returns (out, cache); backward returns grads)
# ---------------------------------------------------------------------------

def dense_forward(x: np.ndarray, w: np.ndarray, b: np.ndarray):
    """Affine map over the last axis; leading axes are batch-like."""
    return x @ w + b, (x, w)


def dense_backward(dout: np.ndarray, cache):
    x, w = cache
    dx = dout @ w.T
    flat_x = x.reshape(-1, x.shape[-1])
    flat_d = dout.reshape(-1, dout.shape[-1])
    dw = flat_x.T @ flat_d
    db = flat_d.sum(axis=0)
    return dx, dw, db


def relu_forward(x: np.ndarray):
    out = np.maximum(x, 0.0)
    return out, (x,)


def relu_backward(dout: np.ndarray, cache):
    (x,) = cache
    return dout * (x > 0.0)


def neighbor_mean_forward(h: np.ndarray, adj: np.ndarray):
    """Mean over each node's neighbors: ``adj`` is the row-normalized
    neighborhood matrix (rows of isolated nodes are zero)."""
    return np.matmul(adj, h), (adj,)


def neighbor_mean_backward(dout: np.ndarray, cache):
    (adj,) = cache
    return np.matmul(adj.T, dout)


def bilinear_forward(hv: np.ndarray, hp: np.ndarray, w: np.ndarray):
    """Node-path interaction scores: (B, V, H) x (B, P, H) -> (B, V, P) via a
    learned bilinear form, scaled by the embedding width to keep the output
    variance comparable with the additive score terms."""
    scale = 1.0 / hv.shape[-1]
    hb = hv @ w
    scores = np.einsum("bvh,bph->bvp", hb, hp) * scale
    return scores, (hv, hp, hb, w, scale)


def bilinear_backward(dout: np.ndarray, cache):
    hv, hp, hb, w, scale = cache
    dout = dout * scale
    dhb = np.einsum("bvp,bph->bvh", dout, hp)
    dhp = np.einsum("bvp,bvh->bph", dout, hb)
    dhv = dhb @ w.T
    dw = np.einsum("bvf,bvh->fh", hv, dhb)
    return dhv, dhp, dw


def mean_pool_forward(x: np.ndarray):
    """Mean over axis 1 (the entity axis)."""
    return x.mean(axis=1), (x.shape,)


def mean_pool_backward(dout: np.ndarray, cache):
    (shape,) = cache
    return np.broadcast_to(dout[:, None, :], shape) / shape[1]


def gather_forward(h: np.ndarray, index: np.ndarray):
    """Select entity rows per action: (B, N, H) x (A,) -> (B, A, H)."""
    return h[:, index, :], (h.shape, index)


def gather_backward(dout: np.ndarray, cache):
    shape, index = cache
    dh = np.zeros(shape, dtype=dout.dtype)
    np.add.at(dh, (slice(None), index, slice(None)), dout)
    return dh


def dueling_forward(psi: np.ndarray, phi: np.ndarray, product: bool = False):
    """Combine a state value (B, 1) with mean-centered advantages (B, A)."""
    centered = phi - phi.mean(axis=1, keepdims=True)
    if product:
        return psi * centered, (psi, centered, product)
    return psi + centered, (psi, centered, product)


def dueling_backward(dout: np.ndarray, cache):
    psi, centered, product = cache
    if product:
        dpsi = (dout * centered).sum(axis=1, keepdims=True)
        dcentered = dout * psi
    else:
        dpsi = dout.sum(axis=1, keepdims=True)
        dcentered = dout
    dphi = dcentered - dcentered.mean(axis=1, keepdims=True)
    return dpsi, dphi


# ---------------------------------------------------------------------------
# state features
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class StateFeatures:
    """One row per compute node (2K+2 entries) and per path (2K+1 entries)."""

    node_features: np.ndarray
    path_features: np.ndarray


def node_feature_rows(state: AllocationState, request: Request) -> np.ndarray:
    """Raw per-node rows: capacity slack and prospective-latency slack per
    priority, unit energy, boot cost of a currently idle node.  Prospective
    latency of an unstable placement is +inf."""
    topo = state.topology
    levels = topo.priority_levels
    active = state.active_nodes()
    rows = np.empty((topo.num_nodes, 2 * levels + 2), dtype=np.float64)
    for v in range(topo.num_nodes):
        node = topo.nodes[v]
        for k in range(levels):
            residual = state.residual_node_capacity(v, k)
            rows[v, k] = residual - request.min_capacity
            margin = residual - request.min_capacity
            if margin > 0:
                rows[v, levels + k] = topo.latency_scale / margin - request.max_latency
            else:
                rows[v, levels + k] = np.inf
        rows[v, 2 * levels] = node.energy_per_unit
        rows[v, 2 * levels + 1] = node.energy_per_transition * (0.0 if v in active else 1.0)
    return rows


def path_feature_rows(state: AllocationState, request: Request) -> np.ndarray:
    """Raw per-path rows: bottleneck bandwidth slack and prospective
    network-latency slack per priority, and the path's device energy."""
    topo = state.topology
    levels = topo.priority_levels
    rows = np.empty((topo.num_paths, 2 * levels + 1), dtype=np.float64)
    for p in range(topo.num_paths):
        path = topo.paths[p]
        dev_mult = path.device_multiplicity()
        link_mult = path.link_multiplicity()
        for k in range(levels):
            bottleneck = min(
                min(state.residual_device_bandwidth(n, k) for n in path.device_set),
                min(state.residual_link_bandwidth(l, k) for l in path.link_set),
            )
            rows[p, k] = bottleneck - request.min_bandwidth
            total = 0.0
            stable = True
            for n, mult in dev_mult.items():
                margin = state.residual_device_bandwidth(n, k) - mult * request.min_bandwidth
                if margin <= 0:
                    stable = False
                    break
                total += mult * topo.latency_scale / margin
            if stable:
                for l, mult in link_mult.items():
                    rate = topo.links[l].priority_bandwidth[k]
                    if rate <= 0:
                        stable = False
                        break
                    total += mult * topo.latency_scale * request.packet_size / rate
            rows[p, levels + k] = (total - request.max_latency) if stable else np.inf
        rows[p, 2 * levels] = topo.path_device_energy(p)
    return rows


def _max_path_energy(topology: Topology) -> float:
    if "max_path_e" not in topology._cache:
        vals = [topology.path_device_energy(p) for p in range(topology.num_paths)]
        topology._cache["max_path_e"] = max(vals) if vals else 1.0
    return topology._cache["max_path_e"]


def encode_state(state: AllocationState, request: Request, normalize: bool = True) -> StateFeatures:
    """Feature rows for one pending request.

    Normalized mode divides capacity/bandwidth slacks by the scenario's
    largest partition, latency slacks by the request's latency bound, and
    energies by their scenario maxima, then floors everything at -1 (the
    sentinel for unstable placements) and caps at +4.
    """
    topo = state.topology
    levels = topo.priority_levels
    node_rows = node_feature_rows(state, request)
    path_rows = path_feature_rows(state, request)
    if not normalize:
        return StateFeatures(node_features=node_rows, path_features=path_rows)

    max_part = topo.max_partition()
    max_unit = topo.max_unit_energy()
    max_trans = topo.max_transition_energy()
    max_path_e = _max_path_energy(topo)

    node_rows = node_rows.copy()
    node_rows[:, :levels] /= max_part
    node_rows[:, levels:2 * levels] /= request.max_latency
    node_rows[:, 2 * levels] /= max_unit
    node_rows[:, 2 * levels + 1] /= max_trans

    path_rows = path_rows.copy()
    if path_rows.size:
        path_rows[:, :levels] /= max_part
        path_rows[:, levels:2 * levels] /= request.max_latency
        path_rows[:, 2 * levels] /= max_path_e
        # Paths that do not start and end at the request's PoA cannot carry it:
        # their slack entries collapse to the sentinel.
        for p in range(topo.num_paths):
            if topo.paths[p].endpoint_device != request.poa:
                path_rows[p, : 2 * levels] = SENTINEL

    node_rows = np.clip(np.nan_to_num(node_rows, posinf=SENTINEL), SENTINEL, FEATURE_CLIP_HIGH)
    path_rows = np.clip(np.nan_to_num(path_rows, posinf=SENTINEL), SENTINEL, FEATURE_CLIP_HIGH)
    return StateFeatures(node_features=node_rows, path_features=path_rows)


# ---------------------------------------------------------------------------
# Q-function
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Architecture:
    hidden: int = 32
    rounds: int = 2
    flat: bool = False
    dueling_product: bool = False

    def to_dict(self) -> dict:
        return {
            "hidden": self.hidden,
            "rounds": self.rounds,
            "flat": self.flat,
            "dueling_product": self.dueling_product,
        }

    @staticmethod
    def from_dict(data: dict) -> "Architecture":
        return Architecture(
            hidden=int(data["hidden"]),
            rounds=int(data["rounds"]),
            flat=bool(data["flat"]),
            dueling_product=bool(data["dueling_product"]),
        )


def action_space(topology: Topology, catalog: ServiceCatalog) -> list[Action]:
    """The full action grid in index order (instance, node, path, priority)."""
    out = []
    for i in range(catalog.num_instances):
        for v in range(topology.num_nodes):
            for p in range(topology.num_paths):
                for k in range(topology.priority_levels):
                    out.append(Action(instance=i, node=v, path=p, priority=k))
    return out


def action_index(topology: Topology, catalog: ServiceCatalog, action: Action) -> int:
    v_count, p_count, k_count = topology.num_nodes, topology.num_paths, topology.priority_levels
    return ((action.instance * v_count + action.node) * p_count + action.path) * k_count + action.priority


def normalized_adjacency(topology: Topology) -> np.ndarray:
    neighbors = topology.node_neighbors()
    v_count = topology.num_nodes
    adj = np.zeros((v_count, v_count), dtype=np.float64)
    for v in range(v_count):
        near = neighbors[v]
        if near:
            for u in near:
                adj[v, u] = 1.0 / len(near)
    return adj


class QFunction:
    """State-action value approximator over the full action grid."""

    def __init__(self, topology: Topology, catalog: ServiceCatalog,
                 arch: Architecture = Architecture(), seed: int = 0):
        self.arch = arch
        self.levels = topology.priority_levels
        self.num_nodes = topology.num_nodes
        self.num_paths = topology.num_paths
        self.num_instances = catalog.num_instances
        self.node_dim = 2 * self.levels + 2
        self.path_dim = 2 * self.levels + 1
        self.actions = action_space(topology, catalog)
        self.num_actions = len(self.actions)
        self.adj = normalized_adjacency(topology)

        # Fixed one-hot maps from per-entity score tables to the action grid:
        # gathering becomes a matmul and its backward the transposed matmul.
        k_count, v_count, p_count = self.levels, self.num_nodes, self.num_paths
        i_count = self.num_instances
        self.map_vk = np.zeros((v_count * k_count, self.num_actions), dtype=np.float64)
        self.map_pk = np.zeros((p_count * k_count, self.num_actions), dtype=np.float64)
        self.map_vp = np.zeros((v_count * p_count, self.num_actions), dtype=np.float64)
        self.map_vi = np.zeros((v_count * i_count, self.num_actions), dtype=np.float64)
        self.map_i = np.zeros((i_count, self.num_actions), dtype=np.float64)
        for idx, a in enumerate(self.actions):
            self.map_vk[a.node * k_count + a.priority, idx] = 1.0
            self.map_pk[a.path * k_count + a.priority, idx] = 1.0
            self.map_vp[a.node * p_count + a.path, idx] = 1.0
            self.map_vi[a.node * i_count + a.instance, idx] = 1.0
            self.map_i[a.instance, idx] = 1.0

        self.params: dict[str, np.ndarray] = {}
        self._init_params(seed)

    # -- parameters ----------------------------------------------------------

    def _add(self, name: str, shape: tuple[int, ...], rng: Optional[np.random.Generator]) -> None:
        if rng is None:
            self.params[name] = np.zeros(shape, dtype=np.float64)
        else:
            fan_in = shape[0] if len(shape) > 1 else max(shape[0], 1)
            self.params[name] = rng.normal(0.0, 1.0 / math.sqrt(fan_in), size=shape)

    def _init_params(self, seed: int) -> None:
        rng = np.random.default_rng(seed)
        h = self.arch.hidden
        if self.arch.flat:
            d = self.num_nodes * self.node_dim + self.num_paths * self.path_dim
            self._add("w1", (d, h), rng)
            self._add("b1", (h,), None)
            self._add("w2", (h, h), rng)
            self._add("b2", (h,), None)
            self._add("w_psi", (h, 1), rng)
            self._add("b_psi", (1,), None)
            self._add("w_phi", (h, self.num_actions), rng)
            self._add("b_phi", (self.num_actions,), None)
        else:
            self._add("w_node", (self.node_dim, h), rng)
            self._add("b_node", (h,), None)
            for r in range(self.arch.rounds):
                self._add(f"w_self{r}", (h, h), rng)
                self._add(f"w_neigh{r}", (h, h), rng)
                self._add(f"b_round{r}", (h,), None)
            self._add("w_path", (self.path_dim, h), rng)
            self._add("b_path", (h,), None)
            self._add("w_trunk", (2 * h, h), rng)
            self._add("b_trunk", (h,), None)
            self._add("w_psi", (h, 1), rng)
            self._add("b_psi", (1,), None)
            self._add("w_vk", (h, self.levels), rng)
            self._add("b_vk", (self.levels,), None)
            self._add("w_pk", (h, self.levels), rng)
            self._add("b_pk", (self.levels,), None)
            self._add("w_vi", (h, self.num_instances), rng)
            self._add("b_vi", (self.num_instances,), None)
            self._add("w_bilinear", (h, h), rng)
            self._add("u_instance", (self.num_instances,), None)

    def zero_params(self) -> None:
        for name in self.params:
            self.params[name] = np.zeros_like(self.params[name])

    def copy_weights_from(self, other: "QFunction") -> None:
        for name, value in other.params.items():
            self.params[name] = value.copy()

    def clone(self) -> "QFunction":
        dup = object.__new__(QFunction)
        dup.__dict__.update(self.__dict__)
        dup.params = {name: value.copy() for name, value in self.params.items()}
        return dup

    # -- forward/backward ------------------------------------------------------

    def _stack(self, batch: list[StateFeatures]) -> tuple[np.ndarray, np.ndarray]:
        xv = np.stack([f.node_features for f in batch])
        xp = np.stack([f.path_features for f in batch])
        return xv, xp

    def forward(self, batch: list[StateFeatures]):
        p = self.params
        xv, xp = self._stack(batch)
        caches: dict = {}
        if self.arch.flat:
            b = xv.shape[0]
            x = np.concatenate([xv.reshape(b, -1), xp.reshape(b, -1)], axis=1)
            caches["xshape"] = (xv.shape, xp.shape)
            a1, caches["d1"] = dense_forward(x, p["w1"], p["b1"])
            h1, caches["r1"] = relu_forward(a1)
            a2, caches["d2"] = dense_forward(h1, p["w2"], p["b2"])
            h2, caches["r2"] = relu_forward(a2)
            psi, caches["dpsi"] = dense_forward(h2, p["w_psi"], p["b_psi"])
            phi, caches["dphi"] = dense_forward(h2, p["w_phi"], p["b_phi"])
            q, caches["duel"] = dueling_forward(psi, phi, self.arch.dueling_product)
            return q, caches

        an, caches["dnode"] = dense_forward(xv, p["w_node"], p["b_node"])
        h, caches["rnode"] = relu_forward(an)
        for r in range(self.arch.rounds):
            m, caches[f"agg{r}"] = neighbor_mean_forward(h, self.adj)
            s1, caches[f"dself{r}"] = dense_forward(h, p[f"w_self{r}"], np.zeros(1))
            s2, caches[f"dneigh{r}"] = dense_forward(m, p[f"w_neigh{r}"], p[f"b_round{r}"])
            h, caches[f"rround{r}"] = relu_forward(s1 + s2)
        ap_, caches["dpath"] = dense_forward(xp, p["w_path"], p["b_path"])
        hp, caches["rpath"] = relu_forward(ap_)

        g, caches["poolv"] = mean_pool_forward(h)
        qk, caches["poolp"] = mean_pool_forward(hp)
        gz = np.concatenate([g, qk], axis=1)
        caches["gz_split"] = g.shape[1]
        at, caches["dtrunk"] = dense_forward(gz, p["w_trunk"], p["b_trunk"])
        z, caches["rtrunk"] = relu_forward(at)
        psi, caches["dpsi"] = dense_forward(z, p["w_psi"], p["b_psi"])

        bsz = h.shape[0]
        u_vk, caches["dvk"] = dense_forward(h, p["w_vk"], p["b_vk"])
        u_pk, caches["dpk"] = dense_forward(hp, p["w_pk"], p["b_pk"])
        u_vi, caches["dvi"] = dense_forward(h, p["w_vi"], p["b_vi"])
        s_vp, caches["bilinear"] = bilinear_forward(h, hp, p["w_bilinear"])
        phi = (
            u_vk.reshape(bsz, -1) @ self.map_vk
            + u_pk.reshape(bsz, -1) @ self.map_pk
            + u_vi.reshape(bsz, -1) @ self.map_vi
            + s_vp.reshape(bsz, -1) @ self.map_vp
            + p["u_instance"] @ self.map_i
        )
        caches["phi_shapes"] = (u_vk.shape, u_pk.shape, u_vi.shape, s_vp.shape)
        q, caches["duel"] = dueling_forward(psi, phi, self.arch.dueling_product)
        return q, caches

    def backward(self, caches: dict, dq: np.ndarray) -> dict[str, np.ndarray]:
        grads: dict[str, np.ndarray] = {}
        dpsi, dphi = dueling_backward(dq, caches["duel"])
        if self.arch.flat:
            dh2_a, grads["w_psi"], grads["b_psi"] = dense_backward(dpsi, caches["dpsi"])
            dh2_b, grads["w_phi"], grads["b_phi"] = dense_backward(dphi, caches["dphi"])
            da2 = relu_backward(dh2_a + dh2_b, caches["r2"])
            dh1, grads["w2"], grads["b2"] = dense_backward(da2, caches["d2"])
            da1 = relu_backward(dh1, caches["r1"])
            _, grads["w1"], grads["b1"] = dense_backward(da1, caches["d1"])
            return grads

        vk_shape, pk_shape, vi_shape, vp_shape = caches["phi_shapes"]
        bsz = dphi.shape[0]
        du_vk = (dphi @ self.map_vk.T).reshape(vk_shape)
        du_pk = (dphi @ self.map_pk.T).reshape(pk_shape)
        du_vi = (dphi @ self.map_vi.T).reshape(vi_shape)
        ds_vp = (dphi @ self.map_vp.T).reshape(vp_shape)
        grads["u_instance"] = (dphi @ self.map_i.T).sum(axis=0)
        dh_vk, grads["w_vk"], grads["b_vk"] = dense_backward(du_vk, caches["dvk"])
        dhp_pk, grads["w_pk"], grads["b_pk"] = dense_backward(du_pk, caches["dpk"])
        dh_vi, grads["w_vi"], grads["b_vi"] = dense_backward(du_vi, caches["dvi"])
        dh_bl, dhp_bl, grads["w_bilinear"] = bilinear_backward(ds_vp, caches["bilinear"])
        dh_actions = dh_vk + dh_vi + dh_bl
        dhp_actions = dhp_pk + dhp_bl

        dz, grads["w_psi"], grads["b_psi"] = dense_backward(dpsi, caches["dpsi"])
        dat = relu_backward(dz, caches["rtrunk"])
        dgz, grads["w_trunk"], grads["b_trunk"] = dense_backward(dat, caches["dtrunk"])
        split = caches["gz_split"]
        dg, dqk = dgz[:, :split], dgz[:, split:]
        dh_pool = mean_pool_backward(dg, caches["poolv"])
        dhp_pool = mean_pool_backward(dqk, caches["poolp"])

        dhp = dhp_actions + dhp_pool
        dap = relu_backward(dhp, caches["rpath"])
        _, grads["w_path"], grads["b_path"] = dense_backward(dap, caches["dpath"])

        dh = dh_actions + dh_pool
        for r in range(self.arch.rounds - 1, -1, -1):
            ds = relu_backward(dh, caches[f"rround{r}"])
            dh_direct, grads[f"w_self{r}"], _ = dense_backward(ds, caches[f"dself{r}"])
            dm, grads[f"w_neigh{r}"], grads[f"b_round{r}"] = dense_backward(ds, caches[f"dneigh{r}"])
            dh = dh_direct + neighbor_mean_backward(dm, caches[f"agg{r}"])
        dan = relu_backward(dh, caches["rnode"])
        _, grads["w_node"], grads["b_node"] = dense_backward(dan, caches["dnode"])
        return grads

    # -- public API -------------------------------------------------------------

    def q_values(self, features: StateFeatures) -> np.ndarray:
        q, _ = self.forward([features])
        return q[0]

    def q_values_batch(self, batch: list[StateFeatures]) -> np.ndarray:
        q, _ = self.forward(batch)
        return q

    def train_step(self, batch: list[StateFeatures], actions: np.ndarray,
                   targets: np.ndarray, step_size: float) -> float:
        """One semi-gradient step on half squared error between the chosen
        actions' Q-values and fixed targets; returns the mean loss.  A step
        with non-finite gradients is skipped and reported as NaN loss."""
        with np.errstate(over="ignore", invalid="ignore"):
            q, caches = self.forward(batch)
            rows = np.arange(len(batch))
            actions = np.asarray(actions, dtype=np.intp)
            targets = np.asarray(targets, dtype=np.float64)
            diff = q[rows, actions] - targets
            loss = 0.5 * float(np.mean(diff ** 2))
            dq = np.zeros_like(q)
            dq[rows, actions] = diff / len(batch)
            grads = self.backward(caches, dq)
        if not all(np.isfinite(g).all() for g in grads.values()) or not math.isfinite(loss):
            return float("nan")
        for name, grad in grads.items():
            self.params[name] -= step_size * grad
        return loss

    # -- checkpointing ------------------------------------------------------------

    def to_dict(self) -> dict:
        return {
            "version": CHECKPOINT_VERSION,
            "arch": self.arch.to_dict(),
            "dims": {
                "levels": self.levels,
                "num_nodes": self.num_nodes,
                "num_paths": self.num_paths,
                "num_instances": self.num_instances,
            },
            "adj": self.adj.ravel().tolist(),
            "params": {
                name: {"shape": list(value.shape), "data": value.ravel().tolist()}
                for name, value in sorted(self.params.items())
            },
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))

    def load_params(self, data: dict) -> None:
        if int(data["version"]) != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {data['version']}")
        for name, entry in data["params"].items():
            if name not in self.params:
                raise ValueError(f"unknown parameter {name}")
            shape = tuple(entry["shape"])
            if shape != self.params[name].shape:
                raise ValueError(f"parameter {name}: shape {shape} != {self.params[name].shape}")
            self.params[name] = np.array(entry["data"], dtype=np.float64).reshape(shape)

    @staticmethod
    def from_dict(data: dict, topology: Topology, catalog: ServiceCatalog) -> "QFunction":
        arch = Architecture.from_dict(data["arch"])
        qf = QFunction(topology, catalog, arch=arch, seed=0)
        qf.load_params(data)
        return qf


# ---------------------------------------------------------------------------
# finite differences
# ---------------------------------------------------------------------------

def finite_difference(fn, x: np.ndarray, step: float = 1e-6) -> np.ndarray:
    """Central-difference gradient of a scalar function of an array."""
    grad = np.zeros_like(x, dtype=np.float64)
    flat = x.ravel()
    gflat = grad.ravel()
    for idx in range(flat.size):
        orig = flat[idx]
        flat[idx] = orig + step
        up = fn()
        flat[idx] = orig - step
        down = fn()
        flat[idx] = orig
        gflat[idx] = (up - down) / (2.0 * step)
    return grad


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    scale = max(1.0, float(np.max(np.abs(analytic))), float(np.max(np.abs(numeric))))
    return float(np.max(np.abs(analytic - numeric))) / scale


def check_loss_gradients(qf: QFunction, batch: list[StateFeatures], actions, targets,
                         step: float = 1e-6) -> float:
    """Worst relative disagreement between analytic and central finite-
    difference gradients of the training loss over every parameter."""
    actions = np.asarray(actions, dtype=np.intp)
    targets = np.asarray(targets, dtype=np.float64)

    def loss() -> float:
        q, _ = qf.forward(batch)
        diff = q[np.arange(len(batch)), actions] - targets
        return 0.5 * float(np.mean(diff ** 2))

    q, caches = qf.forward(batch)
    diff = q[np.arange(len(batch)), actions] - targets
    dq = np.zeros_like(q)
    dq[np.arange(len(batch)), actions] = diff / len(batch)
    grads = qf.backward(caches, dq)

    worst = 0.0
    for name in sorted(grads):
        numeric = finite_difference(loss, qf.params[name], step=step)
        worst = max(worst, relative_error(grads[name], numeric))
    return worst
