"""Training loop and baselines: epsilon-greedy selection over the full action
grid, normalized profit-minus-energy rewards, double-Q bootstrapped targets
with a periodically synced target network, and uniform experience replay.

A request is connected exactly when its reward is positive, which requires the
action to pass the assignment rules and keep every co-resident request within
its deadline; infeasible actions always earn zero.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np

from .allocation import Action, AllocationState, advance_slot, apply_action
from .approximator import Architecture, QFunction, StateFeatures, encode_state
from .energy import Trace, make_slot_record, objective_value, summarize
from .latency import deadline_violations, full_feasibility
from .oracle import candidate_actions
from .topology import Topology
from .workload import Request, ServiceCatalog, Workload


class TrainingDiverged(RuntimeError):
    """Raised when a training step produces non-finite loss or gradients."""


@dataclass(frozen=True)
class Transition:
    features: StateFeatures
    action: int
    reward: float
    next_features: Optional[StateFeatures]
    next_mask: Optional[np.ndarray] = None

    @property
    def terminal(self) -> bool:
        return self.next_features is None


class ReplayMemory:
    """Bounded FIFO store sampled uniformly with replacement."""

    def __init__(self, capacity: int):
        if capacity < 1:
            raise ValueError("capacity must be >= 1")
        self.buffer: deque[Transition] = deque(maxlen=capacity)

    def push(self, transition: Transition) -> None:
        self.buffer.append(transition)

    def sample(self, rng: np.random.Generator, batch_size: int) -> list[Transition]:
        idx = rng.integers(0, len(self.buffer), size=batch_size)
        return [self.buffer[i] for i in idx]

    def __len__(self) -> int:
        return len(self.buffer)


@dataclass(frozen=True)
class AgentConfig:
    discount: float = 0.9
    epsilon_start: float = 1.0
    epsilon_decrement: float = 5e-4
    epsilon_floor: float = 0.05
    replay_capacity: int = 2000
    batch_size: int = 32
    target_sync_period: int = 200
    alpha: float = 0.001
    step_size: float = 0.05
    episodes: int = 300
    masked_greedy: bool = False
    literal_reward: bool = False
    arch: Architecture = field(default_factory=Architecture)

    def __post_init__(self) -> None:
        if not 0.0 <= self.discount <= 1.0:
            raise ValueError("discount must lie in [0, 1]")
        if not 0.0 < self.epsilon_floor < 1.0:
            raise ValueError("epsilon floor must lie in (0, 1)")
        if self.epsilon_decrement <= 0.0:
            raise ValueError("epsilon decrement must be > 0")
        if self.alpha <= 0.0:
            raise ValueError("alpha must be > 0")

    def to_dict(self) -> dict:
        data = {
            "discount": self.discount,
            "epsilon_start": self.epsilon_start,
            "epsilon_decrement": self.epsilon_decrement,
            "epsilon_floor": self.epsilon_floor,
            "replay_capacity": self.replay_capacity,
            "batch_size": self.batch_size,
            "target_sync_period": self.target_sync_period,
            "alpha": self.alpha,
            "step_size": self.step_size,
            "episodes": self.episodes,
            "masked_greedy": self.masked_greedy,
            "literal_reward": self.literal_reward,
            "arch": self.arch.to_dict(),
        }
        return data

    @staticmethod
    def from_dict(data: dict) -> "AgentConfig":
        data = dict(data)
        arch = Architecture.from_dict(data.pop("arch")) if "arch" in data else Architecture()
        return AgentConfig(arch=arch, **data)


# ---------------------------------------------------------------------------
# rewards
# ---------------------------------------------------------------------------

def marginal_objective(state: AllocationState, request: Request, action: Action,
                       alpha: float) -> float:
    """The request's stand-alone contribution to the objective under one
    action, constraints aside: profit minus alpha times service energy,
    transmission energy along the walk, and a boot charge when the chosen node
    is currently idle."""
    topo = state.topology
    node = topo.nodes[action.node]
    energy = node.energy_per_unit * request.min_capacity
    if not state.node_is_active(action.node):
        energy += node.energy_per_transition
    energy += request.min_bandwidth * topo.path_transmission_energy(action.path)
    return request.profit - alpha * energy


def objective_bounds(state: AllocationState, request: Request, alpha: float) -> tuple[float, float]:
    """Min and max marginal objective over the entire action grid, feasibility
    ignored.  The marginal energy separates into a node term and a path term,
    so the extrema come from the per-node and per-path extrema."""
    topo = state.topology
    node_terms = [
        topo.nodes[v].energy_per_unit * request.min_capacity
        + (0.0 if state.node_is_active(v) else topo.nodes[v].energy_per_transition)
        for v in range(topo.num_nodes)
    ]
    path_terms = [
        request.min_bandwidth * topo.path_transmission_energy(p) for p in range(topo.num_paths)
    ]
    if not node_terms or not path_terms:
        raise ValueError("action grid is empty")
    low_energy = min(node_terms) + min(path_terms)
    high_energy = max(node_terms) + max(path_terms)
    return request.profit - alpha * high_energy, request.profit - alpha * low_energy


def compute_reward(state: AllocationState, request: Request, action: Optional[Action],
                   alpha: float, literal: bool = False) -> float:
    """Zero for rejected requests and for actions that fail the assignment or
    deadline rules; otherwise the marginal objective normalized into [0, 1]
    over the action grid's constraint-free bounds.

    ``literal`` reproduces the unnormalized reciprocal form (bound spread over
    the action's offset from the minimum) instead.
    """
    if action is None:
        return 0.0
    if not full_feasibility(state, request, action).feasible:
        return 0.0
    low, high = objective_bounds(state, request, alpha)
    spread = high - low
    value = marginal_objective(state, request, action, alpha)
    if literal:
        offset = value - low
        return spread / offset if offset != 0.0 else 0.0
    if spread == 0.0:
        return 1.0
    return (value - low) / spread


# ---------------------------------------------------------------------------
# selection and targets
# ---------------------------------------------------------------------------

def select_action(qf: QFunction, features: StateFeatures, epsilon: float,
                  rng: np.random.Generator,
                  mask: Optional[np.ndarray] = None) -> Optional[int]:
    """Epsilon-greedy index into the action grid.

    Without a mask, exploration draws uniformly over the whole grid and greedy
    selection takes the plain argmax.  With a mask, both branches are
    restricted to the masked subset; an all-false mask means no action
    (reject).
    """
    if not 0.0 <= epsilon <= 1.0:
        raise ValueError("epsilon must lie in [0, 1]")
    if qf.num_actions == 0:
        raise ValueError("action grid is empty")
    if mask is not None and not mask.any():
        return None
    if rng.random() < epsilon:
        if mask is None:
            return int(rng.integers(0, qf.num_actions))
        allowed = np.flatnonzero(mask)
        return int(allowed[rng.integers(0, len(allowed))])
    q = qf.q_values(features)
    if mask is not None:
        q = np.where(mask, q, -np.inf)
    return int(np.argmax(q))


def compute_target(main: QFunction, target: QFunction, transition: Transition,
                   discount: float) -> float:
    """Bootstrapped value of one transition: the main network picks the next
    action (within the stored availability mask, when any), the target network
    prices it; terminal transitions return the reward alone."""
    if transition.terminal:
        return transition.reward
    q_main = main.q_values(transition.next_features)
    if transition.next_mask is not None:
        if not transition.next_mask.any():
            return transition.reward
        q_main = np.where(transition.next_mask, q_main, -np.inf)
    best = int(np.argmax(q_main))
    q_target = target.q_values(transition.next_features)
    return transition.reward + discount * float(q_target[best])


def compute_targets(main: QFunction, target: QFunction, batch: Sequence[Transition],
                    discount: float) -> np.ndarray:
    """Vectorized double-Q targets for a replay batch."""
    targets = np.array([t.reward for t in batch], dtype=np.float64)
    live = [i for i, t in enumerate(batch)
            if not t.terminal and (t.next_mask is None or t.next_mask.any())]
    if live:
        feats = [batch[i].next_features for i in live]
        q_main = main.q_values_batch(feats)
        for slot, i in enumerate(live):
            if batch[i].next_mask is not None:
                q_main[slot] = np.where(batch[i].next_mask, q_main[slot], -np.inf)
        best = np.argmax(q_main, axis=1)
        q_target = target.q_values_batch(feats)
        boot = q_target[np.arange(len(live)), best]
        for slot, i in enumerate(live):
            targets[i] += discount * boot[slot]
    return targets


def structural_mask(topology: Topology, catalog: ServiceCatalog, request: Request,
                    cache: Optional[dict] = None) -> np.ndarray:
    """Request-static action availability: the instance provides the request's
    service and the walk starts at its PoA and visits the host's device.
    Capacity and deadline feasibility stay with the learned Q-values."""
    key = (request.service, request.poa)
    if cache is not None and key in cache:
        return cache[key]
    from .approximator import action_index, action_space

    mask = np.zeros(
        catalog.num_instances * topology.num_nodes * topology.num_paths * topology.priority_levels,
        dtype=bool,
    )
    for i in catalog.instances_of(request.service):
        for v in range(topology.num_nodes):
            for p in topology.candidate_paths(request.poa, topology.attachment[v]):
                for k in range(topology.priority_levels):
                    mask[action_index(topology, catalog, Action(i, v, p, k))] = True
    if cache is not None:
        cache[key] = mask
    return mask


# ---------------------------------------------------------------------------
# training loop
# ---------------------------------------------------------------------------

@dataclass
class OmegaRecord:
    episode: int
    slot: int
    request_id: int
    action: Optional[Action]
    reward: float
    connected: bool


@dataclass
class TrainResult:
    qfunction: QFunction
    target_qfunction: QFunction
    episodes: list[dict]
    omega: list[OmegaRecord]
    eval_trace: Trace
    eval_objective: float
    final_epsilon: float


def _play_episode(
    topology: Topology,
    catalog: ServiceCatalog,
    workload: Workload,
    config: AgentConfig,
    qf: QFunction,
    target_qf: Optional[QFunction],
    memory: Optional[ReplayMemory],
    rng: Optional[np.random.Generator],
    epsilon: float,
    episode: int,
    omega: Optional[list[OmegaRecord]],
    train_state: Optional[dict],
) -> tuple[Trace, float, list[float]]:
    """One pass over the horizon.  With ``train_state`` set, transitions are
    stored and the network is trained each arrival; otherwise the pass is a
    pure greedy evaluation."""
    state = AllocationState.initial(topology, catalog, slot=1)
    records = []
    losses: list[float] = []
    pending: Optional[tuple[StateFeatures, int, float]] = None
    mask_cache: dict = {}

    for t, slot_requests in enumerate(workload, start=1):
        accepted = []
        rejected = []
        for request in sorted(slot_requests, key=lambda r: r.id):
            features = encode_state(state, request)
            mask = (
                structural_mask(topology, catalog, request, mask_cache)
                if config.masked_greedy
                else None
            )
            if pending is not None and memory is not None:
                memory.push(Transition(pending[0], pending[1], pending[2], features, mask))
                pending = None

            idx = select_action(qf, features, epsilon, rng if rng is not None else np.random.default_rng(0), mask)
            action = qf.actions[idx] if idx is not None else None
            reward = compute_reward(state, request, action, config.alpha, config.literal_reward)
            connected = reward > 0.0
            if connected:
                state = apply_action(state, request, action)
                accepted.append(state.assignments[request.id])
            else:
                rejected.append(request.id)
            if idx is not None:
                pending = (features, idx, reward)
            if omega is not None:
                omega.append(OmegaRecord(episode, t, request.id, action, reward, connected))

            if train_state is not None:
                if len(memory) > 0:
                    batch = memory.sample(rng, min(config.batch_size, len(memory)))
                    targets = compute_targets(qf, target_qf, batch, config.discount)
                    loss = qf.train_step(
                        [tr.features for tr in batch],
                        np.array([tr.action for tr in batch], dtype=np.intp),
                        targets,
                        config.step_size,
                    )
                    if math.isnan(loss):
                        raise TrainingDiverged(
                            f"episode {episode}, slot {t}, request {request.id}: non-finite loss"
                        )
                    losses.append(loss)
                    train_state["steps"] += 1
                    if train_state["steps"] % config.target_sync_period == 0:
                        target_qf.copy_weights_from(qf)
                if train_state["epsilon"] > config.epsilon_floor:
                    train_state["epsilon"] = max(
                        config.epsilon_floor, train_state["epsilon"] - config.epsilon_decrement
                    )
                epsilon = train_state["epsilon"]
        records.append(make_slot_record(slot=t, assignments=accepted, rejected=rejected))
        state = advance_slot(state)

    if pending is not None and memory is not None:
        memory.push(Transition(pending[0], pending[1], pending[2], None, None))
    trace = Trace(slots=tuple(records))
    return trace, objective_value(trace, topology, config.alpha), losses


def run_training(
    topology: Topology,
    catalog: ServiceCatalog,
    workload: Workload,
    config: AgentConfig,
    seed: int = 0,
) -> TrainResult:
    """Train over repeated passes of the workload and finish with one pure
    greedy evaluation pass.

    Epsilon decays by a fixed decrement per trained arrival, from its start
    value down to the floor, persisting across episodes.  The target network
    is refreshed with the main weights every ``target_sync_period`` training
    steps.
    """
    rng = np.random.default_rng(seed)
    qf = QFunction(topology, catalog, arch=config.arch, seed=seed)
    target_qf = qf.clone()
    memory = ReplayMemory(config.replay_capacity)
    omega: list[OmegaRecord] = []
    episodes: list[dict] = []
    train_state = {"steps": 0, "epsilon": config.epsilon_start}

    for episode in range(config.episodes):
        trace, objective, losses = _play_episode(
            topology, catalog, workload, config, qf, target_qf, memory, rng,
            train_state["epsilon"], episode, omega, train_state,
        )
        stats = summarize(trace, topology, config.alpha)
        episodes.append(
            {
                "episode": episode,
                "objective": objective,
                "total_profit": stats["total_profit"],
                "total_energy": stats["total_energy"],
                "supported": stats["supported"],
                "epsilon": train_state["epsilon"],
                "mean_loss": float(np.mean(losses)) if losses else 0.0,
            }
        )

    eval_trace, eval_objective, _ = _play_episode(
        topology, catalog, workload, config, qf, None, None, rng,
        0.0, config.episodes, None, None,
    )
    return TrainResult(
        qfunction=qf,
        target_qfunction=target_qf,
        episodes=episodes,
        omega=omega,
        eval_trace=eval_trace,
        eval_objective=eval_objective,
        final_epsilon=train_state["epsilon"],
    )


# ---------------------------------------------------------------------------
# baselines
# ---------------------------------------------------------------------------

def baseline_rnd(topology: Topology, catalog: ServiceCatalog, workload: Workload,
                 alpha: float, seed: int = 0) -> Trace:
    """Uniform random action per request over the full grid, constraints
    ignored at selection time; allocations that fail the audit stay
    unsupported and consume nothing."""
    from .approximator import action_space

    rng = np.random.default_rng(seed)
    actions = action_space(topology, catalog)
    state = AllocationState.initial(topology, catalog, slot=1)
    records = []
    for t, slot_requests in enumerate(workload, start=1):
        if state.slot != t:
            state = advance_slot(state)
        accepted = []
        rejected = []
        for request in sorted(slot_requests, key=lambda r: r.id):
            action = actions[int(rng.integers(0, len(actions)))] if actions else None
            if action is not None and full_feasibility(state, request, action).feasible:
                state = apply_action(state, request, action)
                accepted.append(state.assignments[request.id])
            else:
                rejected.append(request.id)
        records.append(make_slot_record(slot=t, assignments=accepted, rejected=rejected))
        state = advance_slot(state)
    return Trace(slots=tuple(records))


def baseline_flat_d3ql(topology: Topology, catalog: ServiceCatalog, workload: Workload,
                       config: AgentConfig, seed: int = 0) -> TrainResult:
    """The same loop with the encoder output flattened into a dense-only
    network."""
    flat_config = replace(config, arch=replace(config.arch, flat=True))
    return run_training(topology, catalog, workload, flat_config, seed=seed)
