"""Experiment runner: sweeps over system size and request count, four methods
(oracle, the graph-encoded learner, its flat ablation, random), metric
aggregation, CSV and plot emission.

The size sweep grows a star-shaped infrastructure one device and one compute
node at a time; resources added early draw from a high energy tier, later ones
from moderate and low tiers, so larger systems offer strictly cheaper options
while every earlier configuration remains embedded.  Oracle cells above the
exact-search bounds are marked skipped rather than approximated.
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .agent import AgentConfig, baseline_flat_d3ql, baseline_rnd, run_training
from .energy import Trace, objective_value, summarize
from .fileio import read_csv, write_csv
from .latency import audit_trace
from .oracle import OracleLimits, OracleSizeError, solve_horizon
from .topology import Topology, build_topology
from .workload import ServiceCatalog, Workload, default_catalog, generate_workload

METHODS = ("oracle", "orient", "flat", "rnd")

METRICS_HEADER = (
    "run_id", "method", "num_devices", "num_nodes", "num_requests", "seed",
    "total_profit", "total_energy", "objective", "supported",
    "mean_energy_per_supported", "status",
)

SUMMARY_HEADER = (
    "cell_id", "method", "num_devices", "num_nodes", "num_requests", "runs",
    "objective_mean", "objective_std", "profit_mean", "energy_mean",
    "supported_mean", "mean_energy_per_supported_mean",
)

ENERGY_TIERS = {
    "high": {"unit": (16, 20), "transition": (160, 200)},
    "moderate": {"unit": (13, 16), "transition": (130, 160)},
    "low": {"unit": (10, 13), "transition": (100, 130)},
}


def tier_for_increment(index: int) -> str:
    """Tier of the index-th compute node added to the sweep topology: the base
    system is expensive, later additions get progressively cheaper."""
    if index < 2:
        return "high"
    if index < 3:
        return "moderate"
    return "low"


@dataclass(frozen=True)
class ExperimentPlan:
    sizes: tuple[int, ...] = (2, 3, 4)
    request_totals: tuple[int, ...] = (5, 10, 20)
    methods: tuple[str, ...] = METHODS
    seeds: int = 10
    alpha: float = 0.001
    episodes: int = 300
    requests_per_slot: int = 4
    priority_levels: int = 4
    master_seed: int = 2024
    masked_greedy: bool = True
    step_size: float = 0.05
    discount: float = 0.9
    epsilon_floor: float = 0.05
    workers: int = 1
    oracle_limits: OracleLimits = field(default_factory=OracleLimits)

    def __post_init__(self) -> None:
        for m in self.methods:
            if m not in METHODS:
                raise ValueError(f"unknown method {m!r}; expected one of {METHODS}")
        if self.seeds < 1:
            raise ValueError("at least one seed per cell is required")

    def to_dict(self) -> dict:
        return {
            "sizes": list(self.sizes),
            "request_totals": list(self.request_totals),
            "methods": list(self.methods),
            "seeds": self.seeds,
            "alpha": self.alpha,
            "episodes": self.episodes,
            "requests_per_slot": self.requests_per_slot,
            "priority_levels": self.priority_levels,
            "master_seed": self.master_seed,
            "masked_greedy": self.masked_greedy,
            "step_size": self.step_size,
            "discount": self.discount,
            "epsilon_floor": self.epsilon_floor,
            "workers": self.workers,
        }

    @staticmethod
    def from_dict(data: dict) -> "ExperimentPlan":
        known = {f for f in ExperimentPlan.__dataclass_fields__ if f != "oracle_limits"}
        kwargs = {}
        for key, value in data.items():
            if key not in known:
                raise ValueError(f"unknown plan field {key!r}")
            if key in ("sizes", "request_totals", "methods"):
                value = tuple(value)
            kwargs[key] = value
        return ExperimentPlan(**kwargs)


def sweep_topology_spec(num_nodes: int, seed: int, priority_levels: int = 4) -> dict:
    """Star infrastructure: one core device, two edge devices as PoAs, and one
    device per compute node hanging off the core."""
    devices = [
        {"total_bandwidth": {"range": (250, 300)}, "energy_per_unit": {"range": ENERGY_TIERS["high"]["unit"]}},
        {"total_bandwidth": {"range": (250, 300)}, "energy_per_unit": {"range": ENERGY_TIERS["high"]["unit"]}, "is_edge": True},
        {"total_bandwidth": {"range": (250, 300)}, "energy_per_unit": {"range": ENERGY_TIERS["high"]["unit"]}, "is_edge": True},
    ]
    links = [
        {"endpoints": [0, 1], "total_bandwidth": {"range": (250, 300)}},
        {"endpoints": [0, 2], "total_bandwidth": {"range": (250, 300)}},
    ]
    nodes = []
    for j in range(num_nodes):
        tier = ENERGY_TIERS[tier_for_increment(j)]
        device_id = len(devices)
        devices.append({
            "total_bandwidth": {"range": (250, 300)},
            "energy_per_unit": {"range": tier["unit"]},
        })
        links.append({"endpoints": [0, device_id], "total_bandwidth": {"range": (250, 300)}})
        nodes.append({
            "attachment": device_id,
            "total_capacity": {"range": (250, 300)},
            "energy_per_unit": {"range": tier["unit"]},
            "energy_per_transition": {"range": tier["transition"]},
        })
    return {
        "seed": seed,
        "priority_levels": priority_levels,
        "devices": devices,
        "links": links,
        "nodes": nodes,
        "path_limit": 1,
    }


def build_cell_scenario(plan: ExperimentPlan, num_nodes: int, num_requests: int,
                        seed: int) -> tuple[Topology, ServiceCatalog, Workload]:
    spec = sweep_topology_spec(num_nodes, seed=seed, priority_levels=plan.priority_levels)
    topology = build_topology(spec)
    catalog = default_catalog(num_services=2)
    horizon = max(1, math.ceil(num_requests / plan.requests_per_slot))
    workload = generate_workload(
        topology, catalog, horizon,
        per_slot={"kind": "balanced_total", "total": num_requests},
        seed=seed + 1,
    )
    return topology, catalog, workload


def agent_config(plan: ExperimentPlan, num_requests: int) -> AgentConfig:
    """Epsilon reaches its floor after roughly 60% of the training decisions."""
    decisions = max(1, plan.episodes * num_requests)
    decrement = (1.0 - plan.epsilon_floor) / max(1, int(0.6 * decisions))
    return AgentConfig(
        discount=plan.discount,
        epsilon_decrement=decrement,
        epsilon_floor=plan.epsilon_floor,
        alpha=plan.alpha,
        step_size=plan.step_size,
        episodes=plan.episodes,
        masked_greedy=plan.masked_greedy,
    )


def _cell_seed(plan: ExperimentPlan, num_nodes: int, num_requests: int, seed_index: int) -> int:
    mix = np.random.SeedSequence([plan.master_seed, num_nodes, num_requests, seed_index])
    return int(mix.generate_state(1)[0] % (2 ** 31))


def run_cell_method(plan: ExperimentPlan, num_nodes: int, num_requests: int,
                    seed_index: int, method: str) -> dict:
    """One (cell, method, seed) evaluation; returns a metrics row dict."""
    scenario_seed = _cell_seed(plan, num_nodes, num_requests, seed_index)
    topology, catalog, workload = build_cell_scenario(plan, num_nodes, num_requests, scenario_seed)
    row = {
        "run_id": f"v{num_nodes}-r{num_requests}-s{seed_index}",
        "method": method,
        "num_devices": topology.num_devices,
        "num_nodes": num_nodes,
        "num_requests": num_requests,
        "seed": seed_index,
        "status": "ok",
    }
    try:
        if method == "oracle":
            solution = solve_horizon(topology, catalog, workload, plan.alpha,
                                     limits=plan.oracle_limits)
            trace = solution.trace
        elif method == "orient":
            result = run_training(topology, catalog, workload,
                                  agent_config(plan, num_requests), seed=scenario_seed)
            trace = result.eval_trace
        elif method == "flat":
            result = baseline_flat_d3ql(topology, catalog, workload,
                                        agent_config(plan, num_requests), seed=scenario_seed)
            trace = result.eval_trace
        elif method == "rnd":
            trace = baseline_rnd(topology, catalog, workload, plan.alpha, seed=scenario_seed)
        else:  # pragma: no cover - guarded by plan validation
            raise ValueError(method)
    except OracleSizeError as exc:
        row.update(total_profit=None, total_energy=None, objective=None, supported=None,
                   mean_energy_per_supported=None, status=f"skipped: {exc}")
        return row
    except Exception as exc:
        row.update(total_profit=None, total_energy=None, objective=None, supported=None,
                   mean_energy_per_supported=None, status=f"failed: {exc}")
        return row

    verdicts = audit_trace(topology, catalog, trace)
    bad = [rid for rid, v in verdicts.items() if not v.feasible]
    if bad:
        row.update(total_profit=None, total_energy=None, objective=None, supported=None,
                   mean_energy_per_supported=None,
                   status=f"failed: audit rejected requests {bad}")
        return row

    stats = summarize(trace, topology, plan.alpha)
    row.update(
        total_profit=stats["total_profit"],
        total_energy=stats["total_energy"],
        objective=stats["objective"],
        supported=stats["supported"],
        mean_energy_per_supported=stats["mean_energy_per_supported"],
    )
    return row


def _run_task(args) -> dict:
    return run_cell_method(*args)


def run_experiment(plan: ExperimentPlan) -> list[dict]:
    """All (cell, method, seed) rows in deterministic order.  Cells are
    independent; with ``workers > 1`` they run in separate processes and the
    results are merged in plan order."""
    tasks = [
        (plan, num_nodes, num_requests, seed_index, method)
        for num_nodes in plan.sizes
        for num_requests in plan.request_totals
        for method in plan.methods
        for seed_index in range(plan.seeds)
    ]
    if plan.workers > 1:
        with ProcessPoolExecutor(max_workers=plan.workers) as pool:
            rows = list(pool.map(_run_task, tasks))
    else:
        rows = [run_cell_method(*task) for task in tasks]
    return rows


def aggregate(rows: Sequence[dict]) -> list[dict]:
    """Mean and standard deviation per (cell, method) over its clean runs."""
    groups: dict[tuple, list[dict]] = {}
    order: list[tuple] = []
    for row in rows:
        key = (row["num_nodes"], row["num_requests"], row["method"])
        if key not in groups:
            groups[key] = []
            order.append(key)
        if row["status"] == "ok":
            groups[key].append(row)
    out = []
    for key in order:
        num_nodes, num_requests, method = key
        clean = groups[key]
        if not clean:
            continue
        objs = np.array([r["objective"] for r in clean], dtype=np.float64)
        out.append(
            {
                "cell_id": f"v{num_nodes}-r{num_requests}",
                "method": method,
                "num_devices": clean[0]["num_devices"],
                "num_nodes": num_nodes,
                "num_requests": num_requests,
                "runs": len(clean),
                "objective_mean": float(objs.mean()),
                "objective_std": float(objs.std()),
                "profit_mean": float(np.mean([r["total_profit"] for r in clean])),
                "energy_mean": float(np.mean([r["total_energy"] for r in clean])),
                "supported_mean": float(np.mean([r["supported"] for r in clean])),
                "mean_energy_per_supported_mean": float(
                    np.mean([r["mean_energy_per_supported"] for r in clean])
                ),
            }
        )
    return out


def export_metrics(rows: Sequence[dict], out_dir: Path) -> tuple[Path, Path]:
    out_dir = Path(out_dir)
    metrics_path = out_dir / "metrics.csv"
    write_csv(metrics_path, METRICS_HEADER,
              [[row.get(col) for col in METRICS_HEADER] for row in rows])
    summary_path = out_dir / "summary.csv"
    write_csv(summary_path, SUMMARY_HEADER,
              [[row.get(col) for col in SUMMARY_HEADER] for row in aggregate(rows)])
    return metrics_path, summary_path


PLOT_METRICS = (
    ("objective_mean", "objective"),
    ("mean_energy_per_supported_mean", "energy_per_request"),
    ("profit_mean", "profit"),
)


def export_plots(rows: Sequence[dict], out_dir: Path) -> list[Path]:
    """Four-curve comparison figures: each metric against system size at the
    largest request count, and against request count at the largest size."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    summary = aggregate(rows)
    if not summary:
        return []
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    sizes = sorted({row["num_nodes"] for row in summary})
    totals = sorted({row["num_requests"] for row in summary})
    methods = []
    for row in summary:
        if row["method"] not in methods:
            methods.append(row["method"])
    paths = []

    def series(metric, fixed_key, fixed_value, x_key, x_values, method):
        points = {
            row[x_key]: row[metric]
            for row in summary
            if row["method"] == method and row[fixed_key] == fixed_value
        }
        return [points.get(x) for x in x_values]

    for metric, name in PLOT_METRICS:
        fig, axes = plt.subplots(1, 2, figsize=(9, 3.2))
        for method in methods:
            axes[0].plot(sizes, series(metric, "num_requests", totals[-1], "num_nodes", sizes, method),
                         marker="o", label=method)
            axes[1].plot(totals, series(metric, "num_nodes", sizes[-1], "num_requests", totals, method),
                         marker="o", label=method)
        axes[0].set_xlabel("compute nodes")
        axes[0].set_title(f"{name} vs system size (R={totals[-1]})")
        axes[1].set_xlabel("total requests")
        axes[1].set_title(f"{name} vs request count (V={sizes[-1]})")
        for ax in axes:
            ax.grid(True, alpha=0.3)
        axes[0].legend(fontsize=8)
        fig.tight_layout()
        path = out_dir / f"sweep_{name}.png"
        fig.savefig(path, dpi=110, metadata={"Software": "pira"})
        plt.close(fig)
        paths.append(path)
    return paths


def load_metrics_csv(path: Path) -> list[dict]:
    header, raw_rows = read_csv(path)
    rows = []
    for raw in raw_rows:
        row = dict(zip(header, raw))
        for col in ("num_devices", "num_nodes", "num_requests", "seed", "supported"):
            if row.get(col):
                row[col] = int(float(row[col]))
        for col in ("total_profit", "total_energy", "objective", "mean_energy_per_supported"):
            row[col] = float(row[col]) if row.get(col) else None
        rows.append(row)
    return rows
