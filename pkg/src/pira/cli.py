"""Command-line entry points: scenario generation, exact solving, agent
training, comparison sweeps, and plotting.

Exit codes: 0 on success, 1 for configuration errors, 2 for runtime failures.
All outputs are byte-deterministic for a fixed seed.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .agent import AgentConfig, OmegaRecord, baseline_flat_d3ql, run_training
from .fileio import (
    read_json,
    resolve_out_dir,
    scenario_from_dict,
    scenario_to_dict,
    write_csv,
    write_json,
    write_latency_audit_csv,
    write_trace_csv,
)
from .harness import ExperimentPlan, export_metrics, export_plots, load_metrics_csv, run_experiment
from .oracle import OracleLimits, solve_horizon
from .topology import TopologyError, build_topology
from .workload import WorkloadError, default_catalog, generate_workload

CONFIG_ERRORS = (TopologyError, WorkloadError, ValueError, KeyError, json.JSONDecodeError)


def _cmd_gen(args) -> int:
    config = read_json(args.config) if args.config else {}
    topo_spec = dict(config.get("topology", {}))
    if not topo_spec:
        from .harness import sweep_topology_spec

        topo_spec = sweep_topology_spec(num_nodes=3, seed=0)
    if args.seed is not None:
        topo_spec["seed"] = args.seed
    topology = build_topology(topo_spec)

    cat_spec = config.get("catalog", {})
    if "instances" in cat_spec:
        from .workload import ServiceCatalog

        catalog = ServiceCatalog.from_dict(cat_spec)
    else:
        catalog = default_catalog(
            num_services=int(cat_spec.get("num_services", 2)),
            instances_per_service=int(cat_spec.get("instances_per_service", 1)),
            capacity=float(cat_spec.get("capacity", 20.0)),
        )

    wl_spec = dict(config.get("workload", {}))
    horizon = args.horizon if args.horizon is not None else int(wl_spec.get("horizon", 2))
    if args.requests_total is not None:
        per_slot = {"kind": "balanced_total", "total": args.requests_total}
    else:
        per_slot = wl_spec.get("per_slot", {"kind": "fixed", "value": 2})
    seed = args.seed if args.seed is not None else int(wl_spec.get("seed", 0))
    workload = generate_workload(
        topology, catalog, horizon, per_slot, qos=wl_spec.get("qos"), seed=seed + 1,
    )

    out = resolve_out_dir(args.out)
    write_json(out / "scenario.json", scenario_to_dict(topology, catalog, workload))
    print(f"wrote {out / 'scenario.json'}")
    return 0


def _cmd_solve(args) -> int:
    topology, catalog, workload = scenario_from_dict(read_json(args.scenario))
    limits = OracleLimits()
    solution = solve_horizon(topology, catalog, workload, args.alpha, limits=limits)
    out = resolve_out_dir(args.out)
    write_trace_csv(out / "trace.csv", solution.trace)
    write_latency_audit_csv(out / "latency_audit.csv", topology, catalog, solution.trace)
    write_json(out / "solution.json", {
        "objective": solution.objective,
        "supported": solution.trace.supported_count(),
        "alpha": args.alpha,
    })
    print(f"objective {solution.objective!r} -> {out / 'solution.json'}")
    return 0


OMEGA_HEADER = ("episode", "t", "r", "i", "v", "p", "k", "reward", "connected")


def _omega_rows(omega: list[OmegaRecord]) -> list[tuple]:
    rows = []
    for rec in omega:
        act = rec.action
        rows.append((
            rec.episode, rec.slot, rec.request_id,
            act.instance if act else None, act.node if act else None,
            act.path if act else None, act.priority if act else None,
            rec.reward, rec.connected,
        ))
    return rows


def _cmd_train(args) -> int:
    topology, catalog, workload = scenario_from_dict(read_json(args.scenario))
    config = AgentConfig.from_dict(read_json(args.agent)) if args.agent else AgentConfig()
    if args.episodes is not None:
        from dataclasses import replace

        config = replace(config, episodes=args.episodes)
    if args.method == "flat":
        result = baseline_flat_d3ql(topology, catalog, workload, config, seed=args.seed)
    else:
        result = run_training(topology, catalog, workload, config, seed=args.seed)

    out = resolve_out_dir(args.out)
    write_json(out / "checkpoint.json", result.qfunction.to_dict())
    write_csv(
        out / "episodes.csv",
        ("episode", "objective", "total_profit", "total_energy", "supported", "epsilon", "mean_loss"),
        [
            (e["episode"], e["objective"], e["total_profit"], e["total_energy"],
             e["supported"], e["epsilon"], e["mean_loss"])
            for e in result.episodes
        ],
    )
    write_csv(out / "omega.csv", OMEGA_HEADER, _omega_rows(result.omega))
    write_trace_csv(out / "eval_trace.csv", result.eval_trace)
    write_json(out / "result.json", {
        "method": args.method,
        "eval_objective": result.eval_objective,
        "episodes": config.episodes,
        "final_epsilon": result.final_epsilon,
        "seed": args.seed,
    })
    print(f"eval objective {result.eval_objective!r} -> {out / 'result.json'}")
    return 0


def _cmd_sweep(args) -> int:
    plan = ExperimentPlan.from_dict(read_json(args.config)) if args.config else ExperimentPlan()
    rows = run_experiment(plan)
    out = resolve_out_dir(args.out)
    metrics_path, summary_path = export_metrics(rows, out)
    made = [metrics_path, summary_path]
    if args.plot:
        made += export_plots(rows, out)
    print("wrote " + ", ".join(str(p) for p in made))
    return 0


def _cmd_plot(args) -> int:
    rows = load_metrics_csv(args.metrics)
    out = resolve_out_dir(args.out)
    paths = export_plots(rows, out)
    print("wrote " + ", ".join(str(p) for p in paths))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="pira", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="generate a scenario bundle (topology, catalog, workload)")
    p.add_argument("--config", type=Path, help="scenario build config (JSON)")
    p.add_argument("--requests-total", type=int, help="total requests, spread over the horizon")
    p.add_argument("--horizon", type=int, help="number of time slots")
    p.add_argument("--seed", type=int, help="draw seed")
    p.add_argument("--out", default="out", help="output directory")
    p.set_defaults(func=_cmd_gen)

    p = sub.add_parser("solve", help="exact solve of a scenario")
    p.add_argument("--scenario", type=Path, required=True)
    p.add_argument("--alpha", type=float, default=0.001)
    p.add_argument("--out", default="out", help="output directory")
    p.set_defaults(func=_cmd_solve)

    p = sub.add_parser("train", help="train an agent on a scenario")
    p.add_argument("--scenario", type=Path, required=True)
    p.add_argument("--agent", type=Path, help="agent config (JSON)")
    p.add_argument("--method", choices=("orient", "flat"), default="orient")
    p.add_argument("--episodes", type=int)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default="out", help="output directory")
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("sweep", help="run a comparison sweep")
    p.add_argument("--config", type=Path, help="experiment plan (JSON)")
    p.add_argument("--plot", action="store_true", help="also write comparison figures")
    p.add_argument("--out", default="out", help="output directory")
    p.set_defaults(func=_cmd_sweep)

    p = sub.add_parser("plot", help="plot a metrics CSV")
    p.add_argument("--metrics", type=Path, required=True)
    p.add_argument("--out", default="out", help="output directory")
    p.set_defaults(func=_cmd_plot)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except CONFIG_ERRORS as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except FileNotFoundError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # noqa: BLE001 - CLI boundary
        print(f"runtime failure: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
