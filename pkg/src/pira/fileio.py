"""Canonical serialization helpers: byte-stable JSON and CSV emission.

Floats are written with ``repr`` (shortest round-trip form), keys are sorted,
and no timestamps or environment details are embedded, so identical inputs
produce identical bytes.
"""

from __future__ import annotations

import json
import os
from pathlib import Path
from typing import Iterable, Mapping, Sequence

from .allocation import AllocationState, advance_slot, apply_action
from .energy import Trace
from .latency import e2e_latency
from .topology import Topology
from .workload import ServiceCatalog, Workload


def canonical_json(data) -> str:
    return json.dumps(data, sort_keys=True, separators=(",", ":")) + "\n"


def write_json(path: Path, data) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(canonical_json(data), encoding="utf-8")


def read_json(path: Path):
    return json.loads(Path(path).read_text(encoding="utf-8"))


def format_cell(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, bool):
        return "1" if value else "0"
    return str(value)


def write_csv(path: Path, header: Sequence[str], rows: Iterable[Sequence]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = [",".join(header)]
    for row in rows:
        lines.append(",".join(format_cell(cell) for cell in row))
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_csv(path: Path) -> tuple[list[str], list[list[str]]]:
    text = Path(path).read_text(encoding="utf-8").splitlines()
    if not text:
        return [], []
    header = text[0].split(",")
    return header, [line.split(",") for line in text[1:]]


def resolve_out_dir(out: str) -> Path:
    """Output paths resolve under PIRA_OUT_ROOT when set and ``out`` is
    relative."""
    root = os.environ.get("PIRA_OUT_ROOT")
    path = Path(out)
    if root and not path.is_absolute():
        path = Path(root) / path
    path.mkdir(parents=True, exist_ok=True)
    return path


TRACE_HEADER = ("t", "r", "i", "v", "p", "k", "accepted", "violated_constraints")


def trace_rows(trace: Trace) -> list[tuple]:
    rows = []
    for record in trace.slots:
        for a in record.assignments:
            act = a.action
            rows.append((record.slot, a.request.id, act.instance, act.node, act.path,
                         act.priority, 1, ""))
        for rid in record.rejected:
            rows.append((record.slot, rid, None, None, None, None, 0, ""))
    rows.sort(key=lambda row: (row[0], row[1]))
    return rows


def write_trace_csv(path: Path, trace: Trace) -> None:
    write_csv(path, TRACE_HEADER, trace_rows(trace))


LATENCY_AUDIT_HEADER = ("t", "r", "resource_type", "resource_id", "k", "term_ms")


def latency_audit_rows(topology: Topology, catalog: ServiceCatalog, trace: Trace) -> list[tuple]:
    """Replay a trace slot by slot and emit every nonzero latency term."""
    rows = []
    state = AllocationState.initial(topology, catalog, slot=1)
    for record in trace.slots:
        while state.slot < record.slot:
            state = advance_slot(state)
        for a in record.assignments:
            state = apply_action(state, a.request, a.action)
        for a in record.assignments:
            breakdown = e2e_latency(state, a.request)
            for (n, k), term in sorted(breakdown.device_terms.items()):
                rows.append((record.slot, a.request.id, "device", n, k, term))
            rows.append((record.slot, a.request.id, "node", a.action.node,
                         a.action.priority, breakdown.node_term))
            for (l, k), term in sorted(breakdown.link_terms.items()):
                rows.append((record.slot, a.request.id, "link", l, k, term))
        state = advance_slot(state)
    return rows


def write_latency_audit_csv(path: Path, topology: Topology, catalog: ServiceCatalog,
                            trace: Trace) -> None:
    write_csv(path, LATENCY_AUDIT_HEADER, latency_audit_rows(topology, catalog, trace))


def scenario_to_dict(topology: Topology, catalog: ServiceCatalog, workload: Workload) -> dict:
    from .workload import workload_to_dict

    return {
        "topology": topology.to_dict(),
        "catalog": catalog.to_dict(),
        "workload": workload_to_dict(workload),
    }


def scenario_from_dict(data: Mapping) -> tuple[Topology, ServiceCatalog, Workload]:
    from .workload import workload_from_dict

    return (
        Topology.from_dict(data["topology"]),
        ServiceCatalog.from_dict(data["catalog"]),
        workload_from_dict(data["workload"]),
    )
