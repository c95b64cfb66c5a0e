"""Desk-scale simulator and solver toolkit for joint service-instance
placement/assignment, path selection, and request prioritization on an
integrated compute/network graph."""

from .allocation import (
    Action,
    AllocationError,
    AllocationState,
    Assignment,
    FeasibilityVerdict,
    advance_slot,
    apply_action,
    check_feasibility,
)
from .energy import (
    EnergyLedger,
    SlotRecord,
    Trace,
    energy_ledger,
    make_slot_record,
    objective_value,
    summarize,
    transition_count,
)
from .latency import (
    LatencyBreakdown,
    UnstableQueueError,
    device_latency,
    e2e_latency,
    full_feasibility,
    link_latency,
    node_latency,
)
from .topology import (
    ComputeNode,
    Link,
    NetworkDevice,
    Path,
    Topology,
    TopologyError,
    build_topology,
    enumerate_paths,
    partition_priorities,
)
from .workload import (
    Instance,
    Request,
    ServiceCatalog,
    WorkloadError,
    default_catalog,
    generate_workload,
    total_requests,
    workload_from_json,
    workload_to_json,
)

__version__ = "0.1.0"
