import numpy as np
import pytest

from pira import Request, build_topology, default_catalog


def make_topology(priority_levels=1, weights=None, caps=None, energies=None,
                  node_caps=None, node_energies=None, transitions=None,
                  shape="line3", latency_scale=1.0, c15_aggregate=False):
    """Small hand-specified graphs used across the tests.

    line2: n0 - n1 with one compute node at n1.
    line3: n0 - n1 - n2 with compute nodes at n1 and n2.
    star: core n0 with edges n1, n2 and node devices n3, n4.
    """
    if shape == "line2":
        device_count, links, attach = 2, [(0, 1)], [1]
    elif shape == "line3":
        device_count, links, attach = 3, [(0, 1), (1, 2)], [1, 2]
    elif shape == "star":
        device_count, links, attach = 5, [(0, 1), (0, 2), (0, 3), (0, 4)], [3, 4]
    else:
        raise ValueError(shape)
    caps = caps or [100.0] * device_count
    energies = energies or [10.0] * device_count
    node_caps = node_caps or [60.0] * len(attach)
    node_energies = node_energies or [10.0] * len(attach)
    transitions = transitions or [100.0] * len(attach)
    spec = {
        "seed": 0,
        "priority_levels": priority_levels,
        "priority_weights": weights,
        "latency_scale": latency_scale,
        "c15_aggregate_load": c15_aggregate,
        "devices": [
            {"total_bandwidth": caps[i], "energy_per_unit": energies[i]}
            for i in range(device_count)
        ],
        "links": [
            {"endpoints": list(ends), "total_bandwidth": min(caps[ends[0]], caps[ends[1]])}
            for ends in links
        ],
        "nodes": [
            {
                "attachment": attach[j],
                "total_capacity": node_caps[j],
                "energy_per_unit": node_energies[j],
                "energy_per_transition": transitions[j],
            }
            for j in range(len(attach))
        ],
    }
    if shape == "star":
        for i in (1, 2):
            spec["devices"][i]["is_edge"] = True
    return build_topology(spec)


def make_request(rid=0, slot=1, poa=0, service=0, capacity=4.0, bandwidth=2.0,
                 latency=1.0, packet=1.0, profit=10.0):
    return Request(
        id=rid, arrival_slot=slot, poa=poa, service=service,
        min_capacity=capacity, min_bandwidth=bandwidth, max_latency=latency,
        packet_size=packet, profit=profit,
    )


@pytest.fixture
def line3():
    return make_topology(priority_levels=2, shape="line3")


@pytest.fixture
def catalog():
    return default_catalog(num_services=2, capacity=20.0)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def random_scenario(rng, num_nodes=2, priority_levels=2, horizon=2, per_slot=3,
                    deadline=(1, 3)):
    """Random desk-scale scenario drawn with Table-style integer laws."""
    from pira import generate_workload

    shape = "line3" if num_nodes == 2 else "star"
    topo = make_topology(
        priority_levels=priority_levels,
        shape=shape,
        caps=None if shape == "line3" else [float(rng.integers(250, 301))] * 5,
        latency_scale=1.0,
    )
    catalog = default_catalog(num_services=2, capacity=20.0)
    qos = {
        "min_capacity": {"kind": "uniform_int", "low": 4, "high": 8},
        "min_bandwidth": {"kind": "uniform_int", "low": 2, "high": 10},
        "max_latency": {"kind": "uniform_int", "low": deadline[0], "high": deadline[1]},
        "packet_size": {"kind": "fixed", "value": 1},
        "profit": {"kind": "uniform_int", "low": 5, "high": 15},
    }
    workload = generate_workload(
        topo, catalog, horizon,
        per_slot={"kind": "fixed", "value": per_slot},
        qos=qos, seed=int(rng.integers(0, 2**31)),
    )
    return topo, catalog, workload
