import json

import numpy as np
import pytest

from pira import Action, AllocationState, apply_action, build_topology, default_catalog
from pira.approximator import (
    Architecture,
    QFunction,
    StateFeatures,
    action_index,
    action_space,
    bilinear_backward,
    bilinear_forward,
    check_loss_gradients,
    dense_backward,
    dense_forward,
    dueling_backward,
    dueling_forward,
    encode_state,
    finite_difference,
    gather_backward,
    gather_forward,
    mean_pool_backward,
    mean_pool_forward,
    neighbor_mean_backward,
    neighbor_mean_forward,
    node_feature_rows,
    path_feature_rows,
    relative_error,
    relu_backward,
    relu_forward,
)

from conftest import make_request, make_topology


def project(out, probe):
    return float((out * probe).sum())


def test_dense_gradients_match_fd(rng):
    x = rng.normal(size=(3, 4, 5))
    w = rng.normal(size=(5, 6))
    b = rng.normal(size=(6,))
    probe = rng.normal(size=(3, 4, 6))
    out, cache = dense_forward(x, w, b)
    dx, dw, db = dense_backward(probe, cache)
    assert relative_error(dx, finite_difference(lambda: project(dense_forward(x, w, b)[0], probe), x)) < 1e-6
    assert relative_error(dw, finite_difference(lambda: project(dense_forward(x, w, b)[0], probe), w)) < 1e-6
    assert relative_error(db, finite_difference(lambda: project(dense_forward(x, w, b)[0], probe), b)) < 1e-6


def test_relu_gradients_match_fd(rng):
    x = rng.normal(size=(4, 7)) + 0.05  # keep away from the kink
    probe = rng.normal(size=(4, 7))
    out, cache = relu_forward(x)
    dx = relu_backward(probe, cache)
    assert relative_error(dx, finite_difference(lambda: project(relu_forward(x)[0], probe), x)) < 1e-6


def test_neighbor_mean_gradients_match_fd(rng):
    adj = rng.uniform(size=(5, 5))
    adj /= adj.sum(axis=1, keepdims=True)
    h = rng.normal(size=(2, 5, 3))
    probe = rng.normal(size=(2, 5, 3))
    out, cache = neighbor_mean_forward(h, adj)
    dh = neighbor_mean_backward(probe, cache)
    assert relative_error(dh, finite_difference(lambda: project(neighbor_mean_forward(h, adj)[0], probe), h)) < 1e-6


def test_mean_pool_gradients_match_fd(rng):
    x = rng.normal(size=(3, 6, 4))
    probe = rng.normal(size=(3, 4))
    out, cache = mean_pool_forward(x)
    dx = mean_pool_backward(probe, cache)
    assert relative_error(dx, finite_difference(lambda: project(mean_pool_forward(x)[0], probe), x)) < 1e-6


def test_gather_gradients_match_fd(rng):
    h = rng.normal(size=(2, 5, 3))
    index = np.array([0, 2, 2, 4, 1])
    probe = rng.normal(size=(2, 5, 3))
    out, cache = gather_forward(h, index)
    dh = gather_backward(probe, cache)
    assert relative_error(dh, finite_difference(lambda: project(gather_forward(h, index)[0], probe), h)) < 1e-6


def test_bilinear_gradients_match_fd(rng):
    hv = rng.normal(size=(2, 3, 4))
    hp = rng.normal(size=(2, 5, 4))
    w = rng.normal(size=(4, 4))
    probe = rng.normal(size=(2, 3, 5))
    out, cache = bilinear_forward(hv, hp, w)
    dhv, dhp, dw = bilinear_backward(probe, cache)
    assert relative_error(dhv, finite_difference(lambda: project(bilinear_forward(hv, hp, w)[0], probe), hv)) < 1e-6
    assert relative_error(dhp, finite_difference(lambda: project(bilinear_forward(hv, hp, w)[0], probe), hp)) < 1e-6
    assert relative_error(dw, finite_difference(lambda: project(bilinear_forward(hv, hp, w)[0], probe), w)) < 1e-6


@pytest.mark.parametrize("product", [False, True])
def test_dueling_gradients_match_fd(rng, product):
    psi = rng.normal(size=(3, 1))
    phi = rng.normal(size=(3, 6))
    probe = rng.normal(size=(3, 6))
    out, cache = dueling_forward(psi, phi, product)
    dpsi, dphi = dueling_backward(probe, cache)
    assert relative_error(dpsi, finite_difference(lambda: project(dueling_forward(psi, phi, product)[0], probe), psi)) < 1e-6
    assert relative_error(dphi, finite_difference(lambda: project(dueling_forward(psi, phi, product)[0], probe), phi)) < 1e-6


def test_dueling_additive_arithmetic():
    psi = np.array([[2.0]])
    phi = np.array([[1.0, 3.0]])
    q, _ = dueling_forward(psi, phi, product=False)
    assert np.array_equal(q, np.array([[1.0, 3.0]]))


def test_dueling_constant_shift_invariance(rng):
    psi = rng.normal(size=(2, 1))
    phi = rng.normal(size=(2, 8))
    q1, _ = dueling_forward(psi, phi, product=False)
    q2, _ = dueling_forward(psi, phi + 7.5, product=False)
    assert np.allclose(q1, q2, atol=1e-12)


def test_dueling_product_literal_form(rng):
    psi = np.array([[2.0]])
    phi = np.array([[1.0, 3.0]])
    q, _ = dueling_forward(psi, phi, product=True)
    assert np.array_equal(q, np.array([[-2.0, 2.0]]))


@pytest.fixture
def small_scenario():
    topo = make_topology(priority_levels=2, shape="line3")
    catalog = default_catalog(2)
    state = AllocationState.initial(topo, catalog)
    request = make_request(capacity=4.0, bandwidth=2.0, latency=2.0)
    return topo, catalog, state, request


def test_whole_net_gradcheck_both_archs(small_scenario, rng):
    topo, catalog, state, request = small_scenario
    feats = [encode_state(state, request)]
    for flat in (False, True):
        for product in (False, True):
            qf = QFunction(topo, catalog, Architecture(hidden=6, flat=flat,
                                                       dueling_product=product), seed=5)
            actions = rng.integers(0, qf.num_actions, size=1)
            targets = rng.normal(size=1)
            assert check_loss_gradients(qf, feats, actions, targets) < 1e-6


def test_zero_weights_zero_q(small_scenario):
    topo, catalog, state, request = small_scenario
    qf = QFunction(topo, catalog, seed=0)
    qf.zero_params()
    assert np.array_equal(qf.q_values(encode_state(state, request)),
                          np.zeros(qf.num_actions))


def test_idle_state_capacity_slack(small_scenario):
    topo, catalog, state, request = small_scenario
    rows = node_feature_rows(state, request)
    levels = topo.priority_levels
    for v in range(topo.num_nodes):
        for k in range(levels):
            assert rows[v, k] == topo.nodes[v].priority_capacity[k] - request.min_capacity


def test_boot_feature_zero_when_active(small_scenario):
    topo, catalog, state, request = small_scenario
    levels = topo.priority_levels
    rows = node_feature_rows(state, request)
    assert rows[0, 2 * levels + 1] == topo.nodes[0].energy_per_transition
    pid = topo.candidate_paths(0, topo.attachment[0])[0]
    state = apply_action(state, request, Action(0, 0, pid, 0))
    nxt = make_request(rid=1, service=1)
    rows = node_feature_rows(state, nxt)
    assert rows[0, 2 * levels + 1] == 0.0


def test_bottleneck_bandwidth_slack_negative_hint():
    topo = build_topology({
        "priority_levels": 1,
        "devices": [{"total_bandwidth": 100, "energy_per_unit": 1},
                    {"total_bandwidth": 6, "energy_per_unit": 1}],
        "links": [{"endpoints": [0, 1], "total_bandwidth": 100}],
        "nodes": [{"attachment": 1, "total_capacity": 20, "energy_per_unit": 1}],
    })
    state = AllocationState.initial(topo, default_catalog(1))
    request = make_request(bandwidth=10.0)
    rows = path_feature_rows(state, request)
    assert rows[0, 0] == 6.0 - 10.0  # bottleneck residual 6, demand 10


def test_unreachable_path_sentinel(small_scenario):
    topo, catalog, state, _ = small_scenario
    request = make_request(poa=2)
    feats = encode_state(state, request)
    levels = topo.priority_levels
    for p in range(topo.num_paths):
        if topo.paths[p].endpoint_device != 2:
            assert np.all(feats.path_features[p, : 2 * levels] == -1.0)


def test_normalized_features_bounded(small_scenario):
    topo, catalog, state, request = small_scenario
    feats = encode_state(state, request)
    for arr in (feats.node_features, feats.path_features):
        assert np.all(arr >= -1.0) and np.all(arr <= 4.0)
        assert np.all(np.isfinite(arr))


def test_feature_shapes(small_scenario):
    topo, catalog, state, request = small_scenario
    feats = encode_state(state, request)
    levels = topo.priority_levels
    assert feats.node_features.shape == (topo.num_nodes, 2 * levels + 2)
    assert feats.path_features.shape == (topo.num_paths, 2 * levels + 1)


def test_permutation_equivariance():
    # swap the two compute nodes of the star topology; Q-values must permute
    # with the action relabeling exactly
    base_spec = {
        "priority_levels": 2,
        "devices": [
            {"total_bandwidth": 300, "energy_per_unit": 10},
            {"total_bandwidth": 280, "energy_per_unit": 12, "is_edge": True},
            {"total_bandwidth": 260, "energy_per_unit": 14, "is_edge": True},
            {"total_bandwidth": 290, "energy_per_unit": 16},
            {"total_bandwidth": 270, "energy_per_unit": 18},
        ],
        "links": [{"endpoints": [0, i], "total_bandwidth": 250} for i in (1, 2, 3, 4)],
        "nodes": [
            {"attachment": 3, "total_capacity": 260, "energy_per_unit": 11,
             "energy_per_transition": 120},
            {"attachment": 4, "total_capacity": 240, "energy_per_unit": 13,
             "energy_per_transition": 140},
        ],
    }
    swapped_spec = dict(base_spec, nodes=[base_spec["nodes"][1], base_spec["nodes"][0]])
    topo = build_topology(base_spec)
    topo_swapped = build_topology(swapped_spec)
    catalog = default_catalog(2)
    request = make_request(poa=1, capacity=4.0, bandwidth=2.0, latency=2.0)

    qf = QFunction(topo, catalog, Architecture(hidden=8), seed=3)
    qf_swapped = QFunction(topo_swapped, catalog, Architecture(hidden=8), seed=99)
    qf_swapped.params = {k: v.copy() for k, v in qf.params.items()}

    state = AllocationState.initial(topo, catalog)
    state_swapped = AllocationState.initial(topo_swapped, catalog)
    q = qf.q_values(encode_state(state, request))
    q_swapped = qf_swapped.q_values(encode_state(state_swapped, request))

    perm = {0: 1, 1: 0}
    # relabeling the nodes also relabels the enumerated walks; match by route
    path_perm = {
        p.id: next(p2.id for p2 in topo_swapped.paths if p2.devices == p.devices)
        for p in topo.paths
    }
    for action in action_space(topo, catalog):
        mapped = Action(action.instance, perm[action.node], path_perm[action.path],
                        action.priority)
        i = action_index(topo, catalog, action)
        j = action_index(topo_swapped, catalog, mapped)
        assert q[i] == pytest.approx(q_swapped[j], abs=1e-12)


def test_training_is_bit_deterministic(small_scenario, rng):
    topo, catalog, state, request = small_scenario
    feats = [encode_state(state, request)] * 4

    def run():
        qf = QFunction(topo, catalog, Architecture(hidden=8), seed=7)
        local = np.random.default_rng(3)
        for _ in range(20):
            actions = local.integers(0, qf.num_actions, size=4)
            targets = local.normal(size=4)
            qf.train_step(feats, actions, targets, step_size=0.05)
        return qf.params

    a, b = run(), run()
    for name in a:
        assert np.array_equal(a[name], b[name])


def test_train_step_matches_hand_update(small_scenario):
    # one sample: the update must equal step * (Q - Y) * grad Q exactly
    topo, catalog, state, request = small_scenario
    qf = QFunction(topo, catalog, Architecture(hidden=4), seed=11)
    feats = [encode_state(state, request)]
    action = np.array([qf.num_actions // 2])
    target = np.array([0.7])
    q, caches = qf.forward(feats)
    diff = float(q[0, action[0]]) - 0.7
    dq = np.zeros_like(q)
    dq[0, action[0]] = 1.0
    grad_q = qf.backward(caches, dq)
    before = {k: v.copy() for k, v in qf.params.items()}
    loss = qf.train_step(feats, action, target, step_size=0.1)
    assert loss == pytest.approx(0.5 * diff ** 2, rel=1e-12)
    for name in before:
        expected = before[name] - 0.1 * diff * grad_q[name]
        assert np.allclose(qf.params[name], expected, atol=1e-15)


def test_checkpoint_round_trip_exact(small_scenario):
    topo, catalog, state, request = small_scenario
    qf = QFunction(topo, catalog, Architecture(hidden=8), seed=21)
    text = qf.to_json()
    again = QFunction.from_dict(json.loads(text), topo, catalog)
    for name in qf.params:
        assert np.array_equal(qf.params[name], again.params[name])
    assert again.to_json() == text


def test_checkpoint_shape_mismatch_rejected(small_scenario):
    topo, catalog, state, request = small_scenario
    qf = QFunction(topo, catalog, Architecture(hidden=8), seed=21)
    data = qf.to_dict()
    data["params"]["w_node"]["shape"] = [1, 1]
    data["params"]["w_node"]["data"] = [0.0]
    fresh = QFunction(topo, catalog, Architecture(hidden=8), seed=0)
    with pytest.raises(ValueError, match="shape"):
        fresh.load_params(data)


def test_nonfinite_gradients_skip_step(small_scenario):
    topo, catalog, state, request = small_scenario
    qf = QFunction(topo, catalog, Architecture(hidden=4), seed=1)
    feats = [encode_state(state, request)]
    before = {k: v.copy() for k, v in qf.params.items()}
    loss = qf.train_step(feats, np.array([0]), np.array([np.inf]), step_size=0.1)
    assert np.isnan(loss)
    for name in before:
        assert np.array_equal(qf.params[name], before[name])
