import numpy as np
import pytest

from hyperite import diffcore as dc
from hyperite import geometry as G
from hyperite.encoder import (
    HgcnConfig,
    aggregate,
    encode,
    hgcn_layer,
    hyp_activation,
    hyp_bias_add,
    hyp_linear,
    lift_features,
)
from hyperite.graph import Graph, GraphError


def path3():
    return Graph(3, [(0, 1), (1, 2)])


def random_graph(n, p, rng):
    edges = [(i, j) for i in range(n) for j in range(i + 1, n) if rng.uniform() < p]
    return Graph(n, edges)


# graph ------------------------------------------------------------------------------
def test_graph_basics():
    g = Graph(4, [(2, 0), (1, 2), (3, 2)])
    assert g.num_edges == 3
    assert g.degrees.sum() == 2 * g.num_edges
    assert sorted(g.neighbors(2).tolist()) == [0, 1, 3]
    assert 2 in g.neighbors(0) and 0 in g.neighbors(2)
    np.testing.assert_array_equal(g.aug_degrees, g.degrees + 1)


def test_graph_rejects_bad_edges():
    with pytest.raises(GraphError, match="self-loop"):
        Graph(3, [(1, 1)])
    with pytest.raises(GraphError):
        Graph(3, [(0, 1), (1, 0)])
    with pytest.raises(GraphError):
        Graph(3, [(0, 3)])


def test_aggregation_weight_formula():
    # degrees 3 and 1: 1 / sqrt(4 * 2)
    g = Graph(4, [(0, 1), (0, 2), (0, 3)])
    assert g.agg_weight(0, 1) == pytest.approx(0.3535534, abs=1e-7)
    A = g.norm_adjacency().toarray()
    np.testing.assert_allclose(np.diag(A), 1.0 / g.aug_degrees)
    for i in range(4):
        row = A[i][A[i] > 0]
        assert row.sum() <= g.aug_degrees[i] * row.max() + 1e-15


# layer pieces ---------------------------------------------------------------------
def test_lift_examples():
    np.testing.assert_array_equal(lift_features(np.zeros((2, 3)), 1.0), np.zeros((2, 3)))
    np.testing.assert_allclose(lift_features(np.array([0.5, 0.0]), 1.0), [0.4621171573, 0.0], atol=1e-10)
    x = np.random.default_rng(0).standard_normal((5, 4))
    np.testing.assert_allclose(G.log_map0(lift_features(x, 0.1), 0.1), x, atol=1e-10)


def test_hyp_linear_examples():
    rng = np.random.default_rng(1)
    x = G.exp_map0(0.3 * rng.standard_normal((4, 3)), 0.5)
    np.testing.assert_allclose(hyp_linear(np.eye(3), x, 0.5), x, atol=1e-12)
    np.testing.assert_array_equal(hyp_linear(np.zeros((2, 3)), x, 0.5), np.zeros((4, 2)))
    W = rng.standard_normal((2, 3))
    ref = G.exp_map0(G.log_map0(x, 0.5) @ W.T, 0.5)
    np.testing.assert_allclose(hyp_linear(W, x, 0.5), ref, rtol=1e-12)
    with pytest.raises(ValueError, match="shape mismatch"):
        hyp_linear(np.ones((2, 4)), x, 0.5)


def test_hyp_bias_examples():
    rng = np.random.default_rng(2)
    x = G.exp_map0(0.3 * rng.standard_normal(3), 1.0)
    b = rng.standard_normal(3) * 0.2
    np.testing.assert_allclose(hyp_bias_add(x, np.zeros(3), 1.0), x, atol=1e-14)
    np.testing.assert_allclose(hyp_bias_add(np.zeros(3), b, 1.0), G.exp_map0(b, 1.0), atol=1e-14)
    np.testing.assert_allclose(hyp_bias_add(x, b, 0.0), x + b)
    np.testing.assert_allclose(hyp_bias_add(x, b, 1.0), G.mobius_add(x, G.exp_map0(b, 1.0), 1.0), rtol=1e-12)


def test_aggregate_isolated_and_pair():
    rng = np.random.default_rng(3)
    x = G.exp_map0(0.4 * rng.standard_normal((2, 3)), 1.0)
    np.testing.assert_allclose(aggregate(x, Graph(2), 1.0), x, atol=1e-12)
    out = aggregate(x, Graph(2, [(0, 1)]), 1.0)
    ref = G.exp_map0(0.5 * G.log_map0(x[0], 1.0) + 0.5 * G.log_map0(x[1], 1.0), 1.0)
    np.testing.assert_allclose(out[0], ref, rtol=1e-12)
    np.testing.assert_allclose(out[1], ref, rtol=1e-12)


def test_activation_examples():
    np.testing.assert_array_equal(hyp_activation(np.zeros(3), 1.0), np.zeros(3))
    x = G.exp_map0(np.array([0.2, 0.7, 0.0]), 1.0)
    np.testing.assert_allclose(hyp_activation(x, 1.0), x, atol=1e-14)
    np.testing.assert_array_equal(hyp_activation(np.array([-1.0, 2.0]), 0.0), [0.0, 2.0])


def test_layer_identity_chain():
    x = G.exp_map0(np.array([[0.1, 0.3]]), 1.0)
    out = hgcn_layer(x, np.eye(2), np.zeros(2), Graph(1), 1.0)
    np.testing.assert_allclose(out, x, atol=1e-12)


def test_layer_euclidean_is_gcn():
    rng = np.random.default_rng(4)
    g = random_graph(6, 0.5, rng)
    X = rng.standard_normal((6, 3))
    W, b = rng.standard_normal((4, 3)), rng.standard_normal(4)
    A = g.norm_adjacency().toarray()
    np.testing.assert_allclose(hgcn_layer(X, W, b, g, 0.0), np.maximum(A @ (X @ W.T + b), 0), rtol=1e-12)


def test_layer_matches_stepwise_reference_on_path():
    rng = np.random.default_rng(5)
    c = 0.5
    x = G.exp_map0(0.3 * rng.standard_normal((3, 2)), c)
    W, b = 0.5 * rng.standard_normal((2, 2)), 0.1 * rng.standard_normal(2)
    h = G.exp_map0(G.log_map0(x, c) @ W.T, c)
    h = G.mobius_add(h, G.exp_map0(b, c), c)
    logs = G.log_map0(h, c)
    d = np.array([2.0, 3.0, 2.0])
    nbrs = {0: [0, 1], 1: [0, 1, 2], 2: [1, 2]}
    agg = np.stack([sum(logs[j] / np.sqrt(d[i] * d[j]) for j in nbrs[i]) for i in range(3)])
    ref = G.exp_map0(np.maximum(agg, 0), c)
    np.testing.assert_allclose(hgcn_layer(x, W, b, path3(), c), ref, rtol=1e-10, atol=1e-14)


# encoder ---------------------------------------------------------------------------
def make_params(cfg, seed, scale=1.0):
    store = dc.init_params(cfg.param_shapes(), seed)
    rng = np.random.default_rng(seed + 100)
    for k, p in store.items():
        if k.startswith("enc.W"):
            p.data = scale * rng.uniform(-1, 1, p.shape)
        else:
            p.data = 0.1 * rng.standard_normal(p.shape)
    return store.state()


def test_encode_identity_chain():
    X = np.array([[0.2, 0.1], [0.0, 0.4]])
    cfg = HgcnConfig(in_dim=2, hidden_dim=2, layers=1, c=1.0)
    _, h = encode(X, Graph(2), cfg, {"enc.W0": np.eye(2), "enc.b0": np.zeros(2)})
    np.testing.assert_allclose(h, X, atol=1e-12)


def test_encode_euclidean_is_plain_gcn():
    rng = np.random.default_rng(6)
    g = random_graph(8, 0.4, rng)
    X = rng.standard_normal((8, 3))
    cfg = HgcnConfig(in_dim=3, hidden_dim=4, layers=2, c=0.0)
    p = make_params(cfg, 0)
    A = g.norm_adjacency().toarray()
    h = X
    for l in range(2):
        h = np.maximum(A @ (h @ p[f"enc.W{l}"].T + p[f"enc.b{l}"]), 0)
    ball, tan = encode(X, g, cfg, p)
    np.testing.assert_allclose(tan, h, rtol=1e-12)
    np.testing.assert_array_equal(ball, tan)


def test_encode_tangent_is_log_of_ball():
    rng = np.random.default_rng(7)
    g = random_graph(12, 0.3, rng)
    cfg = HgcnConfig(in_dim=5, hidden_dim=6, layers=2, c=0.1)
    ball, tan = encode(rng.standard_normal((12, 5)), g, cfg, make_params(cfg, 1))
    np.testing.assert_allclose(G.log_map0(ball, 0.1), tan, atol=1e-10)
    assert np.all(0.1 * np.sum(ball**2, axis=1) < 1)


def test_encode_permutation_equivariance():
    rng = np.random.default_rng(8)
    g = random_graph(12, 0.3, rng)
    X = rng.standard_normal((12, 4))
    cfg = HgcnConfig(in_dim=4, hidden_dim=5, layers=2, c=1e-1)
    p = make_params(cfg, 2)
    perm = rng.permutation(12)
    _, h = encode(X, g, cfg, p)
    # node i becomes node perm[i]
    Xp = np.empty_like(X)
    Xp[perm] = X
    _, hp = encode(Xp, g.permuted(perm), cfg, p)
    np.testing.assert_allclose(hp[perm], h, rtol=1e-12, atol=1e-15)


def test_encode_curvature_continuity():
    rng = np.random.default_rng(9)
    g = random_graph(12, 0.3, rng)
    X = rng.standard_normal((12, 4))
    cfg0 = HgcnConfig(in_dim=4, hidden_dim=5, layers=2, c=0.0)
    cfg1 = HgcnConfig(in_dim=4, hidden_dim=5, layers=2, c=1e-6)
    p = make_params(cfg0, 3)
    _, h0 = encode(X, g, cfg0, p)
    _, h1 = encode(X, g, cfg1, p)
    np.testing.assert_allclose(h1, h0, atol=1e-3)


def test_intermediate_points_inside_ball():
    rng = np.random.default_rng(10)
    g = random_graph(10, 0.4, rng)
    c = 1.0
    x = lift_features(5 * rng.standard_normal((10, 3)), c)
    for _ in range(3):
        W, b = 3 * rng.standard_normal((3, 3)), rng.standard_normal(3)
        x = hyp_linear(W, x, c)
        assert np.all(c * np.sum(x**2, axis=1) < 1)
        x = hyp_bias_add(x, b, c)
        assert np.all(c * np.sum(x**2, axis=1) < 1)
        x = aggregate(x, g, c)
        assert np.all(c * np.sum(x**2, axis=1) < 1)
        x = hyp_activation(x, c)
        assert np.all(c * np.sum(x**2, axis=1) < 1)


def test_tensor_and_array_paths_agree():
    rng = np.random.default_rng(11)
    g = random_graph(7, 0.5, rng)
    X = rng.standard_normal((7, 3))
    cfg = HgcnConfig(in_dim=3, hidden_dim=4, layers=1, c=0.1)
    state = make_params(cfg, 4)
    store = dc.ParamStore()
    for k, v in state.items():
        store.add(k, v)
    _, plain = encode(X, g, cfg, state)
    _, taped = encode(X, g, cfg, store)
    assert isinstance(taped, dc.Tensor)
    np.testing.assert_array_equal(taped.data, plain)


def test_config_validation():
    with pytest.raises(ValueError):
        HgcnConfig(in_dim=3, layers=0)
    with pytest.raises(ValueError):
        HgcnConfig(in_dim=3, c=-1.0)
