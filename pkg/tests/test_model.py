import numpy as np
import pytest

from ncla import model as M
from ncla.graph import Graph, SbmSpec, generate_sbm

from conftest import edgeless_graph, random_graph


def dense_attention_oracle(g, p, slope=0.2):
    """Full N×N logits, non-edges masked with -inf, row softmax."""
    z = g.features @ p.W.T
    f = p.W.shape[0]
    a1, a2 = p.phi[:f], p.phi[f:]
    n = g.num_nodes
    logits = np.empty((n, n))
    for i in range(n):
        for j in range(n):
            e = a1 @ z[i] + a2 @ z[j]
            logits[i, j] = e if e > 0 else slope * e
    allowed = g.dense_adjacency() | np.eye(n, dtype=bool)
    logits[~allowed] = -np.inf
    logits -= logits.max(axis=1, keepdims=True)
    e = np.exp(logits)
    return e / e.sum(axis=1, keepdims=True)


def elu(x):
    return np.where(x > 0, x, np.exp(np.minimum(x, 0)) - 1)


def test_attention_matches_dense_oracle(rng):
    g = random_graph(rng, 5, 0.5, 4)
    p = M.init_params(4, 3, 2, seed=9).views[1]
    adj = M.compute_view_adjacency(g, p)
    np.testing.assert_allclose(adj.to_dense(), dense_attention_oracle(g, p), rtol=0, atol=1e-12)


def test_attention_isolated_node_self_weight_one(rng):
    g = Graph.from_edges(3, [(0, 1)], rng.standard_normal((3, 2)))
    adj = M.compute_view_adjacency(g, M.init_params(2, 2, 2, 0).views[0])
    cols, vals = adj.group(2)
    assert cols.tolist() == [2] and vals[0] == 1.0


def test_attention_zero_phi_uniform(rng):
    g = random_graph(rng, 8, 0.4)
    p = M.init_params(4, 3, 2, 0).views[0]
    p = M.ViewParams(p.W, np.zeros_like(p.phi))
    adj = M.compute_view_adjacency(g, p)
    deg = g.degrees()
    for i in range(g.num_nodes):
        np.testing.assert_allclose(adj.group(i)[1], 1 / (deg[i] + 1), atol=1e-15)


def test_attention_invariants(rng):
    g = random_graph(rng, 12, 0.3)
    adjs, _ = M.forward(g, M.init_params(4, 5, 3, seed=2))
    dense_a = g.dense_adjacency()
    for adj in adjs:
        d = adj.to_dense()
        np.testing.assert_allclose(d.sum(axis=1), 1.0, atol=1e-9)
        assert np.all(adj.values > 0) and np.all(adj.values <= 1)
        off_support = ~(dense_a | np.eye(g.num_nodes, dtype=bool))
        assert np.all(d[off_support] == 0)


def test_dimension_mismatch(rng):
    g = random_graph(rng, 4, n_features=3)
    with pytest.raises(ValueError):
        M.compute_view_adjacency(g, M.init_params(5, 2, 2, 0).views[0])


def test_encode_zero_weights(rng):
    g = random_graph(rng, 6)
    p = M.ViewParams(np.zeros((3, 4)), rng.standard_normal(6))
    h = M.encode_view(g, p, M.compute_view_adjacency(g, p))
    assert np.all(h == 0)


def test_encode_edgeless_is_elu_of_projection():
    g = edgeless_graph(5, 3)
    p = M.init_params(3, 4, 2, 1).views[0]
    h = M.encode_view(g, p, M.compute_view_adjacency(g, p))
    np.testing.assert_allclose(h, elu(g.features @ p.W.T), atol=1e-15)


def test_encode_star_dense_oracle():
    x = np.array([[1.0, 0.0], [0.0, 1.0], [1.0, 1.0], [-1.0, 2.0]])
    g = Graph.from_edges(4, [(0, 1), (0, 2), (0, 3)], x)
    W = np.array([[0.1, -0.2], [0.3, 0.05], [-0.4, 0.2]])
    p = M.ViewParams(W, np.zeros(6))
    adj = M.compute_view_adjacency(g, p)
    a_uniform = np.array([
        [0.25, 0.25, 0.25, 0.25],
        [0.5, 0.5, 0, 0],
        [0.5, 0, 0.5, 0],
        [0.5, 0, 0, 0.5],
    ])
    expected = elu(a_uniform @ (x @ W.T))
    np.testing.assert_allclose(M.encode_view(g, p, adj), expected, rtol=0, atol=1e-12)


def test_forward_identical_views_identical_embeddings(rng):
    g = random_graph(rng, 7)
    v = M.init_params(4, 3, 2, 0).views[0]
    _, emb = M.forward(g, M.ModelParams([v, M.ViewParams(v.W.copy(), v.phi.copy())]))
    assert np.array_equal(emb.per_view[0], emb.per_view[1])


@pytest.mark.parametrize("k, f", [(2, 3), (4, 5), (3, 1)])
def test_forward_concat_width(rng, k, f):
    g = random_graph(rng, 6)
    _, emb = M.forward(g, M.init_params(4, f, k, 0))
    assert emb.concatenated.shape == (6, k * f)


def test_forward_concat_row_splice():
    g = generate_sbm(SbmSpec(2, 3, 0.8, 0.2, feature_dim=5, seed=4))
    mp = M.init_params(5, 3, 4, seed=8)
    _, emb = M.forward(g, mp)
    rows = []
    for p in mp.views:
        rows.append(M.encode_view(g, p, M.compute_view_adjacency(g, p))[0])
    assert np.array_equal(emb.concatenated[0], np.concatenate(rows))


def test_forward_deterministic(rng):
    g = random_graph(rng, 10)
    mp = M.init_params(4, 6, 3, 5)
    a = M.forward(g, mp)[1].concatenated
    b = M.forward(g, mp)[1].concatenated
    assert a.tobytes() == b.tobytes()


def test_permutation_equivariance(rng):
    g = random_graph(rng, 10, 0.35, 4)
    mp = M.init_params(4, 5, 3, 1)
    perm = rng.permutation(10)
    h = M.forward(g, mp)[1].concatenated
    hp = M.forward(g.permute(perm), mp)[1].concatenated
    np.testing.assert_allclose(hp, h[perm], rtol=0, atol=1e-10)


def test_init_reproducible_and_independent():
    a, b = M.init_params(7, 4, 3, seed=3), M.init_params(7, 4, 3, seed=3)
    for x, y in zip(a.arrays(), b.arrays()):
        assert np.array_equal(x, y)
    assert not np.array_equal(a.views[0].W, a.views[1].W)
    assert not np.array_equal(a.views[0].W, M.init_params(7, 4, 3, seed=4).views[0].W)


def test_init_glorot_bound():
    f, fp = 50, 8
    mp = M.init_params(f, fp, 4, seed=0)
    bound = np.sqrt(6 / (f + fp))
    for v in mp.views:
        assert np.max(np.abs(v.W)) <= bound
        assert np.max(np.abs(v.W)) > 0.9 * bound


def test_modelparams_requires_two_views():
    with pytest.raises(ValueError):
        M.ModelParams([M.ViewParams(np.zeros((2, 2)), np.zeros(4))])


def test_checkpoint_roundtrip(tmp_path):
    mp = M.init_params(6, 3, 3, seed=2)
    digest = M.save_checkpoint(mp, tmp_path / "c.json")
    back = M.load_checkpoint(tmp_path / "c.json")
    assert len(digest) == 64
    for x, y in zip(mp.arrays(), back.arrays()):
        assert x.tobytes() == y.tobytes()


def test_checkpoint_float32_roundtrip(tmp_path):
    mp = M.init_params(6, 3, 2, seed=2, dtype=np.float32)
    M.save_checkpoint(mp, tmp_path / "c.json")
    back = M.load_checkpoint(tmp_path / "c.json")
    assert back.dtype == np.float32
    assert all(x.tobytes() == y.tobytes() for x, y in zip(mp.arrays(), back.arrays()))


def test_checkpoint_rejects_foreign(tmp_path):
    (tmp_path / "c.json").write_text('{"format": "other"}')
    with pytest.raises(ValueError):
        M.load_checkpoint(tmp_path / "c.json")
