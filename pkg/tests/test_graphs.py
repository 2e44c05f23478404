import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from sea import data as D
from sea.graphs import (
    SparseGraph,
    build_item_graph,
    build_normalized_bipartite,
    knn_binary,
    propagate_item_graph,
)


def ds_from_pairs(n_users, n_items, pairs):
    u, i = zip(*pairs)
    return D.InteractionDataset(n_users, n_items, u, i, np.zeros(len(u)))


def dense_knn(x, k):
    """Brute force: per row sort (-cos, index) over non-self columns."""
    n = len(x)
    xn = x / np.linalg.norm(x, axis=1, keepdims=True)
    sim = xn @ xn.T
    out = np.zeros((n, n))
    for r in range(n):
        cand = sorted((c for c in range(n) if c != r), key=lambda c: (-sim[r, c], c))
        out[r, cand[:k]] = 1.0
    return out


# ------------------------------------------------------------------ bipartite


def test_single_edge_coefficient_one():
    ui, iu = build_normalized_bipartite(ds_from_pairs(1, 1, [(0, 0)]))
    assert ui.to_dense().tolist() == [[1.0]]
    assert iu.to_dense().tolist() == [[1.0]]


def test_user_degree_four_item_degree_one():
    ui, _ = build_normalized_bipartite(ds_from_pairs(1, 4, [(0, 0), (0, 1), (0, 2), (0, 3)]))
    np.testing.assert_allclose(ui.to_dense(), [[0.5, 0.5, 0.5, 0.5]])


def test_bipartite_uses_train_edges_only():
    ds = D.InteractionDataset(1, 2, [0, 0], [0, 1], [D.TRAIN, D.VAL])
    ui, _ = build_normalized_bipartite(ds)
    assert ui.to_dense().tolist() == [[1.0, 0.0]]


@settings(max_examples=40, deadline=None)
@given(arrays(np.bool_, (5, 6)))
def test_bipartite_coefficients_and_symmetry(adj):
    if not adj.any():
        return
    u, i = np.nonzero(adj)
    ui, iu = build_normalized_bipartite(ds_from_pairs(5, 6, list(zip(u, i))))
    ui.validate()
    iu.validate()
    dense = ui.to_dense()
    du, di = adj.sum(1), adj.sum(0)
    for r in range(5):
        for c in range(6):
            expect = 1 / np.sqrt(du[r] * di[c]) if adj[r, c] else 0.0
            assert dense[r, c] == pytest.approx(expect, rel=1e-15)
    np.testing.assert_array_equal(ui.transpose().to_dense(), iu.to_dense())
    assert np.all(dense[du == 0] == 0)


# ------------------------------------------------------------------ item graph


def test_knn_example_ties_to_lowest_index():
    x = np.array([[1.0, 0], [1, 0], [0, 1]])
    assert knn_binary(x, 1).toarray().tolist() == [[0, 1, 0], [1, 0, 0], [1, 0, 0]]


def test_identical_features_pick_lowest_non_self():
    s = knn_binary(np.ones((4, 3)), 1).toarray()
    assert [int(np.argmax(r)) for r in s] == [1, 0, 0, 0]


def test_mutual_pair_normalizes_to_one():
    g = build_item_graph(np.array([[1.0, 0.2], [0.9, 0.1]]), k=1)
    np.testing.assert_allclose(g.to_dense(), [[0, 1], [1, 0]])


def test_k_out_of_range():
    with pytest.raises(ValueError):
        build_item_graph(np.eye(3), k=3)
    with pytest.raises(ValueError):
        build_item_graph(np.eye(3), k=0)


def test_all_zero_features_error():
    with pytest.raises(ValueError):
        build_item_graph(np.zeros((4, 2)), k=1)


def test_zero_row_left_isolated(caplog):
    x = np.array([[1.0, 0], [0, 0], [1, 1], [0, 1]])
    s = knn_binary(x, 2).toarray()
    assert s[1].sum() == 0 and s[:, 1].sum() == 0
    assert "zero-norm" in caplog.text


@settings(max_examples=40, deadline=None)
@given(st.integers(3, 10).flatmap(lambda n: st.tuples(
    arrays(np.float64, (n, 3), elements=st.integers(-3, 3).map(float)), st.integers(1, n - 1))))
def test_item_graph_matches_dense_oracle(args):
    x, k = args
    if np.any(np.linalg.norm(x, axis=1) == 0):
        return
    S = dense_knn(x, k)
    assert np.all(S.sum(1) == k)
    dr, dc = S.sum(1), S.sum(0)
    with np.errstate(divide="ignore", invalid="ignore"):
        expect = np.where(S > 0, S / np.sqrt(np.outer(dr, dc)), 0.0)
    g = build_item_graph(x, k)
    g.validate()
    np.testing.assert_allclose(g.to_dense(), expect, rtol=1e-14)


# ----------------------------------------------------------------- propagation


def chain():
    # 0 - 1 - 2 path, symmetric normalization by hand
    a = np.array([[0, 1, 0], [1, 0, 1], [0, 1, 0]], dtype=float)
    d = a.sum(1)
    return a / np.sqrt(np.outer(d, d))


def test_zero_layers_identity():
    g = SparseGraph.from_scipy(chain())
    h = np.arange(6.0).reshape(3, 2)
    np.testing.assert_array_equal(propagate_item_graph(g, g, 0.3, h, 0), h)


def test_gate_one_is_visual_only():
    sv = SparseGraph.from_scipy(chain())
    st_ = SparseGraph.from_scipy(np.eye(3))
    h = np.arange(6.0).reshape(3, 2)
    np.testing.assert_allclose(propagate_item_graph(sv, st_, 1.0, h, 1), chain() @ h)


def test_chain_one_layer_by_hand():
    g = SparseGraph.from_scipy(chain())
    h = np.array([[1.0], [2.0], [3.0]])
    r = 1 / np.sqrt(2)
    np.testing.assert_allclose(propagate_item_graph(g, g, 0.5, h, 1), [[2 * r], [4 * r], [2 * r]])


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31), st.floats(0.01, 0.99), st.integers(1, 4))
def test_sparse_chain_equals_dense(seed, w, layers):
    r = np.random.default_rng(seed)
    x = r.standard_normal((8, 4))
    sv, st_ = build_item_graph(x, 3), build_item_graph(r.standard_normal((8, 5)), 2)
    h = r.standard_normal((8, 3))
    S = w * sv.to_dense() + (1 - w) * st_.to_dense()
    expect = np.linalg.matrix_power(S, layers) @ h
    got = propagate_item_graph(sv, st_, w, h, layers)
    np.testing.assert_allclose(got, expect, rtol=1e-10, atol=1e-12)


def test_torch_path_matches_numpy_and_backprops():
    r = np.random.default_rng(0)
    sv, st_ = build_item_graph(r.standard_normal((6, 3)), 2), build_item_graph(r.standard_normal((6, 3)), 2)
    h = torch.tensor(r.standard_normal((6, 2)), requires_grad=True)
    w = torch.tensor(0.3, dtype=torch.float64, requires_grad=True)
    out = propagate_item_graph(sv, st_, w, h, 2)
    np.testing.assert_allclose(out.detach().numpy(), propagate_item_graph(sv, st_, 0.3, h.detach().numpy(), 2))
    out.sum().backward()
    S = 0.3 * sv.to_dense() + 0.7 * st_.to_dense()
    np.testing.assert_allclose(h.grad.numpy(), (S @ S).T @ np.ones((6, 2)), rtol=1e-12)


def test_propagation_shape_mismatch():
    g = SparseGraph.from_scipy(chain())
    with pytest.raises(ValueError):
        propagate_item_graph(g, g, 0.5, np.ones((4, 2)), 1)
    with pytest.raises(ValueError):
        propagate_item_graph(g, g, 1.5, np.ones((3, 2)), 1)


def test_dump_csv_is_row_major(tmp_path):
    g = build_item_graph(np.array([[1.0, 0], [1, 0.1], [0, 1], [0.1, 1]]), 1)
    g.dump_csv(tmp_path / "g.csv")
    rows = [tuple(map(float, line.split(","))) for line in (tmp_path / "g.csv").read_text().splitlines()[1:]]
    assert [r[:2] for r in rows] == sorted(r[:2] for r in rows)
    assert len(rows) == g.nnz
