import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from sgformer.errors import ConfigError, FormatError
from sgformer.graph import (MULTI_LABEL, NodeDataset, SparseGraph, SplitSpec, generate_sbm, load_generic,
                            load_planetoid_raw, make_split, normalize_adjacency, save_generic,
                            sbm_expected_edges, subsample_nodes)
from sgformer.tensor import Rng


def random_graph(n, p, seed):
    rng = np.random.default_rng(seed)
    upper = np.triu(rng.random((n, n)) < p, 1)
    src, dst = np.nonzero(upper)
    return SparseGraph.from_edges(n, src, dst), (upper | upper.T).astype(float)


def dense_normalized(adj, self_loops=True):
    a = adj + np.eye(len(adj)) if self_loops else adj.copy()
    d = a.sum(axis=1)
    inv = np.array([1 / math.sqrt(x) if x > 0 else 0.0 for x in d])
    return inv[:, None] * a * inv[None, :]


def spectral_radius(m, iters=500, seed=0):
    v = np.random.default_rng(seed).standard_normal(m.shape[0])
    lam = 0.0
    for _ in range(iters):
        w = m @ v
        lam = np.linalg.norm(w)
        if lam == 0:
            return 0.0
        v = w / lam
    return lam


def test_from_edges_symmetrizes_dedups_and_drops_loops():
    g = SparseGraph.from_edges(4, [0, 1, 0, 2, 3], [1, 0, 1, 2, 0])
    expected = np.zeros((4, 4))
    for a, b in [(0, 1), (0, 3)]:
        expected[a, b] = expected[b, a] = 1
    np.testing.assert_array_equal(g.to_dense(), expected)
    assert g.num_undirected_edges() == 2
    assert g.is_symmetric()
    assert g.degrees().tolist() == [2, 1, 0, 1]


def test_from_edges_rejects_bad_ids():
    with pytest.raises(FormatError):
        SparseGraph.from_edges(3, [0], [3])


def test_normalize_two_nodes_and_isolated():
    g = SparseGraph.from_edges(2, [0], [1])
    np.testing.assert_allclose(normalize_adjacency(g).to_dense(), [[0.5, 0.5], [0.5, 0.5]], atol=1e-15)
    iso = SparseGraph.from_edges(1, [], [])
    np.testing.assert_array_equal(normalize_adjacency(iso).to_dense(), [[1.0]])


@pytest.mark.parametrize("seed", range(5))
def test_normalize_matches_dense_oracle(seed):
    g, adj = random_graph(25, 0.15, seed)
    np.testing.assert_allclose(normalize_adjacency(g).to_dense(), dense_normalized(adj), atol=1e-14)
    np.testing.assert_allclose(normalize_adjacency(g, add_self_loops=False).to_dense(),
                               dense_normalized(adj, self_loops=False), atol=1e-14)


@settings(max_examples=30, deadline=None)
@given(n=st.integers(1, 30), p=st.floats(0.0, 1.0), seed=st.integers(0, 10_000))
def test_normalized_adjacency_properties(n, p, seed):
    g, _ = random_graph(n, p, seed)
    a = normalize_adjacency(g)
    dense = a.to_dense()
    assert a.is_symmetric(atol=1e-15)
    assert np.all(dense >= 0)
    assert spectral_radius(dense) <= 1.0 + 1e-9


def test_induced_subgraph_matches_pair_filter():
    g, adj = random_graph(30, 0.2, 7)
    nodes = np.array([17, 3, 25, 8, 0, 11, 29])
    sub = g.induced_subgraph(nodes)
    oracle = np.zeros((len(nodes), len(nodes)))
    for i, u in enumerate(nodes):
        for j, v in enumerate(nodes):
            if adj[u, v]:
                oracle[i, j] = 1
    np.testing.assert_array_equal(sub.to_dense(), oracle)
    weighted = normalize_adjacency(g).induced_subgraph(nodes).to_dense()
    np.testing.assert_array_equal(weighted, normalize_adjacency(g).to_dense()[np.ix_(nodes, nodes)])


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 10_000), k=st.integers(1, 20))
def test_induced_subgraph_property(seed, k):
    g, adj = random_graph(20, 0.3, seed)
    nodes = np.random.default_rng(seed).permutation(20)[:k]
    np.testing.assert_array_equal(g.induced_subgraph(nodes).to_dense(), adj[np.ix_(nodes, nodes)])


def write_planetoid(tmp_path, bad_width=False, unknown=False):
    content = [
        "p1 1 0 1 A",
        "p2 0 1 0 B",
        "p3 1 1 0 A" if not bad_width else "p3 1 1 A",
        "p4 0 0 1 C",
    ]
    cites = ["p1 p2", "p2 p1", "p3 p1", "p4 p4", "p2 p4"]
    if unknown:
        cites.append("p9 p1")
    (tmp_path / "toy.content").write_text("\n".join(content) + "\n")
    (tmp_path / "toy.cites").write_text("\n".join(cites) + "\n")
    return tmp_path / "toy.content", tmp_path / "toy.cites"


def test_planetoid_loader(tmp_path):
    ds = load_planetoid_raw(*write_planetoid(tmp_path, unknown=True))
    assert ds.num_nodes == 4 and ds.feat_dim == 3 and ds.num_classes == 3
    assert ds.labels.tolist() == [0, 1, 0, 2]
    assert ds.meta["class_names"] == ["A", "B", "C"]
    assert ds.meta["skipped_cite_lines"] == 1 and ds.meta["raw_cite_lines"] == 6
    # {p1,p2}, {p1,p3}, {p2,p4}; the self citation is dropped
    assert ds.graph.num_undirected_edges() == 3
    assert ds.graph.is_symmetric()
    np.testing.assert_array_equal(ds.features[2], [1, 1, 0])


def test_planetoid_loader_width_error(tmp_path):
    with pytest.raises(FormatError, match=r"toy.content:3"):
        load_planetoid_raw(*write_planetoid(tmp_path, bad_width=True))


def test_generic_round_trip(tmp_path, small_sbm):
    save_generic(small_sbm, tmp_path / "d")
    back = load_generic(tmp_path / "d")
    assert back.same_content(small_sbm)


def test_generic_multilabel_round_trip(tmp_path):
    g, _ = random_graph(10, 0.3, 1)
    labels = (np.random.default_rng(0).random((10, 3)) < 0.5).astype(np.int64)
    ds = NodeDataset(g, np.random.default_rng(1).standard_normal((10, 4)), labels, task=MULTI_LABEL)
    save_generic(ds, tmp_path / "m")
    assert load_generic(tmp_path / "m").same_content(ds)


def test_generic_malformed_reports_file_and_line(tmp_path, small_sbm):
    d = save_generic(small_sbm, tmp_path / "d")
    lines = (d / "edges.txt").read_text().splitlines()
    lines[2] = "1 x"
    (d / "edges.txt").write_text("\n".join(lines) + "\n")
    with pytest.raises(FormatError, match=r"edges.txt:3"):
        load_generic(d)
    (d / "meta.json").unlink()
    with pytest.raises(FormatError, match="meta.json"):
        load_generic(d)


def test_semi_supervised_split_counts():
    ds = generate_sbm(300, 3, 0.05, 0.005, 4, Rng(0))
    m = make_split(ds, SplitSpec("per-class", per_class=20, num_valid=50, num_test=100), Rng(1))
    for c in range(3):
        assert int((m.train & (ds.labels == c)).sum()) == 20
    assert m.valid.sum() == 50 and m.test.sum() == 100
    assert not np.any(m.train & m.valid) and not np.any(m.valid & m.test) and not np.any(m.train & m.test)
    again = make_split(ds, SplitSpec("per-class", per_class=20, num_valid=50, num_test=100), Rng(1))
    assert all(np.array_equal(a, b) for a, b in zip(m, again))


def test_semi_supervised_defaults_and_too_small():
    assert SplitSpec.semi_supervised() == SplitSpec("per-class", 20, 500, 1000)
    ds = generate_sbm(100, 2, 0.1, 0.01, 4, Rng(0))
    with pytest.raises(ConfigError):
        make_split(ds, SplitSpec.semi_supervised(), Rng(0))


def test_ratio_and_explicit_splits():
    ds = generate_sbm(101, 2, 0.1, 0.01, 4, Rng(0))
    m = make_split(ds, SplitSpec.ratio(0.5, 0.25, 0.25), Rng(0))
    assert (m.train.sum(), m.valid.sum(), m.test.sum()) == (50, 25, 26)
    m = make_split(ds, SplitSpec("explicit", train=[0, 1], valid=[2], test=[3, 4]), Rng(0))
    assert np.flatnonzero(m.test).tolist() == [3, 4]
    with pytest.raises(ConfigError):
        make_split(ds, SplitSpec("explicit", train=[0, 1], valid=[1]), Rng(0))
    with pytest.raises(ConfigError):
        make_split(ds, SplitSpec.ratio(0.6, 0.3, 0.3), Rng(0))


def test_sbm_cliques():
    ds = generate_sbm(4, 2, 1.0, 0.0, 2, Rng(0))
    np.testing.assert_array_equal(ds.graph.to_dense(), [[0, 1, 0, 0], [1, 0, 0, 0], [0, 0, 0, 1], [0, 0, 1, 0]])
    assert ds.labels.tolist() == [0, 0, 1, 1]


@pytest.mark.parametrize("seed", range(3))
def test_sbm_edge_count_within_three_sigma(seed):
    n, blocks, p_in, p_out = 2000, 5, 0.02, 0.002
    ds = generate_sbm(n, blocks, p_in, p_out, 4, Rng(seed))
    mean, var = sbm_expected_edges(n, blocks, p_in, p_out)
    assert abs(ds.graph.num_undirected_edges() - mean) <= 3 * math.sqrt(var)
    assert ds.graph.is_symmetric() and np.all(ds.graph.row_idx != ds.graph.col_idx)


def test_sbm_bad_arguments():
    with pytest.raises(ConfigError):
        generate_sbm(10, 2, 0.1, 0.5, 4, Rng(0))
    with pytest.raises(ConfigError):
        generate_sbm(3, 5, 0.5, 0.1, 4, Rng(0))


def test_subsample_nodes(small_sbm):
    sub = subsample_nodes(small_sbm, 40, Rng(3))
    assert sub.num_nodes == 40
    assert sub.graph.is_symmetric()
    with pytest.raises(ConfigError):
        subsample_nodes(small_sbm, 500, Rng(3))


def test_dataset_rejects_overlapping_masks(small_sbm):
    with pytest.raises(ConfigError):
        small_sbm.with_masks(small_sbm.masks._replace(valid=small_sbm.train_mask.copy()))
