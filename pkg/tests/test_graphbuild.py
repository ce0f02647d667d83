import numpy as np
import pytest

from markovgcn.graphbuild import (
    WEIGHT_FLOOR,
    SparseGraph,
    add_self_loops,
    degree_vector,
    knn_graph,
    symmetric_normalize,
)

from .oracles import random_graph


def brute_force_knn(x, k):
    """All-pairs cosine, per-node ranking by (-similarity, index), union-symmetrised."""
    n = len(x)
    edges = {}
    for i in range(n):
        sims = []
        for j in range(n):
            if i != j:
                s = float(np.dot(x[i], x[j]) / (np.linalg.norm(x[i]) * np.linalg.norm(x[j])))
                sims.append((-s, j))
        for _, j in sorted(sims)[:k]:
            edges[(min(i, j), max(i, j))] = True
    out = {}
    for a, b in edges:
        s = float(np.dot(x[a], x[b]) / (np.linalg.norm(x[a]) * np.linalg.norm(x[b])))
        w = min(max(s, WEIGHT_FLOOR), 1.0)
        out[(a, b)] = out[(b, a)] = w
    return out


def as_dict(g):
    return {(i, j): w for i, j, w in g.edges()}


def test_knn_tie_break_example():
    g = knn_graph(np.array([[1.0, 0.0], [1.0, 0.0], [0.0, 1.0]]), 1)
    assert as_dict(g) == {(0, 1): 1.0, (1, 0): 1.0, (0, 2): WEIGHT_FLOOR, (2, 0): WEIGHT_FLOOR}


def test_knn_duplicate_rows():
    g = knn_graph(np.array([[1.0, 1.0], [1.0, 1.0]]), 1)
    assert as_dict(g) == {(0, 1): 1.0, (1, 0): 1.0}


def test_knn_complete_graph(rng):
    x = rng.random((7, 3))
    g = knn_graph(x, 6)
    assert g.support() == {(i, j) for i in range(7) for j in range(7) if i != j}


@pytest.mark.parametrize("trial", range(10))
def test_knn_matches_brute_force(trial):
    rng = np.random.default_rng(100 + trial)
    n = int(rng.integers(3, 25))
    k = int(rng.integers(1, n))
    x = rng.random((n, 4))
    expected = brute_force_knn(x, k)
    got = as_dict(knn_graph(x, k))
    assert got.keys() == expected.keys()
    for key, w in expected.items():
        assert got[key] == pytest.approx(w, abs=1e-12)


def test_knn_weights_in_unit_interval_and_valid(rng):
    g = knn_graph(rng.random((40, 5)), 8)
    g.validate()
    assert np.all(g.weight > 0) and np.all(g.weight <= 1)
    assert np.all(np.bincount(g.src, minlength=40) >= 8)


def test_knn_chunking_is_invisible(monkeypatch, rng):
    x = rng.random((50, 3))
    full = knn_graph(x, 5)
    monkeypatch.setattr("markovgcn.graphbuild._KNN_CHUNK", 7)
    assert knn_graph(x, 5) == full


@pytest.mark.parametrize("trial", range(5))
def test_knn_permutation_equivariance(trial):
    rng = np.random.default_rng(trial)
    x = rng.random((15, 4))
    perm = rng.permutation(15)
    g = as_dict(knn_graph(x, 3))
    gp = as_dict(knn_graph(x[perm], 3))
    # node a of the permuted input is node perm[a] of the original
    relabelled = {(int(perm[a]), int(perm[b])): w for (a, b), w in gp.items()}
    assert relabelled.keys() == g.keys()
    for key in g:
        assert relabelled[key] == pytest.approx(g[key], abs=1e-15)


def test_knn_errors():
    with pytest.raises(ValueError, match="node 1"):
        knn_graph(np.array([[1.0, 0.0], [0.0, 0.0], [1.0, 1.0]]), 1)
    with pytest.raises(ValueError):
        knn_graph(np.eye(3), 3)


def empty_graph(n):
    return SparseGraph.from_arrays(n, [], [], [])


def test_self_loops():
    assert add_self_loops(empty_graph(3)).edges() == [(0, 0, 1.0), (1, 1, 1.0), (2, 2, 1.0)]
    g = SparseGraph.from_arrays(2, [0, 0, 1], [0, 1, 0], [0.5, 1.0, 1.0])
    assert add_self_loops(g).lookup(0, 0) == 1.0
    assert add_self_loops(SparseGraph.from_arrays(2, [0, 1], [1, 0], [1.0, 1.0])).n_edges == 4


def test_degree_vector():
    # unit weights, edges 0-1 and 0-2 (triangle minus 1-2), plus self-loops
    g = add_self_loops(SparseGraph.from_arrays(3, [0, 1, 0, 2], [1, 0, 2, 0], [1.0] * 4))
    d = degree_vector(g)
    assert d.tolist() == [3.0, 2.0, 2.0]
    assert degree_vector(add_self_loops(empty_graph(1))).tolist() == [1.0]
    assert np.array_equal(degree_vector(g.scaled(2.0)), 2 * d)
    with pytest.raises(ValueError, match="no incident"):
        degree_vector(empty_graph(2))


def test_symmetric_normalize_examples():
    one = symmetric_normalize(add_self_loops(empty_graph(1)))
    assert one.edges() == [(0, 0, 1.0)]
    two = symmetric_normalize(add_self_loops(SparseGraph.from_arrays(2, [0, 1], [1, 0], [1.0, 1.0])))
    assert [w for *_, w in two.edges()] == [0.5, 0.5, 0.5, 0.5]


@pytest.mark.parametrize("trial", range(30))
def test_symmetric_normalize_dense_oracle(trial):
    rng = np.random.default_rng(trial)
    g = random_graph(rng, int(rng.integers(1, 21)))
    a = g.to_dense()
    d = a.sum(axis=1)
    expected = a / np.sqrt(np.outer(d, d))
    out = symmetric_normalize(g)
    np.testing.assert_allclose(out.to_dense(), expected, rtol=0, atol=1e-12)
    assert out.support() == g.support()
    out.validate()


def test_k_regular_normalisation():
    # cycle of 6 nodes is 2-regular: every normalised weight is 1/3
    n = 6
    src = list(range(n)) + [(i + 1) % n for i in range(n)]
    dst = [(i + 1) % n for i in range(n)] + list(range(n))
    g = add_self_loops(SparseGraph.from_arrays(n, src, dst, [1.0] * 12))
    np.testing.assert_allclose(symmetric_normalize(g).weight, 1 / 3, rtol=1e-15)


def test_validate_rejects_bad_graphs():
    with pytest.raises(ValueError, match="symmetric"):
        SparseGraph.from_arrays(2, [0], [1], [1.0]).validate()
    with pytest.raises(ValueError, match="positive"):
        SparseGraph.from_arrays(2, [0, 1], [1, 0], [0.0, 0.0]).validate()
    with pytest.raises(ValueError, match="duplicate"):
        SparseGraph.from_arrays(2, [0, 0], [1, 1], [1.0, 1.0])
