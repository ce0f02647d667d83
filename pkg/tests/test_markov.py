import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from markovgcn.graphbuild import SparseGraph, add_self_loops
from markovgcn.markov import (
    MarkovConfig,
    RowStochasticMatrix,
    inflate_normalize,
    markov_process_agg,
    prune_epsilon,
    transition_matrix,
)

from .oracles import dense_markov_stack, random_graph


def row(values, cols=None):
    cols = list(range(len(values))) if cols is None else cols
    return RowStochasticMatrix.from_arrays(max(cols) + 1, [0] * len(values), cols, values)


def test_transition_matrix_hand_example():
    # node 0 adjacent to 1 and 2, unit weights, no self-loop
    g = SparseGraph.from_arrays(3, [0, 0, 1, 2], [1, 2, 0, 0], [1.0] * 4)
    assert transition_matrix(g).rows()[0] == [(1, 0.5), (2, 0.5)]
    assert transition_matrix(add_self_loops(SparseGraph.from_arrays(1, [], [], []))).rows() == [[(0, 1.0)]]


def test_transition_row_scale_invariance(rng):
    g = random_graph(rng, 8)
    w = g.weight.copy()
    w[g.src == 3] *= 7.5
    scaled = SparseGraph(g.n_nodes, g.src, g.dst, w)
    a, b = transition_matrix(g), transition_matrix(scaled)
    np.testing.assert_allclose(a.weight, b.weight, rtol=1e-15)


def test_inflate_examples():
    assert inflate_normalize(row([0.5, 0.5]), 2).weight.tolist() == [0.5, 0.5]
    out = inflate_normalize(row([0.8, 0.2]), 2).weight
    np.testing.assert_allclose(out, [0.64 / 0.68, 0.04 / 0.68], rtol=1e-14)
    np.testing.assert_allclose(out, [0.94118, 0.05882], atol=1e-5)
    # exponent 1 is the identity (oracle-only: MarkovConfig forbids it)
    r = row([0.1, 0.3, 0.6])
    np.testing.assert_allclose(inflate_normalize(r, 1.0).weight, r.weight, rtol=1e-15)


def test_prune_examples():
    assert prune_epsilon(row([0.94118, 0.05882]), 0.1).rows()[0] == [(0, 1.0)]
    r = row([0.2, 0.3, 0.5])
    assert prune_epsilon(r, 0.0) == r
    assert prune_epsilon(row([0.5, 0.5]), 0.6).rows()[0] == [(0, 1.0)]
    assert prune_epsilon(row([0.5, 0.5], [4, 2]), 0.6).rows()[0] == [(2, 1.0)]


def test_markov_config_validation():
    with pytest.raises(ValueError):
        MarkovConfig(inflation=1.0)
    with pytest.raises(ValueError):
        MarkovConfig(epsilon=1.0)
    with pytest.raises(ValueError):
        MarkovConfig(nlayers=0)


def test_stack_base_case(rng):
    g = random_graph(rng, 10)
    stack = markov_process_agg(g, MarkovConfig(nlayers=1))
    assert len(stack) == 1
    assert stack[0] == transition_matrix(g)


def two_cliques(bridge=1.0):
    n = 10
    a = np.zeros((n, n))
    for block in (range(5), range(5, 10)):
        for i in block:
            for j in block:
                if i != j:
                    a[i, j] = 1.0
    a[4, 5] = a[5, 4] = bridge
    s, d = np.nonzero(a)
    return add_self_loops(SparseGraph.from_arrays(n, s, d, a[s, d]))


def test_bridge_uniform_rows_are_inflation_fixed_points():
    g = two_cliques()
    cfg = MarkovConfig(inflation=2.0, epsilon=0.05, nlayers=4)
    stack = markov_process_agg(g, cfg)
    dense = dense_markov_stack(g.to_dense(), 2.0, 0.05, 4)
    probs = [layer.lookup(4, 5) for layer in stack]
    assert probs == pytest.approx([d[4, 5] for d in dense], abs=1e-15)
    assert probs == pytest.approx([1 / 6] * 4, abs=1e-15)


def test_bridge_decays_with_expansion():
    g = two_cliques()
    stack = markov_process_agg(g, MarkovConfig(inflation=2.0, epsilon=0.05, nlayers=4, expand=True))
    dense = dense_markov_stack(g.to_dense(), 2.0, 0.05, 4, expand=True)
    probs = [layer.lookup(4, 5) for layer in stack]
    np.testing.assert_allclose(probs, [d[4, 5] for d in dense], atol=1e-12)
    assert probs[1] < probs[0]
    assert all(b <= a for a, b in zip(probs, probs[1:]))


def test_weak_bridge_decays_under_inflation():
    g = two_cliques(bridge=0.5)
    stack = markov_process_agg(g, MarkovConfig(inflation=2.0, epsilon=0.01, nlayers=4))
    probs = [layer.lookup(4, 5) for layer in stack]
    assert all(b < a for a, b in zip(probs, probs[1:]))


def check_stack(g, cfg):
    stack = markov_process_agg(g, cfg)
    assert len(stack) == cfg.nlayers
    dense = dense_markov_stack(g.to_dense(), cfg.inflation, cfg.epsilon, cfg.nlayers, cfg.expand)
    for t, (layer, ref) in enumerate(zip(stack.layers, dense)):
        layer.validate()
        assert layer.n_nodes == g.n_nodes
        np.testing.assert_allclose(layer.to_dense(), ref, rtol=0, atol=1e-12)
        assert np.max(np.abs(layer.row_sums() - 1)) <= 1e-9
        if t and not cfg.expand:
            assert layer.support() <= stack[t - 1].support()
            # inflation never lowers a row's largest entry
            prev_max = stack[t - 1].to_dense().max(axis=1)
            assert np.all(layer.to_dense().max(axis=1) >= prev_max - 1e-15)


@settings(max_examples=40, deadline=None)
@given(
    st.integers(0, 2**32 - 1),
    st.integers(1, 20),
    st.floats(1.1, 4.0),
    st.sampled_from([0.0, 0.01, 0.05, 0.2]),
    st.integers(1, 5),
)
def test_stack_matches_dense_oracle(seed, n, k, eps, nlayers):
    rng = np.random.default_rng(seed)
    g = random_graph(rng, n, density=float(rng.uniform(0.05, 0.9)))
    check_stack(g, MarkovConfig(inflation=k, epsilon=eps, nlayers=nlayers))


@pytest.mark.parametrize("seed", range(5))
def test_expand_mode_matches_dense_oracle(seed):
    rng = np.random.default_rng(seed)
    g = random_graph(rng, 12)
    check_stack(g, MarkovConfig(inflation=2.0, epsilon=0.02, nlayers=3, expand=True))


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(0.01, 10.0), min_size=1, max_size=8), st.floats(1.1, 5.0), st.floats(0.1, 10.0))
def test_inflate_scale_invariant(values, k, c):
    w = np.array(values)
    a = inflate_normalize(row(list(w / w.sum())), k)
    b = inflate_normalize(row(list(w * c / (w * c).sum())), k)
    np.testing.assert_allclose(a.weight, b.weight, rtol=1e-12)
    assert a.weight.max() >= (w / w.sum()).max() - 1e-15
