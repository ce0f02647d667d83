"""Markov transition matrices and the per-layer inflation/pruning stack."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .graphbuild import CooMatrix, SparseGraph, degree_vector

ROW_SUM_TOL = 1e-9


class RowStochasticMatrix(CooMatrix):
    """Sparse matrix whose rows are probability distributions."""

    def validate(self) -> RowStochasticMatrix:
        if np.any(self.weight <= 0) or np.any(self.weight > 1.0 + 1e-15):
            raise ValueError("transition probabilities must lie in (0, 1]")
        counts = np.bincount(self.src, minlength=self.n_nodes)
        if np.any(counts == 0):
            raise ValueError(f"row {int(np.flatnonzero(counts == 0)[0])} is empty")
        sums = self.row_sums()
        if np.max(np.abs(sums - 1.0)) > ROW_SUM_TOL:
            raise ValueError("rows do not sum to 1")
        return self

    def rows(self) -> list[list[tuple[int, float]]]:
        out: list[list[tuple[int, float]]] = [[] for _ in range(self.n_nodes)]
        for i, j, w in zip(self.src.tolist(), self.dst.tolist(), self.weight.tolist()):
            out[i].append((j, w))
        return out


@dataclass(frozen=True)
class MarkovConfig:
    inflation: float = 2.0
    epsilon: float = 0.01
    nlayers: int = 2
    expand: bool = False

    def __post_init__(self):
        if not self.inflation > 1:
            raise ValueError(f"inflation must be > 1, got {self.inflation}")
        if not 0 <= self.epsilon < 1:
            raise ValueError(f"epsilon must be in [0, 1), got {self.epsilon}")
        if self.nlayers < 1:
            raise ValueError(f"nlayers must be >= 1, got {self.nlayers}")


@dataclass(frozen=True)
class MarkovLayerStack:
    layers: tuple[RowStochasticMatrix, ...]

    @property
    def n_nodes(self) -> int:
        return self.layers[0].n_nodes

    def __len__(self) -> int:
        return len(self.layers)

    def __getitem__(self, i: int) -> RowStochasticMatrix:
        return self.layers[i]


def _row_normalize(n: int, src, dst, w) -> RowStochasticMatrix:
    sums = np.bincount(src, weights=w, minlength=n)
    return RowStochasticMatrix(n, src, dst, w / sums[src])


def transition_matrix(g: SparseGraph) -> RowStochasticMatrix:
    """``P = D^-1 A``: each row divided by its weighted degree."""
    d = degree_vector(g)
    if np.any(d <= 0):
        raise ValueError(f"node {int(np.flatnonzero(d <= 0)[0])} has zero degree")
    return RowStochasticMatrix(g.n_nodes, g.src, g.dst, g.weight / d[g.src])


def inflate_normalize(m: RowStochasticMatrix, k: float) -> RowStochasticMatrix:
    w = m.weight**k
    # entries that underflow to zero are dropped rather than kept as zeros
    keep = w > 0
    if not keep.all():
        # the largest entry of a row can only underflow if the row is all tiny,
        # which row-stochasticity rules out
        src, dst, w = m.src[keep], m.dst[keep], w[keep]
    else:
        src, dst = m.src, m.dst
    return _row_normalize(m.n_nodes, src, dst, w)


def _row_argmax(m: CooMatrix) -> np.ndarray:
    """Index into the coordinate arrays of each row's max (lowest column on ties)."""
    # sorted by (src, -weight, dst): first entry of each row block is the winner
    order = np.lexsort((m.dst, -m.weight, m.src))
    first = np.ones(order.size, dtype=bool)
    first[1:] = m.src[order][1:] != m.src[order][:-1]
    return order[first]


def prune_epsilon(m: RowStochasticMatrix, epsilon: float) -> RowStochasticMatrix:
    """Drop entries below ``epsilon`` and renormalise; a row that would empty
    keeps only its maximum entry."""
    if epsilon <= 0:
        return m
    keep = m.weight >= epsilon
    survivors = np.bincount(m.src[keep], minlength=m.n_nodes)
    empty = survivors == 0
    if empty.any():
        best = _row_argmax(m)
        keep[best[empty[m.src[best]]]] = True
    return _row_normalize(m.n_nodes, m.src[keep], m.dst[keep], m.weight[keep])


def expand(m: RowStochasticMatrix) -> RowStochasticMatrix:
    """One diffusion step ``P @ P`` (MCL expansion)."""
    n = m.n_nodes
    csr = sp.csr_matrix((m.weight, (m.src, m.dst)), shape=(n, n))
    sq = (csr @ csr).tocoo()
    nz = sq.data > 0
    out = RowStochasticMatrix.from_arrays(n, sq.row[nz], sq.col[nz], sq.data[nz])
    return _row_normalize(n, out.src, out.dst, out.weight)


def markov_process_agg(g: SparseGraph, cfg: MarkovConfig) -> MarkovLayerStack:
    """Layer 1 is the transition matrix; each following layer inflates,
    renormalises and prunes the previous one (after an optional expansion)."""
    layer = transition_matrix(g)
    layers = [layer]
    for _ in range(cfg.nlayers - 1):
        if cfg.expand:
            layer = expand(layer)
        layer = prune_epsilon(inflate_normalize(layer, cfg.inflation), cfg.epsilon)
        layers.append(layer)
    return MarkovLayerStack(tuple(layers))
