"""Similarity graph over flow records.

Nodes are flow records (one per row of the feature matrix); edges join each
record to its most cosine-similar records. Graphs are stored as sorted
coordinate arrays: every undirected edge appears as both ``(i, j)`` and
``(j, i)``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

WEIGHT_FLOOR = 1e-6
DEFAULT_K_NEIGHBORS = 8
_KNN_CHUNK = 1024


@dataclass(frozen=True)
class CooMatrix:
    """Square sparse matrix with coordinates sorted by ``(src, dst)``."""

    n_nodes: int
    src: np.ndarray
    dst: np.ndarray
    weight: np.ndarray

    @classmethod
    def from_arrays(cls, n_nodes, src, dst, weight, *, dedupe: str = "error"):
        src = np.asarray(src, dtype=np.int64)
        dst = np.asarray(dst, dtype=np.int64)
        weight = np.asarray(weight, dtype=np.float64)
        if not (src.shape == dst.shape == weight.shape) or src.ndim != 1:
            raise ValueError("src, dst and weight must be equal-length 1-D arrays")
        order = np.lexsort((dst, src))
        src, dst, weight = src[order], dst[order], weight[order]
        if src.size > 1:
            dup = (src[1:] == src[:-1]) & (dst[1:] == dst[:-1])
            if dup.any():
                if dedupe == "error":
                    k = int(np.flatnonzero(dup)[0])
                    raise ValueError(f"duplicate edge ({src[k]}, {dst[k]})")
                # "last": a later entry for the same pair wins
                keep = np.ones(src.size, dtype=bool)
                keep[:-1] = ~dup
                src, dst, weight = src[keep], dst[keep], weight[keep]
        return cls(int(n_nodes), src, dst, weight)

    @property
    def n_edges(self) -> int:
        return int(self.src.size)

    def edges(self) -> list[tuple[int, int, float]]:
        return [(int(i), int(j), float(w)) for i, j, w in zip(self.src, self.dst, self.weight)]

    def to_dense(self) -> np.ndarray:
        out = np.zeros((self.n_nodes, self.n_nodes))
        out[self.src, self.dst] = self.weight
        return out

    def row_sums(self) -> np.ndarray:
        return np.bincount(self.src, weights=self.weight, minlength=self.n_nodes)

    def support(self) -> set[tuple[int, int]]:
        return set(zip(self.src.tolist(), self.dst.tolist()))

    def lookup(self, i: int, j: int) -> float:
        """Weight at ``(i, j)``, or 0.0 when absent."""
        lo = np.searchsorted(self.src, i, side="left")
        hi = np.searchsorted(self.src, i, side="right")
        k = lo + np.searchsorted(self.dst[lo:hi], j)
        if k < hi and self.dst[k] == j:
            return float(self.weight[k])
        return 0.0

    def __eq__(self, other) -> bool:
        if not isinstance(other, CooMatrix):
            return NotImplemented
        return (
            self.n_nodes == other.n_nodes
            and np.array_equal(self.src, other.src)
            and np.array_equal(self.dst, other.dst)
            and np.array_equal(self.weight, other.weight)
        )


class SparseGraph(CooMatrix):
    """Weighted undirected graph stored as symmetric directed pairs."""

    def validate(self) -> SparseGraph:
        n = self.n_nodes
        if self.src.size and (self.src.min() < 0 or self.dst.min() < 0 or self.src.max() >= n or self.dst.max() >= n):
            raise ValueError("edge endpoint out of range")
        if not np.all(np.isfinite(self.weight)) or np.any(self.weight <= 0):
            raise ValueError("edge weights must be positive and finite")
        rev = np.lexsort((self.src, self.dst))
        if not (
            np.array_equal(self.src, self.dst[rev])
            and np.array_equal(self.dst, self.src[rev])
            and np.array_equal(self.weight, self.weight[rev])
        ):
            raise ValueError("graph is not symmetric")
        return self

    def scaled(self, factor: float) -> SparseGraph:
        return SparseGraph(self.n_nodes, self.src, self.dst, self.weight * factor)


def _squared_norms(x: np.ndarray) -> np.ndarray:
    sq = np.einsum("ij,ij->i", x, x)
    bad = np.flatnonzero(sq == 0)
    if bad.size:
        raise ValueError(f"node {int(bad[0])} has an all-zero feature row; cosine similarity undefined")
    return sq


def _topk_rows(sim: np.ndarray, k: int) -> np.ndarray:
    """Boolean mask of the ``k`` largest entries per row, ties to lower column."""
    kth = -np.partition(-sim, k - 1, axis=1)[:, k - 1]
    above = sim > kth[:, None]
    need = k - above.sum(axis=1)
    tied = sim == kth[:, None]
    return above | (tied & (np.cumsum(tied, axis=1) <= need[:, None]))


def knn_graph(x: np.ndarray, k_neighbors: int = DEFAULT_K_NEIGHBORS, seed: int = 0) -> SparseGraph:
    """Exact cosine k-NN graph, symmetrised by union.

    ``seed`` is accepted for interface stability; construction is exact and
    involves no randomness.
    """
    x = np.asarray(x, dtype=np.float64)
    n = x.shape[0]
    if not 1 <= k_neighbors < n:
        raise ValueError(f"k_neighbors must be in [1, {n - 1}], got {k_neighbors}")
    sq = _squared_norms(x)
    pairs_a, pairs_b = [], []
    for start in range(0, n, _KNN_CHUNK):
        stop = min(start + _KNN_CHUNK, n)
        # x_i.x_j / sqrt(|x_i|^2 |x_j|^2) gives exactly 1.0 for identical rows
        sim = (x[start:stop] @ x.T) / np.sqrt(sq[start:stop, None] * sq[None, :])
        sim[np.arange(stop - start), np.arange(start, stop)] = -np.inf
        rows, cols = np.nonzero(_topk_rows(sim, k_neighbors))
        rows = rows + start
        pairs_a.append(np.minimum(rows, cols))
        pairs_b.append(np.maximum(rows, cols))
    a = np.concatenate(pairs_a)
    b = np.concatenate(pairs_b)
    key = np.unique(a * n + b)
    a, b = key // n, key % n
    # recompute each undirected weight once so (i, j) and (j, i) agree bitwise
    w = np.clip(np.einsum("ij,ij->i", x[a], x[b]) / np.sqrt(sq[a] * sq[b]), WEIGHT_FLOOR, 1.0)
    g = SparseGraph.from_arrays(n, np.concatenate([a, b]), np.concatenate([b, a]), np.concatenate([w, w]))
    return g


def add_self_loops(g: SparseGraph, loop_weight: float = 1.0) -> SparseGraph:
    off = g.src != g.dst
    loops = np.arange(g.n_nodes)
    return SparseGraph.from_arrays(
        g.n_nodes,
        np.concatenate([g.src[off], loops]),
        np.concatenate([g.dst[off], loops]),
        np.concatenate([g.weight[off], np.full(g.n_nodes, float(loop_weight))]),
    )


def degree_vector(g: CooMatrix) -> np.ndarray:
    """Weighted out-degree of every node."""
    touched = np.bincount(g.src, minlength=g.n_nodes) > 0
    if not touched.all():
        raise ValueError(f"node {int(np.flatnonzero(~touched)[0])} has no incident edges; add self-loops first")
    return g.row_sums()


def symmetric_normalize(g: SparseGraph) -> SparseGraph:
    """Replace each ``w_ij`` by ``w_ij / sqrt(d_i d_j)``."""
    d = degree_vector(g)
    if np.any(d <= 0):
        raise ValueError(f"node {int(np.flatnonzero(d <= 0)[0])} has zero degree")
    # d_i * d_j is commutative, so (i, j) and (j, i) stay bitwise equal
    return SparseGraph(g.n_nodes, g.src, g.dst, g.weight / np.sqrt(d[g.src] * d[g.dst]))
