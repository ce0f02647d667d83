"""Small deterministic numerical kernel used by the model.

Dense matrices are plain ``float64`` numpy arrays. Sparse operands are any
object exposing ``n_nodes`` and sorted coordinate arrays ``src``, ``dst``,
``weight`` (see :mod:`markovgcn.graphbuild` and :mod:`markovgcn.markov`).
"""

from __future__ import annotations

from collections.abc import Callable, Sequence
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

RNG_ALGORITHM = "PCG64"


class RngStream:
    """Seeded PCG64 stream (numpy's bit-generator, stable across platforms).

    Doubles are drawn as the top 53 bits of each 64-bit PCG64 output, so an
    implementation in another language reproduces the same values given the
    same seed sequence.
    """

    def __init__(self, seed: int | np.random.SeedSequence):
        if isinstance(seed, np.random.SeedSequence):
            self.seed_seq = seed
            self.seed = int(seed.entropy)
        else:
            self.seed = int(seed)
            self.seed_seq = np.random.SeedSequence(self.seed)
        self.algorithm = RNG_ALGORITHM
        self.generator = np.random.Generator(np.random.PCG64(self.seed_seq))

    def spawn(self, n: int) -> list[RngStream]:
        return [RngStream(s) for s in self.seed_seq.spawn(n)]

    def uniform(self, low: float, high: float, size) -> np.ndarray:
        return self.generator.uniform(low, high, size)

    def normal(self, size) -> np.ndarray:
        return self.generator.standard_normal(size)

    def permutation(self, n: int) -> np.ndarray:
        return self.generator.permutation(n)


def _as_csr(m) -> sp.csr_matrix:
    n = m.n_nodes
    # coordinates are kept sorted by (src, dst), which is what CSR wants
    indptr = np.zeros(n + 1, dtype=np.int64)
    np.cumsum(np.bincount(m.src, minlength=n), out=indptr[1:])
    return sp.csr_matrix((m.weight, m.dst, indptr), shape=(n, n))


def spmm(m, h: np.ndarray) -> np.ndarray:
    """Sparse-times-dense product ``M @ H``.

    Each output row accumulates its nonzeros in ascending column order, so the
    result does not depend on thread count.
    """
    h = np.asarray(h, dtype=np.float64)
    if h.ndim != 2 or h.shape[0] != m.n_nodes:
        raise ValueError(f"shape mismatch: sparse operand has {m.n_nodes} columns, dense has shape {h.shape}")
    return np.asarray(_as_csr(m) @ h)


def spmm_transpose(m, h: np.ndarray) -> np.ndarray:
    """``M.T @ H`` without materialising the transpose."""
    h = np.asarray(h, dtype=np.float64)
    if h.ndim != 2 or h.shape[0] != m.n_nodes:
        raise ValueError(f"shape mismatch: sparse operand has {m.n_nodes} rows, dense has shape {h.shape}")
    return np.asarray(_as_csr(m).T.tocsr() @ h)


def relu(z: np.ndarray) -> np.ndarray:
    return np.maximum(z, 0.0)


def relu_mask(z: np.ndarray) -> np.ndarray:
    return (z > 0).astype(np.float64)


def log_softmax_rows(z: np.ndarray) -> np.ndarray:
    z = np.asarray(z, dtype=np.float64)
    shifted = z - z.max(axis=1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def mse_loss(pred: np.ndarray, target: np.ndarray) -> tuple[float, np.ndarray]:
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise ValueError(f"length mismatch: {pred.shape} vs {target.shape}")
    if pred.size == 0:
        raise ValueError("mse_loss needs at least one element")
    diff = pred - target
    return float(np.dot(diff, diff) / diff.size), 2.0 * diff / diff.size


def nll_loss(logp: np.ndarray, labels: np.ndarray, mask: np.ndarray) -> tuple[float, np.ndarray]:
    """Masked mean negative log-likelihood.

    The returned gradient is with respect to the logits that produced
    ``logp`` through a row-wise log-softmax: ``(softmax - onehot) / |mask|`` on
    masked rows, zero elsewhere.
    """
    mask = np.asarray(mask, dtype=bool)
    count = int(mask.sum())
    if count == 0:
        raise ValueError("nll_loss mask selects no nodes")
    labels = np.asarray(labels, dtype=np.int64)
    rows = np.flatnonzero(mask)
    loss = -float(logp[rows, labels[rows]].sum()) / count
    grad = np.zeros_like(logp)
    grad[rows] = np.exp(logp[rows])
    grad[rows, labels[rows]] -= 1.0
    grad[rows] /= count
    return loss, grad


def glorot_init(rows: int, cols: int, rng: RngStream) -> np.ndarray:
    if rows < 1 or cols < 1:
        raise ValueError(f"glorot_init needs positive dims, got {rows}x{cols}")
    bound = np.sqrt(6.0 / (rows + cols))
    return rng.uniform(-bound, bound, (rows, cols))


@dataclass
class AdamState:
    first_moment: list[np.ndarray]
    second_moment: list[np.ndarray]
    step_count: int = 0

    @classmethod
    def zeros_like(cls, params: Sequence[np.ndarray]) -> AdamState:
        return cls([np.zeros_like(p) for p in params], [np.zeros_like(p) for p in params], 0)


def adam_step(
    params: Sequence[np.ndarray],
    grads: Sequence[np.ndarray],
    state: AdamState,
    lr: float = 0.01,
    betas: tuple[float, float] = (0.9, 0.999),
    eps: float = 1e-8,
    weight_decay: float = 0.0,
) -> tuple[list[np.ndarray], AdamState]:
    """One Adam update with decoupled weight decay. Inputs are not mutated."""
    if not (len(params) == len(grads) == len(state.first_moment) == len(state.second_moment)):
        raise ValueError("params, grads and optimizer state differ in length")
    beta1, beta2 = betas
    t = state.step_count + 1
    bc1 = 1.0 - beta1**t
    bc2 = 1.0 - beta2**t
    new_params, new_m, new_v = [], [], []
    for p, g, m, v in zip(params, grads, state.first_moment, state.second_moment):
        if p.shape != g.shape or p.shape != m.shape:
            raise ValueError(f"shape mismatch: param {p.shape}, grad {g.shape}, moment {m.shape}")
        p = p - lr * weight_decay * p if weight_decay else p.copy()
        m = beta1 * m + (1.0 - beta1) * g
        v = beta2 * v + (1.0 - beta2) * (g * g)
        p -= lr * (m / bc1) / (np.sqrt(v / bc2) + eps)
        new_params.append(p)
        new_m.append(m)
        new_v.append(v)
    return new_params, AdamState(new_m, new_v, t)


def grad_check(
    f: Callable[[np.ndarray], tuple[float, np.ndarray]],
    point: np.ndarray,
    h: float = 1e-5,
) -> float:
    """Compare ``f``'s analytic gradient against central differences.

    ``f`` maps a flat parameter vector to ``(value, gradient)``. Returns
    ``max_i |numeric_i - analytic_i| / max(1, |analytic_i|)``.
    """
    if h <= 0:
        raise ValueError("step h must be positive")
    point = np.asarray(point, dtype=np.float64)
    _, analytic = f(point.copy())
    analytic = np.asarray(analytic, dtype=np.float64).ravel()
    worst = 0.0
    probe = point.copy()
    for i in range(point.size):
        orig = probe.flat[i]
        probe.flat[i] = orig + h
        up, _ = f(probe)
        probe.flat[i] = orig - h
        down, _ = f(probe)
        probe.flat[i] = orig
        numeric = (up - down) / (2.0 * h)
        worst = max(worst, abs(numeric - analytic[i]) / max(1.0, abs(analytic[i])))
    return worst


@dataclass
class ParamPack:
    """Flattens a list of named arrays into one vector and back (grad checks)."""

    shapes: list[tuple[int, ...]] = field(default_factory=list)

    @classmethod
    def of(cls, arrays: Sequence[np.ndarray]) -> ParamPack:
        return cls([a.shape for a in arrays])

    def flatten(self, arrays: Sequence[np.ndarray]) -> np.ndarray:
        return np.concatenate([np.asarray(a, dtype=np.float64).ravel() for a in arrays])

    def unflatten(self, vec: np.ndarray) -> list[np.ndarray]:
        out, pos = [], 0
        for shape in self.shapes:
            size = int(np.prod(shape))
            out.append(vec[pos : pos + size].reshape(shape).copy())
            pos += size
        return out
