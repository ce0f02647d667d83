"""Plain-text persistence for graphs, Markov stacks, dense matrices and
checkpoints. Reals are written with 17 significant digits so they read back
bit-identical."""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .graphbuild import CooMatrix, SparseGraph
from .markov import MarkovLayerStack, RowStochasticMatrix

CHECKPOINT_MAGIC = "MARKOVGCN-CHECKPOINT 1"


def _fmt(v: float) -> str:
    return f"{v:.17g}"


def format_edges(m: CooMatrix) -> list[str]:
    lines = [f"{m.n_nodes} {m.n_edges}"]
    lines += [f"{i} {j} {_fmt(w)}" for i, j, w in zip(m.src.tolist(), m.dst.tolist(), m.weight.tolist())]
    return lines


def _parse_edges(lines: list[str], pos: int, cls):
    n, e = (int(t) for t in lines[pos].split())
    body = lines[pos + 1 : pos + 1 + e]
    if len(body) != e:
        raise ValueError(f"expected {e} edge lines, found {len(body)}")
    src = np.empty(e, dtype=np.int64)
    dst = np.empty(e, dtype=np.int64)
    w = np.empty(e, dtype=np.float64)
    for k, line in enumerate(body):
        a, b, c = line.split()
        src[k], dst[k], w[k] = int(a), int(b), float(c)
    return cls.from_arrays(n, src, dst, w), pos + 1 + e


def save_graph(g: SparseGraph, path: str | Path) -> None:
    Path(path).write_text("\n".join(format_edges(g)) + "\n")


def load_graph(path: str | Path) -> SparseGraph:
    g, _ = _parse_edges(Path(path).read_text().splitlines(), 0, SparseGraph)
    return g.validate()


def save_stack(stack: MarkovLayerStack, path: str | Path) -> None:
    lines = []
    for t, layer in enumerate(stack.layers, start=1):
        lines.append(f"LAYER {t}")
        lines += format_edges(layer)
    Path(path).write_text("\n".join(lines) + "\n")


def load_stack(path: str | Path) -> MarkovLayerStack:
    lines = Path(path).read_text().splitlines()
    layers, pos = [], 0
    while pos < len(lines) and lines[pos].strip():
        tag, t = lines[pos].split()
        if tag != "LAYER" or int(t) != len(layers) + 1:
            raise ValueError(f"line {pos + 1}: expected 'LAYER {len(layers) + 1}'")
        layer, pos = _parse_edges(lines, pos + 1, RowStochasticMatrix)
        layers.append(layer.validate())
    return MarkovLayerStack(tuple(layers))


def format_dense(a: np.ndarray) -> list[str]:
    a = np.atleast_2d(np.asarray(a, dtype=np.float64))
    return [f"{a.shape[0]} {a.shape[1]}"] + [" ".join(_fmt(v) for v in row) for row in a]


def _parse_dense(lines: list[str], pos: int) -> tuple[np.ndarray, int]:
    r, c = (int(t) for t in lines[pos].split())
    rows = [[float(t) for t in line.split()] for line in lines[pos + 1 : pos + 1 + r]]
    a = np.array(rows, dtype=np.float64).reshape(r, c)
    return a, pos + 1 + r


def save_dense(a: np.ndarray, path: str | Path) -> None:
    Path(path).write_text("\n".join(format_dense(a)) + "\n")


def load_dense(path: str | Path) -> np.ndarray:
    a, _ = _parse_dense(Path(path).read_text().splitlines(), 0)
    return a


def save_checkpoint(named: list[tuple[str, np.ndarray]], config: dict, path: str | Path, meta: dict | None = None) -> None:
    """Named dense sections after a one-line JSON config echo. 1-D arrays are
    stored as single-row matrices and restored as vectors."""
    lines = [CHECKPOINT_MAGIC, "CONFIG " + json.dumps(config, sort_keys=True)]
    if meta:
        lines.append("META " + json.dumps(meta, sort_keys=True))
    for name, a in named:
        lines.append(f"SECTION {name} {np.ndim(a)}")
        lines += format_dense(a)
    Path(path).write_text("\n".join(lines) + "\n")


def load_checkpoint(path: str | Path) -> tuple[dict[str, np.ndarray], dict, dict]:
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"no such checkpoint: {path}")
    lines = path.read_text().splitlines()
    if not lines or lines[0] != CHECKPOINT_MAGIC:
        raise ValueError(f"{path}: not a checkpoint file")
    config = json.loads(lines[1].removeprefix("CONFIG "))
    pos, meta = 2, {}
    if lines[pos].startswith("META "):
        meta = json.loads(lines[pos].removeprefix("META "))
        pos += 1
    named: dict[str, np.ndarray] = {}
    while pos < len(lines) and lines[pos]:
        _, name, ndim = lines[pos].split()
        a, pos = _parse_dense(lines, pos + 1)
        named[name] = a[0] if ndim == "1" else a
    return named, config, meta
