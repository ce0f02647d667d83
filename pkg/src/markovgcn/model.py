"""Markov GCN: forward/backward passes, edge-weight pretext head, classifier,
and the pretrain-then-fine-tune training loop."""

from __future__ import annotations

import copy
import logging
import time
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from . import graphbuild, markov
from .ingest import FeatureMatrix, LabelVector, Masks, stratified_split
from .markov import MarkovConfig, MarkovLayerStack
from .numerics import AdamState, RngStream, adam_step, glorot_init, log_softmax_rows, mse_loss, nll_loss, relu, spmm, spmm_transpose

log = logging.getLogger(__name__)


class TrainingError(RuntimeError):
    pass


@dataclass
class ModelParams:
    gcn_weights: list[np.ndarray]
    mlp_hidden: np.ndarray
    mlp_hidden_bias: np.ndarray
    mlp_out: np.ndarray
    mlp_out_bias: np.ndarray
    classifier: np.ndarray
    classifier_bias: np.ndarray

    @classmethod
    def init(cls, n_features: int, hidden_dim: int, n_layers: int, n_classes: int, rng: RngStream) -> ModelParams:
        gcn_rng, edge_rng, cls_rng = rng.spawn(3)
        dims = [n_features] + [hidden_dim] * n_layers
        return cls(
            gcn_weights=[glorot_init(dims[i], dims[i + 1], gcn_rng) for i in range(n_layers)],
            mlp_hidden=glorot_init(2 * hidden_dim, hidden_dim, edge_rng),
            mlp_hidden_bias=np.zeros(hidden_dim),
            mlp_out=glorot_init(hidden_dim, 1, edge_rng),
            mlp_out_bias=np.zeros(1),
            classifier=glorot_init(hidden_dim, n_classes, cls_rng),
            classifier_bias=np.zeros(n_classes),
        )

    def edge_head(self) -> list[np.ndarray]:
        return [self.mlp_hidden, self.mlp_hidden_bias, self.mlp_out, self.mlp_out_bias]

    def head(self) -> list[np.ndarray]:
        return [self.classifier, self.classifier_bias]

    def named(self) -> list[tuple[str, np.ndarray]]:
        out = [(f"gcn.{i}", w) for i, w in enumerate(self.gcn_weights)]
        out += [
            ("edge.hidden", self.mlp_hidden),
            ("edge.hidden_bias", self.mlp_hidden_bias),
            ("edge.out", self.mlp_out),
            ("edge.out_bias", self.mlp_out_bias),
            ("classifier", self.classifier),
            ("classifier.bias", self.classifier_bias),
        ]
        return out

    @classmethod
    def from_named(cls, named: dict[str, np.ndarray]) -> ModelParams:
        n_layers = sum(1 for k in named if k.startswith("gcn."))
        return cls(
            gcn_weights=[named[f"gcn.{i}"] for i in range(n_layers)],
            mlp_hidden=named["edge.hidden"],
            mlp_hidden_bias=named["edge.hidden_bias"],
            mlp_out=named["edge.out"],
            mlp_out_bias=named["edge.out_bias"],
            classifier=named["classifier"],
            classifier_bias=named["classifier.bias"],
        )

    def copy(self) -> ModelParams:
        return copy.deepcopy(self)


@dataclass
class ForwardTrace:
    inputs: list[np.ndarray]  # H^(l-1) per layer
    propagated: list[np.ndarray]  # M_l H^(l-1)
    pre_activations: list[np.ndarray]  # Z^(l)
    activations: list[np.ndarray]  # H^(l)
    logits: np.ndarray
    logp: np.ndarray

    @property
    def embeddings(self) -> np.ndarray:
        return self.activations[-1]


def gcn_forward(stack, x, params: ModelParams) -> ForwardTrace:
    """``H^(l) = relu(M_l H^(l-1) W^(l))`` for each layer, then the classifier.

    ``stack`` is any sequence of sparse propagation matrices, one per layer.
    """
    h = x.data if isinstance(x, FeatureMatrix) else np.asarray(x, dtype=np.float64)
    if len(stack) != len(params.gcn_weights):
        raise ValueError(f"{len(stack)} propagation matrices for {len(params.gcn_weights)} layers")
    if h.shape[0] != stack[0].n_nodes:
        raise ValueError(f"{h.shape[0]} feature rows for {stack[0].n_nodes} nodes")
    inputs, propagated, zs, hs = [], [], [], []
    for m, w in zip(stack, params.gcn_weights):
        if h.shape[1] != w.shape[0]:
            raise ValueError(f"layer input width {h.shape[1]} does not match weight rows {w.shape[0]}")
        inputs.append(h)
        mh = spmm(m, h)
        z = mh @ w
        h = relu(z)
        propagated.append(mh)
        zs.append(z)
        hs.append(h)
    logits = h @ params.classifier + params.classifier_bias
    return ForwardTrace(inputs, propagated, zs, hs, logits, log_softmax_rows(logits))


def gcn_backward(stack, trace: ForwardTrace, params: ModelParams, d_embed: np.ndarray) -> list[np.ndarray]:
    """Gradients of the GCN weights given the gradient at the embeddings."""
    grads = [None] * len(params.gcn_weights)
    dh = d_embed
    for layer in reversed(range(len(params.gcn_weights))):
        dz = dh * (trace.pre_activations[layer] > 0)
        grads[layer] = trace.propagated[layer].T @ dz
        if layer:
            dh = spmm_transpose(stack[layer], dz @ params.gcn_weights[layer].T)
    return grads


@dataclass
class EdgeHeadTrace:
    concat: np.ndarray
    hidden_pre: np.ndarray
    hidden: np.ndarray
    pred: np.ndarray


def edge_head_forward(embeddings: np.ndarray, src: np.ndarray, dst: np.ndarray, params: ModelParams) -> EdgeHeadTrace:
    """``w_hat_ij = relu([H_i || H_j] A + a) b + c`` for each edge (i, j)."""
    src = np.asarray(src, dtype=np.int64)
    dst = np.asarray(dst, dtype=np.int64)
    concat = np.hstack([embeddings[src], embeddings[dst]])
    pre = concat @ params.mlp_hidden + params.mlp_hidden_bias
    hidden = relu(pre)
    pred = (hidden @ params.mlp_out)[:, 0] + params.mlp_out_bias[0]
    return EdgeHeadTrace(concat, pre, hidden, pred)


def edge_head_backward(trace: EdgeHeadTrace, src, dst, n_nodes: int, params: ModelParams, d_pred: np.ndarray):
    """Returns ``(edge-head grads, gradient at the node embeddings)``."""
    d_out = trace.hidden.T @ d_pred[:, None]
    d_out_bias = np.array([d_pred.sum()])
    d_pre = (d_pred[:, None] @ params.mlp_out.T) * (trace.hidden_pre > 0)
    d_hidden = trace.concat.T @ d_pre
    d_hidden_bias = d_pre.sum(axis=0)
    d_concat = d_pre @ params.mlp_hidden.T
    width = d_concat.shape[1] // 2
    d_embed = np.zeros((n_nodes, width))
    np.add.at(d_embed, src, d_concat[:, :width])
    np.add.at(d_embed, dst, d_concat[:, width:])
    return [d_hidden, d_hidden_bias, d_out, d_out_bias], d_embed


def pretext_loss_and_grads(stack, x, params: ModelParams, targets: markov.CooMatrix):
    """MSE between predicted and target edge weights over the target support.

    Returns ``(loss, gcn grads, edge-head grads, predictions)``.
    """
    trace = gcn_forward(stack, x, params)
    head = edge_head_forward(trace.embeddings, targets.src, targets.dst, params)
    loss, d_pred = mse_loss(head.pred, targets.weight)
    head_grads, d_embed = edge_head_backward(head, targets.src, targets.dst, targets.n_nodes, params, d_pred)
    return loss, gcn_backward(stack, trace, params, d_embed), head_grads, head.pred


def finetune_loss_and_grads(stack, x, params: ModelParams, labels, mask):
    """Masked mean NLL. Returns ``(loss, gcn grads, classifier grads, trace)``."""
    y = labels.labels if isinstance(labels, LabelVector) else np.asarray(labels)
    trace = gcn_forward(stack, x, params)
    loss, d_logits = nll_loss(trace.logp, y, mask)
    d_cls = trace.embeddings.T @ d_logits
    d_cls_bias = d_logits.sum(axis=0)
    d_embed = d_logits @ params.classifier.T
    return loss, gcn_backward(stack, trace, params, d_embed), [d_cls, d_cls_bias], trace


@dataclass(frozen=True)
class Optim:
    lr: float = 0.01
    betas: tuple[float, float] = (0.9, 0.999)
    eps: float = 1e-8
    weight_decay: float = 5e-4


def pretext_step(stack, x, params: ModelParams, targets, state: AdamState, optim: Optim = Optim()):
    """One full-batch pretext update of the GCN and edge head; the classifier
    is left untouched."""
    loss, g_gcn, g_edge, _ = pretext_loss_and_grads(stack, x, params, targets)
    trainable = params.gcn_weights + params.edge_head()
    new, state = adam_step(trainable, g_gcn + g_edge, state, optim.lr, optim.betas, optim.eps, optim.weight_decay)
    n = len(params.gcn_weights)
    out = replace(
        params,
        gcn_weights=new[:n],
        mlp_hidden=new[n],
        mlp_hidden_bias=new[n + 1],
        mlp_out=new[n + 2],
        mlp_out_bias=new[n + 3],
    )
    return loss, out, state


def finetune_step(stack, x, params: ModelParams, labels, mask, state: AdamState, optim: Optim = Optim()):
    """One full-batch classification update of the GCN and classifier; the
    edge head is left untouched."""
    loss, g_gcn, g_cls, _ = finetune_loss_and_grads(stack, x, params, labels, mask)
    trainable = params.gcn_weights + params.head()
    new, state = adam_step(trainable, g_gcn + g_cls, state, optim.lr, optim.betas, optim.eps, optim.weight_decay)
    n = len(params.gcn_weights)
    out = replace(params, gcn_weights=new[:n], classifier=new[n], classifier_bias=new[n + 1])
    return loss, out, state


def predict(logp: np.ndarray) -> np.ndarray:
    """Row-wise argmax; ``np.argmax`` already returns the lowest index on ties."""
    return np.argmax(np.asarray(logp), axis=1).astype(np.int64)


@dataclass(frozen=True)
class TrainConfig:
    hidden_dim: int = 64
    pretext_epochs: int = 100
    fine_tune_epochs: int = 200
    lr: float = 0.01
    weight_decay: float = 5e-4
    markov: MarkovConfig = field(default_factory=MarkovConfig)
    k_neighbors: int = graphbuild.DEFAULT_K_NEIGHBORS
    seed: int = 0
    mode: str = "ssl"
    propagation: str = "markov"
    split: tuple[float, float, float] = (0.6, 0.2, 0.2)

    def __post_init__(self):
        if min(self.hidden_dim, self.pretext_epochs, self.fine_tune_epochs, self.k_neighbors) < 1:
            raise ValueError("hidden_dim, epoch counts and k_neighbors must be >= 1")
        if not self.lr > 0:
            raise ValueError(f"lr must be positive, got {self.lr}")
        if self.weight_decay < 0:
            raise ValueError("weight_decay must be non-negative")
        if self.mode not in ("ssl", "scratch"):
            raise ValueError(f"mode must be 'ssl' or 'scratch', got {self.mode!r}")
        if self.propagation not in ("markov", "symmetric"):
            raise ValueError(f"propagation must be 'markov' or 'symmetric', got {self.propagation!r}")

    @property
    def optim(self) -> Optim:
        return Optim(lr=self.lr, weight_decay=self.weight_decay)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["markov"] = asdict(self.markov)
        d["split"] = list(self.split)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> TrainConfig:
        d = dict(d)
        d["markov"] = MarkovConfig(**d.get("markov", {}))
        if "split" in d:
            d["split"] = tuple(d["split"])
        return cls(**d)


@dataclass
class History:
    pretext_loss: list[float] = field(default_factory=list)
    finetune_loss: list[float] = field(default_factory=list)
    val_accuracy: list[float] = field(default_factory=list)
    best_epoch: int = 0


@dataclass
class Prepared:
    """Graph-side inputs shared by training and evaluation."""

    graph: graphbuild.SparseGraph
    stack: MarkovLayerStack
    propagation: list
    masks: Masks


def prepare(x: FeatureMatrix, y: LabelVector, cfg: TrainConfig) -> Prepared:
    g = graphbuild.add_self_loops(graphbuild.knn_graph(x.data, cfg.k_neighbors, cfg.seed))
    stack = markov.markov_process_agg(g, cfg.markov)
    if cfg.propagation == "symmetric":
        prop = [graphbuild.symmetric_normalize(g)] * cfg.markov.nlayers
    else:
        prop = list(stack.layers)
    return Prepared(g, stack, prop, stratified_split(y, cfg.split, cfg.seed))


def _check_finite(loss: float, phase: str, epoch: int) -> None:
    if not np.isfinite(loss):
        raise TrainingError(f"{phase} loss became non-finite at epoch {epoch}: {loss}")


def _accuracy(logp: np.ndarray, y: np.ndarray, mask: np.ndarray) -> float:
    return float(np.mean(predict(logp[mask]) == y[mask]))


def train(x: FeatureMatrix, y: LabelVector, cfg: TrainConfig, prepared: Prepared | None = None):
    """Run pretraining (ssl mode) and fine-tuning.

    Returns ``(best params, history, prepared inputs)``. The returned
    parameters are those with the highest validation accuracy seen during
    fine-tuning (earliest epoch on ties).
    """
    prep = prepared or prepare(x, y, cfg)
    stack, masks = prep.propagation, prep.masks
    params = ModelParams.init(x.data.shape[1], cfg.hidden_dim, cfg.markov.nlayers, y.n_classes, RngStream(cfg.seed))
    hist = History()
    optim = cfg.optim
    if cfg.mode == "ssl":
        targets = prep.stack[0]
        state = AdamState.zeros_like(params.gcn_weights + params.edge_head())
        for epoch in range(1, cfg.pretext_epochs + 1):
            loss, params, state = pretext_step(stack, x, params, targets, state, optim)
            _check_finite(loss, "pretext", epoch)
            hist.pretext_loss.append(loss)
    state = AdamState.zeros_like(params.gcn_weights + params.head())
    best, best_acc = params.copy(), -1.0
    labels = y.labels
    for epoch in range(1, cfg.fine_tune_epochs + 1):
        loss, params, state = finetune_step(stack, x, params, labels, masks.train, state, optim)
        _check_finite(loss, "fine-tune", epoch)
        hist.finetune_loss.append(loss)
        acc = _accuracy(gcn_forward(stack, x, params).logp, labels, masks.val)
        hist.val_accuracy.append(acc)
        if acc > best_acc:
            best, best_acc, hist.best_epoch = params.copy(), acc, epoch
    log.info("trained: best val accuracy %.4f at epoch %d", best_acc, hist.best_epoch)
    return best, hist, prep


def train_pipeline(x: FeatureMatrix, y: LabelVector, cfg: TrainConfig):
    """Full run: graph, Markov stack, training, test-set evaluation.

    Returns ``(params, history, MetricsReport)``.
    """
    from .metrics import evaluate

    start = time.perf_counter()
    params, hist, prep = train(x, y, cfg)
    trace = gcn_forward(prep.propagation, x, params)
    report = evaluate(trace.logp, y, prep.masks.test, config=cfg.to_dict())
    report.wall_clock_seconds = time.perf_counter() - start
    return params, hist, report
