"""Classification metrics, ROC curves and report files."""

from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .ingest import LabelVector

REPORT_SCHEMA_VERSION = 1


def confusion_matrix(true, pred, n_classes: int) -> np.ndarray:
    """``C[t, p]`` counts samples of true class ``t`` predicted as ``p``."""
    true = np.asarray(true, dtype=np.int64)
    pred = np.asarray(pred, dtype=np.int64)
    if true.shape != pred.shape:
        raise ValueError(f"length mismatch: {true.shape} vs {pred.shape}")
    for name, v in (("true", true), ("pred", pred)):
        if v.size and (v.min() < 0 or v.max() >= n_classes):
            raise ValueError(f"{name} label out of range [0, {n_classes})")
    return np.bincount(true * n_classes + pred, minlength=n_classes * n_classes).reshape(n_classes, n_classes)


@dataclass
class ClassScores:
    precision: float
    recall: float
    f1: float
    support: int


@dataclass
class PRF:
    per_class: list[ClassScores]
    macro: dict[str, float]
    weighted: dict[str, float]
    zero_division: list[str]


def _safe_div(num: np.ndarray, den: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    zero = den == 0
    out = np.divide(num, np.where(zero, 1, den), dtype=np.float64)
    out[zero] = 0.0
    return out, zero


def precision_recall_f1(confusion: np.ndarray, class_names=None) -> PRF:
    """Per-class precision/recall/F1 plus macro and support-weighted means.

    An undefined ratio (zero denominator) is reported as 0 and listed in
    ``zero_division``.
    """
    cm = np.asarray(confusion, dtype=np.int64)
    total = cm.sum()
    if total == 0:
        raise ValueError("confusion matrix is empty")
    names = class_names or [str(i) for i in range(cm.shape[0])]
    tp = np.diag(cm).astype(np.float64)
    support = cm.sum(axis=1)
    predicted = cm.sum(axis=0)
    precision, p_zero = _safe_div(tp, predicted)
    recall, r_zero = _safe_div(tp, support)
    f1, f_zero = _safe_div(2 * precision * recall, precision + recall)
    flags = [f"precision[{names[c]}]" for c in np.flatnonzero(p_zero)]
    flags += [f"recall[{names[c]}]" for c in np.flatnonzero(r_zero)]
    flags += [f"f1[{names[c]}]" for c in np.flatnonzero(f_zero)]
    weights = support / total
    per_class = [
        ClassScores(float(p), float(r), float(f), int(s)) for p, r, f, s in zip(precision, recall, f1, support)
    ]
    macro = {"precision": float(precision.mean()), "recall": float(recall.mean()), "f1": float(f1.mean())}
    weighted = {
        "precision": float(precision @ weights),
        "recall": float(recall @ weights),
        "f1": float(f1 @ weights),
    }
    return PRF(per_class, macro, weighted, flags)


def roc_curve(scores, positive) -> tuple[list[tuple[float, float]], float]:
    """ROC points from a descending-score sweep (tied scores form one step)
    and the trapezoidal area under them."""
    scores = np.asarray(scores, dtype=np.float64).ravel()
    positive = np.asarray(positive, dtype=bool).ravel()
    n_pos = int(positive.sum())
    n_neg = positive.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise ValueError("ROC needs both positive and negative samples")
    order = np.argsort(-scores, kind="stable")
    s, p = scores[order], positive[order]
    # last index of each run of equal scores
    ends = np.flatnonzero(np.r_[s[1:] != s[:-1], True])
    tps = np.cumsum(p)[ends]
    fps = (ends + 1) - tps
    tpr = np.r_[0.0, tps / n_pos]
    fpr = np.r_[0.0, fps / n_neg]
    auc = float(np.sum((fpr[1:] - fpr[:-1]) * (tpr[1:] + tpr[:-1]) / 2.0))
    return [(float(a), float(b)) for a, b in zip(fpr, tpr)], auc


def roc_micro(probabilities, true) -> tuple[list[tuple[float, float]], float]:
    """Micro-averaged one-vs-rest ROC over all ``N x C`` (score, is-true) pairs."""
    probs = np.asarray(probabilities, dtype=np.float64)
    y = true.labels if isinstance(true, LabelVector) else np.asarray(true, dtype=np.int64)
    if np.unique(y).size < 2:
        raise ValueError("micro ROC is degenerate when the truth holds a single class")
    onehot = np.zeros(probs.shape, dtype=bool)
    onehot[np.arange(y.size), y] = True
    return roc_curve(probs, onehot)


@dataclass
class MetricsReport:
    accuracy: float
    class_names: list[str]
    per_class: list[ClassScores]
    macro: dict[str, float]
    weighted: dict[str, float]
    confusion: list[list[int]]
    roc: dict[str, list[tuple[float, float]]]
    auc: dict[str, float]
    auc_micro: float
    n_evaluated: int
    zero_division: list[str] = field(default_factory=list)
    config: dict = field(default_factory=dict)
    notes: dict = field(default_factory=dict)
    # kept out of report.json so repeated runs produce identical files
    wall_clock_seconds: float | None = None

    def to_json_dict(self) -> dict:
        d = asdict(self)
        d.pop("wall_clock_seconds")
        d["roc"] = {k: [list(p) for p in v] for k, v in self.roc.items()}
        return {"schema_version": REPORT_SCHEMA_VERSION, **d}

    @classmethod
    def from_json_dict(cls, d: dict) -> MetricsReport:
        d = dict(d)
        version = d.pop("schema_version", None)
        if version != REPORT_SCHEMA_VERSION:
            raise ValueError(f"unsupported report schema version {version!r}")
        d["per_class"] = [ClassScores(**c) for c in d["per_class"]]
        d["roc"] = {k: [tuple(p) for p in v] for k, v in d["roc"].items()}
        return cls(**d)


def evaluate(logp: np.ndarray, labels: LabelVector, mask: np.ndarray, config: dict | None = None) -> MetricsReport:
    """Metrics for the nodes selected by ``mask``."""
    from .model import predict

    mask = np.asarray(mask, dtype=bool)
    y = labels.labels[mask]
    logp = np.asarray(logp)[mask]
    pred = predict(logp)
    c = labels.n_classes
    cm = confusion_matrix(y, pred, c)
    prf = precision_recall_f1(cm, labels.class_names)
    probs = np.exp(logp)
    roc: dict[str, list[tuple[float, float]]] = {}
    auc: dict[str, float] = {}
    notes: dict = {}
    skipped = []
    for k, name in enumerate(labels.class_names):
        pos = y == k
        if pos.all() or not pos.any():
            skipped.append(name)
            continue
        roc[name], auc[name] = roc_curve(probs[:, k], pos)
    if skipped:
        notes["roc_skipped_classes"] = skipped
    roc["micro"], auc_micro = roc_micro(probs, y)
    return MetricsReport(
        accuracy=float(np.trace(cm) / cm.sum()),
        class_names=list(labels.class_names),
        per_class=prf.per_class,
        macro=prf.macro,
        weighted=prf.weighted,
        confusion=cm.tolist(),
        roc=roc,
        auc=auc,
        auc_micro=auc_micro,
        n_evaluated=int(mask.sum()),
        zero_division=prf.zero_division,
        config=dict(config or {}),
        notes=notes,
    )


def format_table(report: MetricsReport) -> str:
    width = max(12, *(len(n) for n in report.class_names))
    lines = [
        f"accuracy   {report.accuracy:.4f}   (n={report.n_evaluated})",
        f"micro AUC  {report.auc_micro:.4f}",
        "",
        f"{'class':<{width}}  precision  recall     f1         support",
    ]
    for name, s in zip(report.class_names, report.per_class):
        lines.append(f"{name:<{width}}  {s.precision:<9.4f}  {s.recall:<9.4f}  {s.f1:<9.4f}  {s.support}")
    for label, agg in (("macro avg", report.macro), ("weighted avg", report.weighted)):
        lines.append(f"{label:<{width}}  {agg['precision']:<9.4f}  {agg['recall']:<9.4f}  {agg['f1']:.4f}")
    if report.zero_division:
        lines += ["", "undefined (reported as 0): " + ", ".join(report.zero_division)]
    lines += ["", "confusion matrix (rows: true, columns: predicted)"]
    lines += [" ".join(f"{v:6d}" for v in row) for row in report.confusion]
    return "\n".join(lines) + "\n"


def emit_report(report: MetricsReport, path: str | Path) -> dict[str, Path]:
    """Write ``<path>.json``, ``<path>.txt`` and ``<path>_roc.csv``.

    Wall-clock time goes to ``<path>_timing.json`` so that the report files
    themselves are reproducible byte for byte.
    """
    base = Path(path)
    if base.suffix == ".json":
        base = base.with_suffix("")
    base.parent.mkdir(parents=True, exist_ok=True)
    out = {
        "json": base.with_name(base.name + ".json"),
        "text": base.with_name(base.name + ".txt"),
        "roc": base.with_name(base.name + "_roc.csv"),
    }
    out["json"].write_text(json.dumps(report.to_json_dict(), indent=2, sort_keys=True) + "\n")
    out["text"].write_text(format_table(report))
    with out["roc"].open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["class", "fpr", "tpr"])
        for name, points in report.roc.items():
            for fpr, tpr in points:
                w.writerow([name, repr(fpr), repr(tpr)])
    if report.wall_clock_seconds is not None:
        out["timing"] = base.with_name(base.name + "_timing.json")
        out["timing"].write_text(json.dumps({"wall_clock_seconds": report.wall_clock_seconds}) + "\n")
    return out


def load_report(path: str | Path) -> MetricsReport:
    base = Path(path)
    if base.suffix == ".json":
        base = base.with_suffix("")
    report = MetricsReport.from_json_dict(json.loads(base.with_name(base.name + ".json").read_text()))
    timing = base.with_name(base.name + "_timing.json")
    if timing.is_file():
        report.wall_clock_seconds = json.loads(timing.read_text())["wall_clock_seconds"]
    return report
