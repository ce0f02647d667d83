"""Flow-record ingestion: CSV parsing, preprocessing, stratified splits."""

from __future__ import annotations

import csv
import logging
import math
from collections import Counter
from collections.abc import Mapping, Sequence
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .numerics import RngStream

log = logging.getLogger(__name__)

KINDS = ("numeric", "categorical", "identifier", "timestamp", "label")
DEFAULT_RATIOS = (0.6, 0.2, 0.2)
ONEHOT_MAX_CARDINALITY = 16
_LABEL_FALLBACKS = ("Attack_type", "label", "Label")

# Edge-IIoTSet (DNN-EdgeIIoT export): columns that identify hosts/sessions or
# carry raw payloads are dropped; Attack_label is the binary twin of the target.
EDGE_IIOT_SCHEMA: dict[str, str] = {
    "frame.time": "timestamp",
    "icmp.transmit_timestamp": "timestamp",
    "ip.src_host": "identifier",
    "ip.dst_host": "identifier",
    "arp.src.proto_ipv4": "identifier",
    "arp.dst.proto_ipv4": "identifier",
    "http.file_data": "identifier",
    "http.request.full_uri": "identifier",
    "http.request.uri.query": "identifier",
    "tcp.options": "identifier",
    "tcp.payload": "identifier",
    "tcp.srcport": "identifier",
    "tcp.dstport": "identifier",
    "udp.port": "identifier",
    "mqtt.msg": "identifier",
    "Attack_label": "identifier",
    "http.request.method": "categorical",
    "http.referer": "categorical",
    "http.request.version": "categorical",
    "dns.qry.name.len": "categorical",
    "mqtt.conack.flags": "categorical",
    "mqtt.protoname": "categorical",
    "mqtt.topic": "categorical",
    "Attack_type": "label",
}

EDGE_IIOT_CLASSES = (
    "Backdoor",
    "DDoS_HTTP",
    "DDoS_ICMP",
    "DDoS_TCP",
    "DDoS_UDP",
    "Fingerprinting",
    "MITM",
    "Normal",
    "Password",
    "Port_Scanning",
    "Ransomware",
    "SQL_injection",
    "Uploading",
    "Vulnerability_scanner",
    "XSS",
)


class IngestError(ValueError):
    pass


@dataclass
class RecordTable:
    """Column-major flow records. Numeric columns hold floats (NaN where a cell
    failed to parse); every other kind holds strings."""

    columns: list[tuple[str, str]]
    data: dict[str, np.ndarray]
    malformed: dict[str, int] = field(default_factory=dict)

    def __post_init__(self):
        labels = [name for name, kind in self.columns if kind == "label"]
        if len(labels) != 1:
            raise IngestError(f"expected exactly one label column, found {len(labels)}")
        lengths = {len(self.data[name]) for name, _ in self.columns}
        if len(lengths) > 1:
            raise IngestError("columns have different lengths")

    @property
    def label_column(self) -> str:
        return next(name for name, kind in self.columns if kind == "label")

    @property
    def n_rows(self) -> int:
        return len(self.data[self.columns[0][0]])

    @property
    def rows(self) -> list[list]:
        cols = [self.data[name] for name, _ in self.columns]
        return [[c[i] for c in cols] for i in range(self.n_rows)]

    def kind_of(self, name: str) -> str:
        return dict(self.columns)[name]

    def take(self, index: np.ndarray) -> RecordTable:
        return RecordTable(list(self.columns), {k: v[index] for k, v in self.data.items()}, dict(self.malformed))


@dataclass
class FeatureMatrix:
    data: np.ndarray
    feature_names: list[str]
    dropped: dict[str, str] = field(default_factory=dict)

    @property
    def shape(self) -> tuple[int, int]:
        return self.data.shape


@dataclass
class LabelVector:
    labels: np.ndarray
    class_names: list[str]

    def __post_init__(self):
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if len(self.class_names) < 2:
            raise IngestError("need at least two classes")
        if self.labels.size and (self.labels.min() < 0 or self.labels.max() >= len(self.class_names)):
            raise IngestError("label id out of range")

    @property
    def n_classes(self) -> int:
        return len(self.class_names)

    def __len__(self) -> int:
        return int(self.labels.size)


@dataclass
class Masks:
    train: np.ndarray
    val: np.ndarray
    test: np.ndarray


@dataclass(frozen=True)
class PreprocessConfig:
    onehot_max_cardinality: int = ONEHOT_MAX_CARDINALITY
    # None: a malformed numeric cell is an error; a float: substitute it
    fill_malformed: float | None = None


def _parse_float(cell: str) -> float:
    try:
        return float(cell)
    except ValueError:
        return math.nan


def _resolve_label(header: Sequence[str], schema: Mapping[str, str]) -> str:
    declared = [c for c, k in schema.items() if k == "label"]
    if len(declared) > 1:
        raise IngestError(f"schema declares several label columns: {declared}")
    if declared:
        if declared[0] not in header:
            raise IngestError(f"label column {declared[0]!r} not found in header")
        return declared[0]
    for name in _LABEL_FALLBACKS:
        if name in header:
            return name
    raise IngestError("no label column: declare one in the schema (kind=label)")


def load_flow_csv(path: str | Path, schema: Mapping[str, str] | None = None) -> RecordTable:
    """Read a headed CSV export into a :class:`RecordTable`.

    Columns missing from ``schema`` are numeric. Schema entries naming absent
    columns are ignored, so a dataset-wide schema can be reused on trimmed
    exports (the label column is the exception).
    """
    path = Path(path)
    if not path.is_file():
        raise IngestError(f"no such file: {path}")
    schema = dict(schema or {})
    for name, kind in schema.items():
        if kind not in KINDS:
            raise IngestError(f"column {name!r}: unknown kind {kind!r}")
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise IngestError(f"{path}: empty file, header row required") from None
        if len(set(header)) != len(header):
            raise IngestError(f"{path}: duplicate column names in header")
        label = _resolve_label(header, schema)
        raw: list[list[str]] = []
        for row in reader:
            if not row:
                continue
            if len(row) != len(header):
                raise IngestError(
                    f"{path}, line {reader.line_num}: {len(row)} cells, header has {len(header)} columns"
                )
            raw.append(row)
    columns = []
    for name in header:
        kind = "label" if name == label else schema.get(name, "numeric")
        columns.append((name, kind))
    data: dict[str, np.ndarray] = {}
    malformed: dict[str, int] = {}
    for j, (name, kind) in enumerate(columns):
        cells = [r[j] for r in raw]
        if kind == "numeric":
            values = np.array([_parse_float(c) for c in cells], dtype=np.float64)
            bad = int(np.isnan(values).sum())
            if bad:
                malformed[name] = bad
            data[name] = values
        else:
            data[name] = np.array([c.strip() for c in cells], dtype=object)
    if malformed:
        log.warning("malformed numeric cells: %s", ", ".join(f"{k}={v}" for k, v in malformed.items()))
    return RecordTable(columns, data, malformed)


def write_flow_csv(table: RecordTable, path: str | Path) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow([name for name, _ in table.columns])
        cols = [table.data[name] for name, _ in table.columns]
        for i in range(table.n_rows):
            w.writerow([repr(float(c[i])) if c.dtype != object else c[i] for c in cols])


def _minmax(col: np.ndarray) -> np.ndarray:
    lo, hi = col.min(), col.max()
    return (col - lo) / (hi - lo)


def preprocess(table: RecordTable, cfg: PreprocessConfig | None = None) -> tuple[FeatureMatrix, LabelVector]:
    """Encode, scale and filter a record table into node features and labels.

    Identifier and timestamp columns are dropped, low-cardinality categoricals
    are one-hot encoded (higher cardinality: frequency encoded), every column
    is min-max scaled to [0, 1] and constant columns are dropped. Class ids
    follow lexicographic order of the class names.
    """
    cfg = cfg or PreprocessConfig()
    n = table.n_rows
    blocks: list[np.ndarray] = []
    names: list[str] = []
    dropped: dict[str, str] = {}
    for name, kind in table.columns:
        col = table.data[name]
        if kind in ("identifier", "timestamp"):
            dropped[name] = kind
            continue
        if kind == "label":
            continue
        if kind == "numeric":
            col = col.astype(np.float64)
            if not np.all(np.isfinite(col)):
                if cfg.fill_malformed is None or np.any(np.isinf(col)):
                    raise IngestError(f"column {name!r} has non-finite or unparseable values")
                col = np.where(np.isnan(col), cfg.fill_malformed, col)
            blocks.append(col[:, None])
            names.append(name)
            continue
        values = sorted(set(col.tolist()))
        if len(values) <= cfg.onehot_max_cardinality:
            for v in values:
                blocks.append((col == v).astype(np.float64)[:, None])
                names.append(f"{name}={v}")
        else:
            freq = Counter(col.tolist())
            blocks.append(np.array([freq[v] / n for v in col], dtype=np.float64)[:, None])
            names.append(f"{name}#freq")
    kept_blocks, kept_names = [], []
    for block, name in zip(blocks, names):
        col = block[:, 0]
        if n == 0 or col.min() == col.max():
            dropped[name] = "constant"
            continue
        kept_blocks.append(_minmax(col)[:, None])
        kept_names.append(name)
    if not kept_blocks:
        raise IngestError("preprocessing dropped every feature column")
    x = np.hstack(kept_blocks)
    raw_labels = table.data[table.label_column]
    class_names = sorted(set(raw_labels.tolist()))
    index = {c: i for i, c in enumerate(class_names)}
    labels = np.array([index[v] for v in raw_labels.tolist()], dtype=np.int64)
    return FeatureMatrix(x, kept_names, dropped), LabelVector(labels, class_names)


def _allocate(n: int, ratios: Sequence[float]) -> list[int]:
    """Split ``n`` items by ``ratios`` with every part >= 1 (largest remainder)."""
    ideal = [n * r for r in ratios]
    counts = [max(1, math.floor(x)) for x in ideal]
    while sum(counts) < n:
        # give the next item to the part furthest below its ideal share
        j = max(range(len(counts)), key=lambda i: (ideal[i] - counts[i], -i))
        counts[j] += 1
    while sum(counts) > n:
        j = max(range(len(counts)), key=lambda i: (counts[i] - ideal[i] if counts[i] > 1 else -math.inf, -i))
        counts[j] -= 1
    return counts


def stratified_split(labels: LabelVector, ratios: Sequence[float] = DEFAULT_RATIOS, seed: int = 0) -> Masks:
    ratios = tuple(float(r) for r in ratios)
    if len(ratios) != 3 or any(r <= 0 for r in ratios) or abs(sum(ratios) - 1.0) > 1e-9:
        raise IngestError(f"split ratios must be three positive fractions summing to 1, got {ratios}")
    y = labels.labels
    n = y.size
    train = np.zeros(n, dtype=bool)
    val = np.zeros(n, dtype=bool)
    test = np.zeros(n, dtype=bool)
    rng = RngStream(seed)
    for c in range(labels.n_classes):
        members = np.flatnonzero(y == c)
        if members.size == 0:
            continue
        if members.size < 3:
            raise IngestError(f"class {labels.class_names[c]!r} has {members.size} samples; need at least 3")
        members = members[rng.permutation(members.size)]
        n_tr, n_va, _ = _allocate(members.size, ratios)
        train[members[:n_tr]] = True
        val[members[n_tr : n_tr + n_va]] = True
        test[members[n_tr + n_va :]] = True
    return Masks(train, val, test)


def synth_dataset(
    n_per_class: int,
    n_classes: int,
    n_features: int,
    separation: float,
    seed: int,
) -> RecordTable:
    """Gaussian blobs with unit-variance noise, one per class, shuffled.

    Class means sit on scaled coordinate axes so every pair of means is
    ``separation`` apart; with more classes than features the means are
    spaced ``separation`` apart along the first axis instead.
    """
    if min(n_per_class, n_classes, n_features) < 1:
        raise ValueError("n_per_class, n_classes and n_features must be >= 1")
    if not separation > 0:
        raise ValueError(f"separation must be > 0, got {separation}")
    rng = RngStream(seed)
    means = np.zeros((n_classes, n_features))
    if n_classes <= n_features:
        means[np.arange(n_classes), np.arange(n_classes)] = separation / math.sqrt(2.0)
    else:
        means[:, 0] = separation * np.arange(n_classes)
    x = np.repeat(means, n_per_class, axis=0) + rng.normal((n_classes * n_per_class, n_features))
    y = np.repeat(np.arange(n_classes), n_per_class)
    order = rng.permutation(y.size)
    x, y = x[order], y[order]
    width = len(str(n_classes - 1))
    columns = [(f"f{j}", "numeric") for j in range(n_features)] + [("label", "label")]
    data = {f"f{j}": x[:, j].copy() for j in range(n_features)}
    data["label"] = np.array([f"class_{c:0{width}d}" for c in y], dtype=object)
    return RecordTable(columns, data)


def save_features(x: FeatureMatrix, y: LabelVector, path: str | Path) -> None:
    """Text format: ``N F C`` header, then per node F reals and the label id."""
    n, f = x.data.shape
    lines = [f"{n} {f} {y.n_classes}"]
    for row, label in zip(x.data, y.labels):
        lines.append(" ".join([f"{v:.17g}" for v in row] + [str(int(label))]))
    Path(path).write_text("\n".join(lines) + "\n")


def load_features(path: str | Path, feature_names=None, class_names=None) -> tuple[FeatureMatrix, LabelVector]:
    path = Path(path)
    if not path.is_file():
        raise IngestError(f"no such file: {path}")
    lines = path.read_text().split("\n")
    n, f, c = (int(t) for t in lines[0].split())
    body = np.array([[float(t) for t in line.split()] for line in lines[1 : n + 1]], dtype=np.float64)
    if body.shape != (n, f + 1):
        raise IngestError(f"{path}: expected {n} rows of {f + 1} values")
    names = list(feature_names) if feature_names else [f"f{j}" for j in range(f)]
    classes = list(class_names) if class_names else [str(k) for k in range(c)]
    return FeatureMatrix(body[:, :f], names), LabelVector(body[:, f].astype(np.int64), classes)


def stratified_subsample(table: RecordTable, max_records: int, seed: int = 0, min_per_class: int = 30) -> RecordTable:
    """Class-proportional subsample of at most ``max_records`` rows.

    Every class keeps at least ``min(min_per_class, class size)`` rows so
    rare classes survive; the remaining budget is shared proportionally.
    Row order of the result follows the original table.
    """
    raw = table.data[table.label_column]
    names, inverse, counts = np.unique(raw.astype(str), return_inverse=True, return_counts=True)
    if counts.sum() <= max_records:
        return table
    floor = np.minimum(counts, min_per_class)
    if floor.sum() > max_records:
        raise IngestError(f"max_records={max_records} cannot hold {min_per_class} rows of each of {names.size} classes")
    spare = counts - floor
    budget = max_records - floor.sum()
    extra = np.floor(spare * budget / spare.sum()).astype(np.int64)
    take = floor + extra
    rng = RngStream(seed)
    chosen = []
    for c in range(names.size):
        members = np.flatnonzero(inverse == c)
        chosen.append(members[rng.permutation(members.size)[: take[c]]])
    return table.take(np.sort(np.concatenate(chosen)))
