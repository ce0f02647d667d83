"""Run configuration: a flat TOML file plus an optional ``[schema]`` table.

Every key maps onto a :class:`~markovgcn.model.TrainConfig` /
:class:`~markovgcn.markov.MarkovConfig` field or a data option; unknown keys
are rejected so typos fail loudly.
"""

from __future__ import annotations

import sys
from dataclasses import dataclass, field, fields
from pathlib import Path

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .ingest import EDGE_IIOT_SCHEMA, KINDS, PreprocessConfig
from .markov import MarkovConfig
from .model import TrainConfig

MARKOV_KEYS = {f.name for f in fields(MarkovConfig)}
TRAIN_KEYS = {f.name for f in fields(TrainConfig)} - {"markov"}
DATA_KEYS = {"data", "dataset", "max_records", "min_per_class", "onehot_max_cardinality", "fill_malformed"}
SCHEMA_PRESETS = {"edge_iiot": EDGE_IIOT_SCHEMA, "generic": {}}


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    train: TrainConfig = field(default_factory=TrainConfig)
    data: str | None = None
    dataset: str = "generic"
    max_records: int | None = None
    min_per_class: int = 30
    preprocess: PreprocessConfig = field(default_factory=PreprocessConfig)
    schema: dict[str, str] = field(default_factory=dict)

    def full_schema(self) -> dict[str, str]:
        return {**SCHEMA_PRESETS[self.dataset], **self.schema}

    def with_overrides(self, **train_overrides) -> RunConfig:
        from dataclasses import replace

        kept = {k: v for k, v in train_overrides.items() if v is not None}
        return replace(self, train=replace(self.train, **kept)) if kept else self

    def echo(self) -> dict:
        return {
            **self.train.to_dict(),
            "dataset": self.dataset,
            "max_records": self.max_records,
            "min_per_class": self.min_per_class,
            "onehot_max_cardinality": self.preprocess.onehot_max_cardinality,
            "fill_malformed": self.preprocess.fill_malformed,
            "schema": dict(sorted(self.schema.items())),
        }


def parse_config(doc: dict, origin: str = "<config>") -> RunConfig:
    doc = dict(doc)
    schema = doc.pop("schema", {})
    if not isinstance(schema, dict):
        raise ConfigError(f"{origin}: [schema] must be a table of column = kind")
    for col, kind in schema.items():
        if kind not in KINDS:
            raise ConfigError(f"{origin}: schema column {col!r} has unknown kind {kind!r}")
    unknown = sorted(set(doc) - MARKOV_KEYS - TRAIN_KEYS - DATA_KEYS)
    if unknown:
        raise ConfigError(f"{origin}: unknown key(s): {', '.join(unknown)}")
    try:
        mk = MarkovConfig(**{k: doc[k] for k in MARKOV_KEYS if k in doc})
        tk = {k: doc[k] for k in TRAIN_KEYS if k in doc}
        if "split" in tk:
            tk["split"] = tuple(float(r) for r in tk["split"])
        train = TrainConfig(markov=mk, **tk)
        pre = PreprocessConfig(
            **{k: doc[k] for k in ("onehot_max_cardinality", "fill_malformed") if k in doc}
        )
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{origin}: {exc}") from exc
    dataset = doc.get("dataset", "generic")
    if dataset not in SCHEMA_PRESETS:
        raise ConfigError(f"{origin}: dataset must be one of {sorted(SCHEMA_PRESETS)}, got {dataset!r}")
    return RunConfig(
        train=train,
        data=doc.get("data"),
        dataset=dataset,
        max_records=doc.get("max_records"),
        min_per_class=doc.get("min_per_class", 30),
        preprocess=pre,
        schema=dict(schema),
    )


def load_config(path: str | Path | None) -> RunConfig:
    if path is None:
        return RunConfig()
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    try:
        doc = tomllib.loads(path.read_text())
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    cfg = parse_config(doc, str(path))
    if cfg.data and not Path(cfg.data).is_absolute():
        cfg.data = str((path.parent / cfg.data).resolve())
    return cfg
