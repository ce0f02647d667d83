"""Command-line entry point.

Subcommands mirror the pipeline stages; each reads the previous stage's files
and writes its own into the output directory (``--out``, else
``$MARKOVGCN_OUT``, else ``./runs``).
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import time
from dataclasses import replace
from pathlib import Path

from . import graphbuild, markov, textio
from .config import ConfigError, RunConfig, load_config
from .ingest import (
    FeatureMatrix,
    IngestError,
    LabelVector,
    load_features,
    load_flow_csv,
    preprocess,
    save_features,
    stratified_subsample,
    synth_dataset,
    write_flow_csv,
)
from .metrics import emit_report, evaluate, format_table
from .model import ModelParams, Prepared, TrainConfig, TrainingError, gcn_forward, prepare, train

OUT_ENV = "MARKOVGCN_OUT"
log = logging.getLogger("markovgcn")

GRAPH_NOTE = (
    "nodes are flow records; each record is joined to its k most cosine-similar records "
    "(union-symmetrised, unit self-loops)"
)


def _out_dir(args) -> Path:
    out = Path(getattr(args, "out", None) or os.environ.get(OUT_ENV) or "runs")
    out.mkdir(parents=True, exist_ok=True)
    return out


def _run_config(args) -> RunConfig:
    cfg = load_config(getattr(args, "config", None))
    return cfg.with_overrides(seed=getattr(args, "seed", None), mode=getattr(args, "mode", None))


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _ingest(csv_path: str | None, cfg: RunConfig) -> tuple[FeatureMatrix, LabelVector, dict]:
    path = csv_path or cfg.data
    if not path:
        raise IngestError("no input CSV: pass --csv or set 'data' in the config")
    table = load_flow_csv(path, cfg.full_schema())
    n_raw = table.n_rows
    if cfg.max_records:
        table = stratified_subsample(table, cfg.max_records, cfg.train.seed, cfg.min_per_class)
    x, y = preprocess(table, cfg.preprocess)
    meta = {
        "feature_names": x.feature_names,
        "class_names": y.class_names,
        "dropped_columns": x.dropped,
        "malformed_cells": table.malformed,
        "records_read": n_raw,
        "records_used": table.n_rows,
    }
    return x, y, meta


def _load_feature_files(path: str) -> tuple[FeatureMatrix, LabelVector, dict]:
    meta_path = Path(path).with_name("meta.json")
    meta = json.loads(meta_path.read_text()) if meta_path.is_file() else {}
    x, y = load_features(path, meta.get("feature_names"), meta.get("class_names"))
    return x, y, meta


def _train_and_report(x, y, meta: dict, cfg: TrainConfig, out: Path, prepared: Prepared | None = None) -> dict:
    start = time.perf_counter()
    params, hist, prep = train(x, y, cfg, prepared)
    trace = gcn_forward(prep.propagation, x, params)
    report = evaluate(trace.logp, y, prep.masks.test, config=cfg.to_dict())
    report.notes.update(
        {
            "graph": GRAPH_NOTE,
            "dropped_columns": meta.get("dropped_columns", {}),
            "best_epoch": hist.best_epoch,
            "n_edges": prep.graph.n_edges,
        }
    )
    report.wall_clock_seconds = time.perf_counter() - start
    tag = cfg.mode
    textio.save_checkpoint(params.named(), cfg.to_dict(), out / f"checkpoint_{tag}.txt", {"class_names": y.class_names})
    _write_json(
        out / f"history_{tag}.json",
        {
            "pretext_loss": hist.pretext_loss,
            "finetune_loss": hist.finetune_loss,
            "val_accuracy": hist.val_accuracy,
            "best_epoch": hist.best_epoch,
        },
    )
    emit_report(report, out / f"report_{tag}")
    print(f"[{tag}] " + format_table(report).splitlines()[0] + f"  weighted F1 {report.weighted['f1']:.4f}")
    return {"accuracy": report.accuracy, "weighted_f1": report.weighted["f1"], "auc_micro": report.auc_micro}


def cmd_synth(args) -> None:
    cfg = _run_config(args)
    table = synth_dataset(args.n_per_class, args.classes, args.features, args.separation, cfg.train.seed)
    path = _out_dir(args) / "synthetic.csv"
    write_flow_csv(table, path)
    print(path)


def cmd_ingest(args) -> None:
    cfg = _run_config(args)
    out = _out_dir(args)
    x, y, meta = _ingest(args.csv, cfg)
    save_features(x, y, out / "features.txt")
    _write_json(out / "meta.json", meta)
    print(f"{x.data.shape[0]} nodes, {x.data.shape[1]} features, {y.n_classes} classes -> {out / 'features.txt'}")


def cmd_build_graph(args) -> None:
    cfg = _run_config(args)
    out = _out_dir(args)
    x, _, _ = _load_feature_files(args.features)
    g = graphbuild.add_self_loops(graphbuild.knn_graph(x.data, cfg.train.k_neighbors, cfg.train.seed))
    textio.save_graph(g, out / "graph.txt")
    print(f"{g.n_nodes} nodes, {g.n_edges} directed edges -> {out / 'graph.txt'}")


def cmd_markov(args) -> None:
    cfg = _run_config(args)
    out = _out_dir(args)
    stack = markov.markov_process_agg(textio.load_graph(args.graph), cfg.train.markov)
    textio.save_stack(stack, out / "stack.txt")
    sizes = ", ".join(str(layer.n_edges) for layer in stack.layers)
    print(f"{len(stack)} layers (nonzeros: {sizes}) -> {out / 'stack.txt'}")


def cmd_train(args) -> None:
    cfg = _run_config(args)
    x, y, meta = _load_feature_files(args.features)
    _train_and_report(x, y, meta, cfg.train, _out_dir(args))


def cmd_eval(args) -> None:
    named, config, ck_meta = textio.load_checkpoint(args.checkpoint)
    train_cfg = TrainConfig.from_dict(config)
    x, y, meta = _load_feature_files(args.features)
    if ck_meta.get("class_names"):
        y = LabelVector(y.labels, ck_meta["class_names"])
    params = ModelParams.from_named(named)
    prep = prepare(x, y, train_cfg)
    report = evaluate(gcn_forward(prep.propagation, x, params).logp, y, prep.masks.test, config=config)
    report.notes.update({"graph": GRAPH_NOTE, "dropped_columns": meta.get("dropped_columns", {})})
    out = _out_dir(args)
    emit_report(report, out / "eval_report")
    sys.stdout.write(format_table(report))


def cmd_pipeline(args) -> None:
    cfg = _run_config(args)
    out = _out_dir(args)
    x, y, meta = _ingest(args.csv, cfg)
    save_features(x, y, out / "features.txt")
    _write_json(out / "meta.json", meta)
    prep = prepare(x, y, cfg.train)
    textio.save_graph(prep.graph, out / "graph.txt")
    textio.save_stack(prep.stack, out / "stack.txt")
    modes = ["scratch", "ssl"] if args.ablation else [cfg.train.mode]
    summary = {}
    for mode in modes:
        summary[mode] = _train_and_report(x, y, meta, replace(cfg.train, mode=mode), out, prep)
    _write_json(out / "summary.json", summary)


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", default=argparse.SUPPRESS, help="TOML run configuration")
    common.add_argument("--seed", type=int, default=argparse.SUPPRESS, help="override the config seed")
    common.add_argument("--out", default=argparse.SUPPRESS, help=f"output directory (default ${OUT_ENV} or ./runs)")
    common.add_argument("-v", "--verbose", action="store_true", default=argparse.SUPPRESS)

    parser = argparse.ArgumentParser(prog="markovgcn", parents=[common], description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", parents=[common], help="write a synthetic Gaussian-blob flow CSV")
    p.add_argument("--n-per-class", type=int, default=100)
    p.add_argument("--classes", type=int, default=3)
    p.add_argument("--features", type=int, default=8)
    p.add_argument("--separation", type=float, default=6.0)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("ingest", parents=[common], help="CSV -> features.txt + meta.json")
    p.add_argument("--csv", help="flow CSV (default: 'data' from the config)")
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("build-graph", parents=[common], help="features.txt -> graph.txt")
    p.add_argument("--features", required=True)
    p.set_defaults(func=cmd_build_graph)

    p = sub.add_parser("markov", parents=[common], help="graph.txt -> stack.txt")
    p.add_argument("--graph", required=True)
    p.set_defaults(func=cmd_markov)

    p = sub.add_parser("train", parents=[common], help="train on features.txt and report on the test split")
    p.add_argument("--features", required=True)
    p.add_argument("--mode", choices=("ssl", "scratch"))
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", parents=[common], help="evaluate a checkpoint on the test split")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--features", required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("pipeline", parents=[common], help="ingest, graph, Markov stack, train, report")
    p.add_argument("--csv", help="flow CSV (default: 'data' from the config)")
    p.add_argument("--mode", choices=("ssl", "scratch"))
    p.add_argument("--ablation", action="store_true", help="train both scratch and ssl on the same split")
    p.set_defaults(func=cmd_pipeline)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(
        level=logging.INFO if getattr(args, "verbose", False) else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        args.func(args)
    except (ConfigError, IngestError, TrainingError, ValueError, OSError) as exc:
        print(f"markovgcn {args.command}: error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
