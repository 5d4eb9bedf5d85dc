"""Command-line pipeline: validate data, emit augmented training sets,
train, grid-search, re-rank, evaluate, compare systems, and generate the
synthetic benchmark corpus.

Configuration comes from a single JSON file (--config); command-line flags
override file values. Diagnostics go to stderr; data goes to files or
stdout. Every subcommand is deterministic for fixed inputs and seeds.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace

import numpy as np

from . import synth
from .augment import NegativePool, augment_batch
from .batching import (build_training_set, make_batches, subsample,
                       write_triples_tsv)
from .corpus import (load_corpus, load_embeddings, load_qrels, load_queries,
                     load_run, write_run)
from .encoder import EncoderConfig, load_checkpoint, save_checkpoint
from .errors import ConfigError, RanksclError, ValidationError
from .evaluation import (compute_metrics, paired_test, read_per_query_csv,
                         rerank, write_per_query_csv)
from .losses import LossConfig
from .selector import SelectorConfig, SentenceSelector, build_idf
from .trainer import TrainConfig, TrainData, train

logger = logging.getLogger("rankscl")


@dataclass
class DataPaths:
    corpus: str
    qrels: str
    queries_train: str | None = None
    run_train: str | None = None
    queries_val: str | None = None
    run_val: str | None = None
    queries_test: str | None = None
    run_test: str | None = None
    embeddings: str | None = None
    top_k: int = 100


@dataclass
class PipelineConfig:
    data: DataPaths
    train: TrainConfig
    n_instances: int | None
    grid_temperatures: list[float]
    grid_scl_weights: list[float]
    output: str


def _dataclass_from(cls, payload: dict, where: str):
    try:
        return cls(**payload)
    except TypeError as exc:
        raise ConfigError(f"bad {where} section: {exc}") from exc


def load_pipeline_config(path: str) -> PipelineConfig:
    with open(path, encoding="utf-8") as f:
        raw = json.load(f)
    data = _dataclass_from(DataPaths, raw.get("data", {}), "data")
    train_raw = dict(raw.get("train", {}))
    n_instances = train_raw.pop("n_instances", None)
    loss = _dataclass_from(LossConfig, train_raw.pop("loss", {}), "loss")
    enc = _dataclass_from(EncoderConfig, train_raw.pop("encoder", {}),
                          "encoder")
    sel = _dataclass_from(SelectorConfig, train_raw.pop("selector", {}),
                          "selector")
    cfg = _dataclass_from(
        TrainConfig, {**train_raw, "loss": loss, "encoder": enc,
                      "selector": sel}, "train")
    grid = raw.get("grid", {})
    return PipelineConfig(
        data=data,
        train=cfg,
        n_instances=n_instances,
        grid_temperatures=list(grid.get("temperatures", [0.4, 1.0])),
        grid_scl_weights=list(grid.get("scl_weights", [0.0, 0.8])),
        output=raw.get("output", "out"))


def _apply_overrides(cfg: PipelineConfig, args) -> PipelineConfig:
    if getattr(args, "seed", None) is not None:
        cfg.train = replace(
            cfg.train, seed=args.seed,
            encoder=replace(cfg.train.encoder, init_seed=args.seed),
            selector=replace(cfg.train.selector, seed=args.seed))
    if getattr(args, "output", None):
        cfg.output = args.output
    return cfg


def _require(cfg: PipelineConfig, *fields: str) -> None:
    for name in fields:
        if getattr(cfg.data, name) is None:
            raise ConfigError(f"config data.{name} is required here")


def _check_exists(*paths: str | None) -> None:
    for p in paths:
        if p is not None and not os.path.exists(p):
            raise ConfigError(f"missing input file: {p}")


def _load_common(cfg: PipelineConfig):
    _require(cfg, "corpus", "qrels")
    _check_exists(cfg.data.corpus, cfg.data.qrels)
    corpus = load_corpus(cfg.data.corpus)
    qrels = load_qrels(cfg.data.qrels)
    return corpus, qrels


def _split_paths(cfg: PipelineConfig, split: str) -> tuple[str, str]:
    qpath = getattr(cfg.data, f"queries_{split}")
    rpath = getattr(cfg.data, f"run_{split}")
    if qpath is None or rpath is None:
        raise ConfigError(f"config lacks queries_{split}/run_{split}")
    _check_exists(qpath, rpath)
    return qpath, rpath


def _out_path(cfg: PipelineConfig, name: str) -> str:
    os.makedirs(cfg.output, exist_ok=True)
    return os.path.join(cfg.output, name)


def cmd_validate(cfg: PipelineConfig, args) -> int:
    corpus, qrels = _load_common(cfg)
    queries = {}
    runs = {}
    for split in ("train", "val", "test"):
        qpath = getattr(cfg.data, f"queries_{split}")
        rpath = getattr(cfg.data, f"run_{split}")
        if qpath:
            _check_exists(qpath)
            queries.update(load_queries(qpath))
        if rpath:
            _check_exists(rpath)
            runs.update(load_run(rpath, top_k=cfg.data.top_k))
    problems = []
    for qid, run in runs.items():
        if qid not in queries:
            problems.append(f"run query {qid} has no query text")
        for did in run.doc_ids():
            if did not in corpus:
                problems.append(f"run doc {did} (query {qid}) not in corpus")
    for qid in qrels.query_ids():
        if queries and qid not in queries:
            problems.append(f"qrels query {qid} has no query text")
    print(f"documents: {len(corpus)}")
    print(f"queries: {len(queries)}")
    print(f"judged pairs: {qrels.num_judged()}")
    print(f"run lists: {len(runs)}")
    if problems:
        for p in problems:
            print(f"error: {p}", file=sys.stderr)
        return 1
    return 0


def cmd_augment(cfg: PipelineConfig, args) -> int:
    corpus, qrels = _load_common(cfg)
    qpath, rpath = _split_paths(cfg, "train")
    queries = load_queries(qpath)
    runs = load_run(rpath, top_k=cfg.data.top_k)
    embeddings = None
    if cfg.train.selector.strategy == "embedding":
        if cfg.data.embeddings is None:
            raise ConfigError("embedding selector requires data.embeddings")
        _check_exists(cfg.data.embeddings)
        embeddings = load_embeddings(cfg.data.embeddings)
    idf = build_idf(corpus) if cfg.train.selector.strategy == "term_matching" \
        else None
    selector = SentenceSelector(cfg.train.selector, idf=idf,
                                embeddings=embeddings)
    pool = NegativePool(corpus, qrels)
    ts = build_training_set(runs, qrels, cfg.data.top_k, cfg.train.seed,
                            corpus=corpus)
    if cfg.n_instances is not None:
        ts = subsample(ts, cfg.n_instances)
    rng = np.random.default_rng(cfg.train.seed)
    all_triples = []
    skipped = 0
    summary_lengths = []
    for batch in make_batches(ts, cfg.train.batch_size):
        result = augment_batch(batch, corpus=corpus, queries=queries,
                               pool=pool, selector=selector, rng=rng)
        all_triples.extend(result.triples)
        skipped += result.skipped
        summary_lengths.extend(len(d.sentences)
                               for d in result.documents.values())
    triples_path = _out_path(cfg, "triples.tsv")
    write_triples_tsv(triples_path, all_triples)
    stats = {
        "input_triples": len(ts.triples),
        "output_triples": len(all_triples),
        "skipped": skipped,
        "mean_summary_sentences": (float(np.mean(summary_lengths))
                                   if summary_lengths else 0.0),
    }
    stats_path = _out_path(cfg, "augment_stats.json")
    with open(stats_path, "w", encoding="utf-8") as f:
        json.dump(stats, f, sort_keys=True, indent=2)
        f.write("\n")
    print(triples_path)
    return 0


def _prepare_train(cfg: PipelineConfig):
    corpus, qrels = _load_common(cfg)
    tq_path, tr_path = _split_paths(cfg, "train")
    vq_path, vr_path = _split_paths(cfg, "val")
    queries = load_queries(tq_path)
    queries.update(load_queries(vq_path))
    train_runs = load_run(tr_path, top_k=cfg.data.top_k)
    val_runs = load_run(vr_path, top_k=cfg.data.top_k)
    embeddings = None
    if cfg.data.embeddings is not None:
        _check_exists(cfg.data.embeddings)
        embeddings = load_embeddings(cfg.data.embeddings)
    ts = build_training_set(train_runs, qrels, cfg.data.top_k,
                            cfg.train.seed, corpus=corpus)
    if cfg.n_instances is not None:
        ts = subsample(ts, cfg.n_instances)
    data = TrainData(queries=queries, corpus=corpus, qrels=qrels,
                     val_runs=val_runs, embeddings=embeddings)
    return data, ts


def cmd_train(cfg: PipelineConfig, args) -> int:
    data, ts = _prepare_train(cfg)
    params, report = train(data, ts, cfg.train)
    ckpt_path = _out_path(cfg, "checkpoint.bin")
    save_checkpoint(ckpt_path, params, cfg.train.encoder)
    report_path = _out_path(cfg, "report.json")
    with open(report_path, "w", encoding="utf-8") as f:
        f.write(report.to_json())
        f.write("\n")
    logger.info("trained in %.1fs; best epoch %d",
                report.wall_clock_seconds, report.best_epoch)
    print(ckpt_path)
    return 0


def cmd_grid(cfg: PipelineConfig, args) -> int:
    data, ts = _prepare_train(cfg)
    jobs = max(1, getattr(args, "jobs", 1) or 1)
    cells_spec = [(lam, tau) for lam in cfg.grid_scl_weights
                  for tau in cfg.grid_temperatures]

    def run_cell(cell):
        lam, tau = cell
        cell_cfg = replace(cfg.train,
                           loss=replace(cfg.train.loss, temperature=tau,
                                        scl_weight=lam))
        _, report = train(data, ts, cell_cfg)
        return {"temperature": tau, "scl_weight": lam,
                "metric": report.val_metrics[report.best_epoch],
                "best_epoch": report.best_epoch}

    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            cells = list(pool.map(run_cell, cells_spec))
    else:
        cells = [run_cell(c) for c in cells_spec]
    best = sorted(cells, key=lambda c: (-c["metric"], c["scl_weight"],
                                        c["temperature"]))[0]
    payload = {"best": best, "cells": cells,
               "validation_metric": cfg.train.validation_metric}
    grid_path = _out_path(cfg, "grid.json")
    with open(grid_path, "w", encoding="utf-8") as f:
        json.dump(payload, f, sort_keys=True, indent=2)
        f.write("\n")
    print(json.dumps(best, sort_keys=True))
    return 0


def cmd_rerank(cfg: PipelineConfig, args) -> int:
    corpus, _qrels = _load_common(cfg)
    qpath, rpath = _split_paths(cfg, args.split)
    queries = load_queries(qpath)
    runs = load_run(rpath, top_k=cfg.data.top_k)
    ckpt = args.checkpoint or _out_path(cfg, "checkpoint.bin")
    _check_exists(ckpt)
    params, enc_cfg = load_checkpoint(ckpt)
    reranked = rerank(params, runs, corpus, queries, enc_cfg)
    out = _out_path(cfg, f"reranked_{args.split}.txt")
    write_run(out, reranked, tag=args.system)
    print(out)
    return 0


def cmd_eval(cfg: PipelineConfig, args) -> int:
    _corpus, qrels = _load_common(cfg)
    if args.run:
        run_path = args.run
    else:
        _q, run_path = _split_paths(cfg, args.split)
    _check_exists(run_path)
    runs = load_run(run_path)
    report = compute_metrics(runs, qrels, system=args.system,
                             gain=args.gain)
    metrics_path = _out_path(cfg, f"metrics_{args.system}.json")
    with open(metrics_path, "w", encoding="utf-8") as f:
        f.write(report.to_json())
        f.write("\n")
    csv_path = _out_path(cfg, f"per_query_{args.system}.csv")
    write_per_query_csv(csv_path, report)
    print(report.format_table())
    return 0


def cmd_compare(args) -> int:
    _check_exists(args.csv_a, args.csv_b)
    a = read_per_query_csv(args.csv_a, metric=args.metric)
    b = read_per_query_csv(args.csv_b, metric=args.metric)
    result = paired_test(a, b)
    payload = {
        "metric": args.metric,
        "n": result.n,
        "mean_difference": result.mean_difference,
        "t_statistic": result.t_statistic,
        "p_value": result.p_value,
        "significant_at_0.05": result.significant_05,
        "significant_at_0.10": result.significant_10,
        "degenerate": result.degenerate,
    }
    print(json.dumps(payload, sort_keys=True, indent=2))
    return 0


def cmd_synth(args) -> int:
    out_dir = args.output or "synth_data"
    cfg = synth.SynthConfig(
        n_train_queries=args.train_queries,
        n_val_queries=args.val_queries,
        n_test_queries=args.test_queries,
        corpus_size=args.corpus_size,
        seed=args.seed if args.seed is not None else 0,
        top_k=args.top_k)
    paths = synth.generate(out_dir, cfg)
    print(paths.config)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="rankscl",
        description="Contrastive re-ranking pipeline")
    parser.add_argument("--config", help="pipeline JSON config")
    parser.add_argument("--seed", type=int, help="override training seed")
    parser.add_argument("--jobs", type=int, default=1,
                        help="worker pool size for grid cells")
    parser.add_argument("--output", help="override output directory")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    sub.add_parser("validate", help="cross-check data referential integrity")
    sub.add_parser("augment", help="write the augmented training triples")
    sub.add_parser("train", help="train a model and write a checkpoint")
    sub.add_parser("grid", help="grid-search temperature and interpolation")

    p_rerank = sub.add_parser("rerank", help="re-rank a first-stage run")
    p_rerank.add_argument("--split", choices=("train", "val", "test"),
                          default="test")
    p_rerank.add_argument("--checkpoint", help="model checkpoint path")
    p_rerank.add_argument("--system", default="rankscl")

    p_eval = sub.add_parser("eval", help="compute AP/RR/nDCG@10 for a run")
    p_eval.add_argument("--split", choices=("train", "val", "test"),
                        default="test")
    p_eval.add_argument("--run", help="evaluate this run file instead")
    p_eval.add_argument("--system", default="run")
    p_eval.add_argument("--gain", choices=("exp", "linear"), default="exp")

    p_cmp = sub.add_parser("compare",
                           help="paired significance test of two systems")
    p_cmp.add_argument("csv_a")
    p_cmp.add_argument("csv_b")
    p_cmp.add_argument("--metric", default="ndcg10",
                       choices=("map", "rr", "ndcg10"))

    p_synth = sub.add_parser("synth", help="generate the synthetic dataset")
    p_synth.add_argument("--train-queries", type=int, default=200)
    p_synth.add_argument("--val-queries", type=int, default=50)
    p_synth.add_argument("--test-queries", type=int, default=50)
    p_synth.add_argument("--corpus-size", type=int, default=5000)
    p_synth.add_argument("--top-k", type=int, default=50)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        stream=sys.stderr,
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "synth":
            return cmd_synth(args)
        if args.command == "compare":
            return cmd_compare(args)
        if not args.config:
            raise ConfigError(f"--config is required for {args.command}")
        _check_exists(args.config)
        cfg = _apply_overrides(load_pipeline_config(args.config), args)
        handler = {
            "validate": cmd_validate,
            "augment": cmd_augment,
            "train": cmd_train,
            "grid": cmd_grid,
            "rerank": cmd_rerank,
            "eval": cmd_eval,
        }[args.command]
        return handler(cfg, args)
    except (RanksclError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
