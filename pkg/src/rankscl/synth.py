"""Synthetic ranking dataset with a planted lexical signal.

Each query owns a few signal tokens that appear only in its relevant
documents; distractor documents draw from a shared background vocabulary.
The first-stage run places the relevant documents at noisy ranks inside
the top-k, so re-ranking them to the top is learnable but the input
ordering is poor. Fully deterministic for a given seed.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass

import numpy as np


@dataclass
class SynthConfig:
    n_train_queries: int = 200
    n_val_queries: int = 50
    n_test_queries: int = 50
    corpus_size: int = 5000
    seed: int = 0
    n_relevant: int = 3          # relevant docs per query
    top_k: int = 50              # run depth
    vocab_size: int = 2000       # background vocabulary
    min_sentences: int = 8
    max_sentences: int = 25
    min_sentence_len: int = 6
    max_sentence_len: int = 12
    signal_fraction: float = 0.4  # share of sentences carrying signal tokens

    def __post_init__(self) -> None:
        if min(self.n_train_queries, self.n_val_queries, self.n_test_queries,
               self.corpus_size, self.seed + 1, self.n_relevant,
               self.top_k) < 1:
            raise ValueError("synthetic generator parameters must be positive")
        total_relevant = (self.n_train_queries + self.n_val_queries
                          + self.n_test_queries) * self.n_relevant
        if total_relevant >= self.corpus_size:
            raise ValueError("corpus too small for the requested queries")


@dataclass
class SynthPaths:
    corpus: str
    qrels: str
    queries: dict[str, str]      # split -> path
    runs: dict[str, str]         # split -> path
    config: str


def _background_sentence(rng: np.random.Generator, vocab: list[str],
                         weights: np.ndarray, cfg: SynthConfig) -> list[str]:
    length = int(rng.integers(cfg.min_sentence_len, cfg.max_sentence_len + 1))
    picks = rng.choice(len(vocab), size=length, p=weights)
    return [vocab[i] for i in picks]


def generate(out_dir: str, cfg: SynthConfig) -> SynthPaths:
    """Write the dataset files under ``out_dir`` and return their paths."""
    os.makedirs(out_dir, exist_ok=True)
    rng = np.random.default_rng(cfg.seed)
    vocab = [f"w{i:04d}" for i in range(cfg.vocab_size)]
    # zipf-ish background frequencies
    weights = 1.0 / np.arange(1, cfg.vocab_size + 1)
    weights /= weights.sum()

    splits = [("train", cfg.n_train_queries), ("val", cfg.n_val_queries),
              ("test", cfg.n_test_queries)]
    queries: dict[str, list[tuple[str, str]]] = {}
    query_signals: dict[str, list[str]] = {}
    q_counter = 0
    for split, count in splits:
        rows = []
        for _ in range(count):
            qid = f"q{q_counter:04d}"
            signals = [f"x{q_counter:04d}{c}" for c in ("a", "b", "c")]
            query_signals[qid] = signals
            rows.append((qid, " ".join(signals)))
            q_counter += 1
        queries[split] = rows

    all_qids = [qid for rows in queries.values() for qid, _ in rows]

    # relevant documents first, then background-only distractors
    doc_rows: list[tuple[str, str]] = []
    qrels_rows: list[tuple[str, str, int]] = []
    relevant_ids: dict[str, list[str]] = {}
    doc_counter = 0

    def render(sentences: list[list[str]]) -> str:
        return " ".join(" ".join(tokens) + "." for tokens in sentences)

    for qid in all_qids:
        ids = []
        for j in range(cfg.n_relevant):
            did = f"d{doc_counter:05d}"
            doc_counter += 1
            n_sent = int(rng.integers(cfg.min_sentences,
                                      cfg.max_sentences + 1))
            n_signal = max(1, int(round(cfg.signal_fraction * n_sent)))
            signal_at = set(
                int(i) for i in rng.choice(n_sent, size=n_signal,
                                           replace=False))
            sentences = []
            for s in range(n_sent):
                tokens = _background_sentence(rng, vocab, weights, cfg)
                if s in signal_at:
                    k = int(rng.integers(1, 3))
                    for tok in rng.choice(query_signals[qid], size=k,
                                          replace=False):
                        pos = int(rng.integers(0, len(tokens) + 1))
                        tokens.insert(pos, str(tok))
                sentences.append(tokens)
            doc_rows.append((did, render(sentences)))
            # the first relevant document is highly relevant
            qrels_rows.append((qid, did, 2 if j == 0 else 1))
            ids.append(did)
        relevant_ids[qid] = ids

    distractor_ids = []
    while doc_counter < cfg.corpus_size:
        did = f"d{doc_counter:05d}"
        doc_counter += 1
        n_sent = int(rng.integers(cfg.min_sentences, cfg.max_sentences + 1))
        sentences = [_background_sentence(rng, vocab, weights, cfg)
                     for _ in range(n_sent)]
        doc_rows.append((did, render(sentences)))
        distractor_ids.append(did)

    # noisy first-stage runs: all relevant docs inside the top-k, at
    # uniformly random ranks among background fillers
    run_rows: dict[str, list[tuple[str, list[tuple[str, int, float]]]]] = {}
    for split, rows in queries.items():
        split_runs = []
        for qid, _text in rows:
            rel = relevant_ids[qid]
            n_fill = cfg.top_k - len(rel)
            fill = rng.choice(len(distractor_ids), size=n_fill, replace=False)
            docs = list(rel) + [distractor_ids[i] for i in fill]
            order = rng.permutation(len(docs))
            ranked = [docs[i] for i in order]
            entries = [(did, r + 1, float(cfg.top_k - r))
                       for r, did in enumerate(ranked)]
            split_runs.append((qid, entries))
        run_rows[split] = split_runs

    corpus_path = os.path.join(out_dir, "corpus.jsonl")
    with open(corpus_path, "w", encoding="utf-8") as f:
        for did, text in doc_rows:
            f.write(json.dumps({"doc_id": did, "text": text}) + "\n")

    qrels_path = os.path.join(out_dir, "qrels.txt")
    with open(qrels_path, "w", encoding="utf-8") as f:
        for qid, did, grade in qrels_rows:
            f.write(f"{qid} 0 {did} {grade}\n")

    query_paths = {}
    run_paths = {}
    for split, rows in queries.items():
        qpath = os.path.join(out_dir, f"queries_{split}.tsv")
        with open(qpath, "w", encoding="utf-8") as f:
            for qid, text in rows:
                f.write(f"{qid}\t{text}\n")
        query_paths[split] = qpath
        rpath = os.path.join(out_dir, f"run_{split}.txt")
        with open(rpath, "w", encoding="utf-8") as f:
            for qid, entries in run_rows[split]:
                for did, rank, score in entries:
                    f.write(f"{qid} Q0 {did} {rank} {score:.1f} synth\n")
        run_paths[split] = rpath

    config_path = os.path.join(out_dir, "config.json")
    pipeline_config = {
        "data": {
            "corpus": corpus_path,
            "qrels": qrels_path,
            "queries_train": query_paths["train"],
            "run_train": run_paths["train"],
            "queries_val": query_paths["val"],
            "run_val": run_paths["val"],
            "queries_test": query_paths["test"],
            "run_test": run_paths["test"],
            "embeddings": None,
            "top_k": cfg.top_k,
        },
        "train": {
            "batch_size": 16,
            "epochs": 5,
            "learning_rate": 0.005,
            "seed": cfg.seed,
            "augment": True,
            "validation_metric": "ndcg10",
            "loss": {"base": "pointwise", "temperature": 0.4,
                     "scl_weight": 0.8, "margin": 1.0},
            "encoder": {"hash_dim": 32768, "hidden_dim": 32, "repr_dim": 16,
                        "max_tokens": 256, "normalize_phi": True,
                        "init_seed": cfg.seed, "init_scale": 0.05},
            "selector": {"strategy": "term_matching", "summary_size": 20,
                         "bm25_k1": 1.2, "bm25_b": 0.75, "seed": cfg.seed},
        },
        "grid": {"temperatures": [0.4, 1.0], "scl_weights": [0.0, 0.8]},
        "output": os.path.join(out_dir, "out"),
    }
    with open(config_path, "w", encoding="utf-8") as f:
        json.dump(pipeline_config, f, indent=2, sort_keys=True)
        f.write("\n")

    return SynthPaths(corpus=corpus_path, qrels=qrels_path,
                      queries=query_paths, runs=run_paths,
                      config=config_path)
