"""Training-set construction from first-stage runs and qrels, mini-batch
cutting, and the triple -> pointwise instance conversion.

Every positive (grade >= 1) document in a query's retrieved top-k becomes
one triple; each triple gets exactly one grade-0 negative drawn from the
same top-k (corpus-wide fallback when the top-k has none). The triple list
is shuffled once with the construction seed.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .corpus import Document, Qrels, RunList
from .errors import ValidationError

logger = logging.getLogger(__name__)


@dataclass
class TrainingTriple:
    """(query, positive doc, negative doc) unit of batching and augmentation."""

    query_id: str
    positive_doc_id: str
    negative_doc_id: str
    augmented: bool = False


@dataclass
class PointwiseInstance:
    query_id: str
    doc_id: str
    label: int


@dataclass
class TrainingSet:
    triples: list[TrainingTriple]
    seed: int
    provenance: dict[str, int] = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.triples)


def build_training_set(runs: dict[str, RunList], qrels: Qrels, k: int,
                       seed: int,
                       corpus: dict[str, Document] | None = None,
                       ) -> TrainingSet:
    """Collect one triple per positive pair in the top-k and shuffle.

    ``corpus`` is only consulted for the corpus-wide negative fallback when
    a query has positives but no grade-0 candidate in its top-k.
    """
    if k < 1:
        raise ValidationError("top-k cutoff must be >= 1")
    rng = np.random.default_rng(seed)
    triples: list[TrainingTriple] = []
    provenance: dict[str, int] = {}
    for qid in sorted(runs):
        entries = runs[qid].entries[:k]
        positives = [e.doc_id for e in entries if qrels.grade(qid, e.doc_id) >= 1]
        if not positives:
            continue
        candidates = [e.doc_id for e in entries
                      if qrels.grade(qid, e.doc_id) == 0]
        if not candidates:
            if corpus is None:
                raise ValidationError(
                    f"query {qid}: no grade-0 negatives in top-{k} and no "
                    "corpus given for fallback sampling")
            candidates = [d for d in corpus
                          if qrels.grade(qid, d) == 0]
            if not candidates:
                logger.warning("query %s: no negative candidates anywhere; "
                               "skipping", qid)
                continue
            logger.warning("query %s: no grade-0 docs in top-%d; sampling "
                           "negatives corpus-wide", qid, k)
        for pos in positives:
            neg = candidates[int(rng.integers(0, len(candidates)))]
            triples.append(TrainingTriple(qid, pos, neg))
        provenance[qid] = len(positives)
    rng.shuffle(triples)
    return TrainingSet(triples=triples, seed=seed, provenance=provenance)


def subsample(ts: TrainingSet, n_instances: int,
              seed: int | None = None) -> TrainingSet:
    """Keep the first n_instances/2 triples (half positive, half negative
    pairs). Pass ``seed`` to re-shuffle before taking the prefix."""
    if n_instances % 2 != 0:
        raise ValidationError("n_instances must be even (positive/negative "
                              "pairs come in twos)")
    n_triples = n_instances // 2
    if n_triples > len(ts.triples):
        raise ValidationError(
            f"requested {n_triples} triples but only {len(ts.triples)} "
            "are available")
    triples = list(ts.triples)
    if seed is not None:
        np.random.default_rng(seed).shuffle(triples)
    kept = triples[:n_triples]
    counts: dict[str, int] = {}
    for t in kept:
        counts[t.query_id] = counts.get(t.query_id, 0) + 1
    return TrainingSet(triples=kept, seed=ts.seed if seed is None else seed,
                       provenance=counts)


def make_batches(ts: TrainingSet, batch_size: int) -> list[list[TrainingTriple]]:
    """Cut consecutive slices; a trailing batch of fewer than 2 triples is
    dropped (the contrastive term needs at least one possible pair)."""
    if batch_size < 2:
        raise ValidationError("batch_size must be >= 2")
    batches = []
    for start in range(0, len(ts.triples), batch_size):
        batch = ts.triples[start:start + batch_size]
        if len(batch) >= 2:
            batches.append(batch)
        else:
            logger.warning("dropping trailing batch of %d triple(s)",
                           len(batch))
    return batches


def to_pointwise(batch: list[TrainingTriple]) -> list[PointwiseInstance]:
    """Each triple emits (q, d+, 1) then (q, d-, 0), preserving order."""
    out = []
    for t in batch:
        out.append(PointwiseInstance(t.query_id, t.positive_doc_id, 1))
        out.append(PointwiseInstance(t.query_id, t.negative_doc_id, 0))
    return out


def write_triples_tsv(path: str, triples: list[TrainingTriple]) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for t in triples:
            f.write(f"{t.query_id}\t{t.positive_doc_id}\t"
                    f"{t.negative_doc_id}\t{int(t.augmented)}\n")


def read_triples_tsv(path: str) -> list[TrainingTriple]:
    triples = []
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 4:
                raise ValidationError(
                    f"{path}:{lineno}: expected 4 TSV columns")
            triples.append(TrainingTriple(parts[0], parts[1], parts[2],
                                          bool(int(parts[3]))))
    return triples
