"""Batch-level training-data augmentation: every triple is followed by a
derived triple whose positive is a query-biased summary of the original
positive and whose negative is a random irrelevant corpus document.

A batch of n triples therefore becomes 2n triples minus skips: a triple
with an empty positive drops the whole pair, a triple with an empty
negative pool keeps only the original.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .batching import TrainingTriple
from .corpus import Document, Qrels, Query
from .errors import ValidationError
from .selector import SentenceSelector

logger = logging.getLogger(__name__)

# Incremented on every augment_batch call; evaluation paths must leave it
# untouched (training-only augmentation).
AUGMENT_BATCH_CALLS = 0


class NegativePool:
    """Candidate irrelevant documents per query: the whole corpus minus the
    docs judged relevant (grade >= 1) for that query."""

    def __init__(self, corpus: dict[str, Document], qrels: Qrels):
        self._all_ids = list(corpus.keys())
        self._qrels = qrels
        self._cache: dict[str, list[str]] = {}

    def candidates(self, query_id: str) -> list[str]:
        got = self._cache.get(query_id)
        if got is None:
            relevant = set(self._qrels.relevant_docs(query_id))
            got = [d for d in self._all_ids if d not in relevant]
            self._cache[query_id] = got
        return got


def sample_negative(query: Query, pool: NegativePool,
                    rng: np.random.Generator) -> str:
    """Uniform draw from the query's irrelevant pool."""
    candidates = pool.candidates(query.query_id)
    if not candidates:
        raise ValidationError(
            f"query {query.query_id}: empty negative pool; skip augmentation "
            "for this triple")
    return candidates[int(rng.integers(0, len(candidates)))]


def augment_positive(query: Query, d_pos: Document,
                     selector: SentenceSelector,
                     rng: np.random.Generator) -> Document:
    """Summary of the positive document under the configured strategy."""
    return selector.summarize(query, d_pos, rng)


@dataclass
class AugmentedBatch:
    triples: list[TrainingTriple]
    # materialized summary documents, keyed by their (unique) doc_id
    documents: dict[str, Document] = field(default_factory=dict)
    skipped: int = 0


def _unique_doc_id(doc: Document, existing: dict[str, Document]) -> str:
    doc_id = doc.doc_id
    n = 2
    while doc_id in existing:
        doc_id = f"{doc.doc_id}{n}"
        n += 1
    return doc_id


def augment_batch(batch: list[TrainingTriple], *,
                  corpus: dict[str, Document],
                  queries: dict[str, Query],
                  pool: NegativePool,
                  selector: SentenceSelector,
                  rng: np.random.Generator) -> AugmentedBatch:
    """Interleave each original triple with its augmented counterpart."""
    global AUGMENT_BATCH_CALLS
    AUGMENT_BATCH_CALLS += 1
    out = AugmentedBatch(triples=[])
    for triple in batch:
        query = queries.get(triple.query_id)
        if query is None:
            raise ValidationError(
                f"triple ({triple.query_id}, {triple.positive_doc_id}, "
                f"{triple.negative_doc_id}): unknown query")
        d_pos = corpus.get(triple.positive_doc_id)
        if d_pos is None:
            raise ValidationError(
                f"triple ({triple.query_id}, {triple.positive_doc_id}, "
                f"{triple.negative_doc_id}): positive not in corpus")
        if not d_pos.sentences:
            logger.warning("skipping pair for empty positive %s",
                           triple.positive_doc_id)
            out.skipped += 2
            continue
        out.triples.append(triple)
        summary = augment_positive(query, d_pos, selector, rng)
        try:
            neg_id = sample_negative(query, pool, rng)
        except ValidationError as exc:
            logger.warning("%s", exc)
            out.skipped += 1
            continue
        unique_id = _unique_doc_id(summary, out.documents)
        if unique_id != summary.doc_id:
            summary = Document(unique_id, summary.text, summary.sentences)
        out.documents[unique_id] = summary
        out.triples.append(TrainingTriple(
            query_id=triple.query_id,
            positive_doc_id=unique_id,
            negative_doc_id=neg_id,
            augmented=True))
    return out
