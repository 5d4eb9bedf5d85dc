"""Query-biased sentence selection: score a document's sentences against a
query and extract a fixed-size summary.

Three strategies: Okapi-weighted term matching at the sentence level,
cosine similarity of averaged word embeddings, and uniform sampling.
Summaries keep the selected sentences in their original document order.
"""

from __future__ import annotations

import logging
import math
from collections import Counter
from dataclasses import dataclass

import numpy as np

from .corpus import Document, EmbeddingTable, Query, Sentence
from .errors import ConfigError, ValidationError

logger = logging.getLogger(__name__)

STRATEGIES = ("term_matching", "embedding", "sampling")

AUG_SUFFIX = "#aug"


@dataclass
class SelectorConfig:
    strategy: str = "term_matching"
    summary_size: int = 20
    bm25_k1: float = 1.2
    bm25_b: float = 0.75
    seed: int = 0

    def __post_init__(self) -> None:
        if self.strategy not in STRATEGIES:
            raise ConfigError(f"unknown selector strategy {self.strategy!r}")
        if self.summary_size < 1:
            raise ConfigError("summary_size must be >= 1")
        if self.bm25_k1 < 0:
            raise ConfigError("bm25_k1 must be >= 0")
        if not 0.0 <= self.bm25_b <= 1.0:
            raise ConfigError("bm25_b must be in [0, 1]")


class IdfTable:
    """Corpus-level inverse document frequencies plus the average sentence
    length used for length normalization. Immutable once built."""

    def __init__(self, idf: dict[str, float], n_docs: int,
                 avg_sentence_len: float):
        self._idf = idf
        self.n_docs = n_docs
        self.avg_sentence_len = avg_sentence_len

    def idf(self, token: str) -> float:
        got = self._idf.get(token)
        if got is not None:
            return got
        # df = 0 for unseen tokens
        return math.log((self.n_docs + 0.5) / 0.5 + 1.0)

    def __len__(self) -> int:
        return len(self._idf)


def build_idf(corpus: dict[str, Document]) -> IdfTable:
    """Compute idf = ln((N - df + 0.5)/(df + 0.5) + 1) over the corpus.

    The +1 inside the log keeps every idf strictly positive.
    """
    if not corpus:
        raise ValidationError("cannot build idf table over an empty corpus")
    n_docs = len(corpus)
    df: Counter[str] = Counter()
    total_sent_len = 0
    total_sentences = 0
    for doc in corpus.values():
        seen: set[str] = set()
        for sent in doc.sentences:
            total_sent_len += len(sent.tokens)
            total_sentences += 1
            seen.update(sent.tokens)
        df.update(seen)
    idf = {t: math.log((n_docs - d + 0.5) / (d + 0.5) + 1.0)
           for t, d in df.items()}
    avg_len = total_sent_len / total_sentences if total_sentences else 1.0
    return IdfTable(idf=idf, n_docs=n_docs, avg_sentence_len=avg_len)


@dataclass
class SentenceScores:
    """Per-sentence relevance scores and the induced distribution.

    ``scores`` holds the raw ranking scores; ``normalized`` is a probability
    view (uniform when every normalization weight is zero).
    """

    doc_id: str
    scores: list[tuple[int, float]]
    normalized: list[tuple[int, float]]

    @classmethod
    def from_raw(cls, doc_id: str, raw: list[float],
                 norm_base: list[float] | None = None) -> "SentenceScores":
        base = raw if norm_base is None else norm_base
        total = float(sum(base))
        n = len(raw)
        if n == 0:
            return cls(doc_id, [], [])
        if total > 0:
            normalized = [(i, b / total) for i, b in enumerate(base)]
        else:
            normalized = [(i, 1.0 / n) for i in range(n)]
        return cls(doc_id, [(i, s) for i, s in enumerate(raw)], normalized)


def bm25_term_weight(tf: float, idf_value: float, sentence_len: int,
                     avg_len: float, k1: float, b: float) -> float:
    """Okapi contribution of one term occurrence count within a sentence."""
    if tf <= 0:
        return 0.0
    denom = tf + k1 * (1.0 - b + b * sentence_len / avg_len)
    return idf_value * tf * (k1 + 1.0) / denom


def score_term_matching(query: Query, doc: Document, idf: IdfTable,
                        cfg: SelectorConfig) -> SentenceScores:
    """Score each sentence with the Okapi formula against the query tokens.

    Length normalization uses the corpus-wide average sentence length
    carried by the idf table.
    """
    avg_len = idf.avg_sentence_len if idf.avg_sentence_len > 0 else 1.0
    raw = []
    for sent in doc.sentences:
        tf = Counter(sent.tokens)
        score = 0.0
        for tok in query.tokens:
            score += bm25_term_weight(tf.get(tok, 0), idf.idf(tok),
                                      len(sent.tokens), avg_len,
                                      cfg.bm25_k1, cfg.bm25_b)
        raw.append(score)
    return SentenceScores.from_raw(doc.doc_id, raw)


def _mean_embedding(tokens: list[str], emb: EmbeddingTable) -> np.ndarray | None:
    vecs = [emb.get(t) for t in tokens]
    vecs = [v for v in vecs if v is not None]
    if not vecs:
        return None
    return np.mean(vecs, axis=0)


def score_embedding(query: Query, doc: Document,
                    emb: EmbeddingTable) -> SentenceScores:
    """Cosine similarity between averaged query and sentence embeddings.

    Raw scores are cosines in [-1, 1] (0 when either side has no
    in-vocabulary token); the probability view maps computable cosines
    through (x + 1) / 2 so ranking by raw score is unchanged.
    """
    qvec = _mean_embedding(query.tokens, emb)
    raw: list[float] = []
    mapped: list[float] = []
    for sent in doc.sentences:
        svec = None if qvec is None else _mean_embedding(sent.tokens, emb)
        if qvec is None or svec is None:
            raw.append(0.0)
            mapped.append(0.0)
            continue
        qn = float(np.linalg.norm(qvec))
        sn = float(np.linalg.norm(svec))
        if qn == 0.0 or sn == 0.0:
            raw.append(0.0)
            mapped.append(0.0)
            continue
        cos = float(np.dot(qvec, svec) / (qn * sn))
        cos = max(-1.0, min(1.0, cos))
        raw.append(cos)
        mapped.append((cos + 1.0) / 2.0)
    return SentenceScores.from_raw(doc.doc_id, raw, norm_base=mapped)


def _emit_summary(doc: Document, picked: list[int]) -> Document:
    picked = sorted(picked)
    sentences = []
    texts = []
    for new_idx, orig_idx in enumerate(picked):
        src = doc.sentences[orig_idx]
        sentences.append(Sentence(index=new_idx, text=src.text,
                                  tokens=list(src.tokens)))
        texts.append(src.text)
    return Document(doc_id=doc.doc_id + AUG_SUFFIX, text=" ".join(texts),
                    sentences=sentences)


def select_summary(scores: SentenceScores, doc: Document,
                   cfg: SelectorConfig) -> Document:
    """Keep the min(summary_size, |doc|) highest-scoring sentences in their
    original order; ties go to the smaller sentence index."""
    if not doc.sentences:
        logger.warning("select_summary: document %s is empty", doc.doc_id)
        return Document(doc.doc_id + AUG_SUFFIX, "", [])
    if len(scores.scores) != len(doc.sentences):
        raise ValidationError(
            f"scores for {scores.doc_id} do not match document {doc.doc_id}")
    k = min(cfg.summary_size, len(doc.sentences))
    order = sorted(scores.scores, key=lambda pair: (-pair[1], pair[0]))
    picked = [idx for idx, _ in order[:k]]
    return _emit_summary(doc, picked)


def select_sampling(doc: Document, cfg: SelectorConfig,
                    rng: np.random.Generator) -> Document:
    """Uniformly sample min(summary_size, |doc|) sentences without
    replacement, re-emitted in original order."""
    if not doc.sentences:
        logger.warning("select_sampling: document %s is empty", doc.doc_id)
        return Document(doc.doc_id + AUG_SUFFIX, "", [])
    k = min(cfg.summary_size, len(doc.sentences))
    picked = rng.choice(len(doc.sentences), size=k, replace=False)
    return _emit_summary(doc, [int(i) for i in picked])


class SentenceSelector:
    """Strategy dispatcher bundling the resources each strategy needs."""

    def __init__(self, cfg: SelectorConfig, idf: IdfTable | None = None,
                 embeddings: EmbeddingTable | None = None):
        if cfg.strategy == "term_matching" and idf is None:
            raise ConfigError("term_matching selector requires an idf table")
        if cfg.strategy == "embedding" and embeddings is None:
            raise ConfigError("embedding selector requires an embedding table")
        self.cfg = cfg
        self.idf = idf
        self.embeddings = embeddings

    def summarize(self, query: Query, doc: Document,
                  rng: np.random.Generator) -> Document:
        if self.cfg.strategy == "sampling":
            return select_sampling(doc, self.cfg, rng)
        if self.cfg.strategy == "term_matching":
            scores = score_term_matching(query, doc, self.idf, self.cfg)
        else:
            scores = score_embedding(query, doc, self.embeddings)
        return select_summary(scores, doc, self.cfg)
