"""Loading and validation of queries, documents, qrels, run files, and
word embeddings, plus the deterministic tokenizer and sentence splitter
every other module builds on.

File formats:
    queries     UTF-8 TSV, ``query_id<TAB>text``
    corpus      UTF-8 JSONL, one object per line with ``doc_id`` and ``text``
    qrels       TREC format, ``qid iter docid grade`` (whitespace separated)
    run         TREC format, ``qid Q0 docid rank score tag``
    embeddings  text, ``token v1 ... vd`` with a consistent dimension d

All returned structures are treated as immutable after loading.
"""

from __future__ import annotations

import json
import logging
import re
from dataclasses import dataclass, field

import numpy as np

from .errors import ParseError, ValidationError

logger = logging.getLogger(__name__)

_TOKEN_RE = re.compile(r"[a-z0-9]+")
# A run of terminal punctuation ends a sentence when followed by whitespace
# or end of text; the punctuation stays attached to the sentence.
_SENT_END_RE = re.compile(r"[.!?]+(?=\s|$)")


def tokenize(text: str) -> list[str]:
    """Lowercase and split on non-alphanumeric characters, dropping empties."""
    return _TOKEN_RE.findall(text.lower())


@dataclass
class Sentence:
    """One sentence of a document; ``index`` is its 0-based position."""

    index: int
    text: str
    tokens: list[str]


@dataclass
class Query:
    query_id: str
    text: str
    tokens: list[str]


@dataclass
class Document:
    doc_id: str
    text: str
    sentences: list[Sentence]

    @property
    def tokens(self) -> list[str]:
        """Token stream of the whole document, in sentence order."""
        out: list[str] = []
        for s in self.sentences:
            out.extend(s.tokens)
        return out


def split_sentences(text: str) -> list[Sentence]:
    """Split ``text`` into sentences on terminal punctuation (., !, ?).

    Abutting punctuation attaches to the preceding sentence; text without
    terminal punctuation yields a single sentence; empty or whitespace-only
    text yields no sentences.
    """
    pieces: list[str] = []
    start = 0
    for m in _SENT_END_RE.finditer(text):
        pieces.append(text[start:m.end()])
        start = m.end()
    tail = text[start:]
    if tail.strip():
        pieces.append(tail)
    sentences = []
    for piece in pieces:
        stripped = piece.strip()
        if not stripped:
            continue
        sentences.append(Sentence(index=len(sentences), text=stripped,
                                  tokens=tokenize(stripped)))
    return sentences


def make_document(doc_id: str, text: str) -> Document:
    doc = Document(doc_id=doc_id, text=text, sentences=split_sentences(text))
    if not doc.sentences:
        logger.warning("document %s has no sentences", doc_id)
    return doc


class Qrels:
    """Graded relevance judgments; unjudged pairs have grade 0."""

    def __init__(self) -> None:
        self._by_query: dict[str, dict[str, int]] = {}

    def set_grade(self, query_id: str, doc_id: str, grade: int) -> None:
        if grade < 0:
            raise ValidationError(
                f"negative grade {grade} for ({query_id}, {doc_id})")
        self._by_query.setdefault(query_id, {})[doc_id] = grade

    def grade(self, query_id: str, doc_id: str) -> int:
        return self._by_query.get(query_id, {}).get(doc_id, 0)

    def relevant_docs(self, query_id: str) -> dict[str, int]:
        """Mapping doc_id -> grade for docs with grade >= 1."""
        return {d: g for d, g in self._by_query.get(query_id, {}).items()
                if g >= 1}

    def relevant_count(self, query_id: str) -> int:
        return sum(1 for g in self._by_query.get(query_id, {}).values()
                   if g >= 1)

    def query_ids(self) -> list[str]:
        return list(self._by_query.keys())

    def judged(self, query_id: str) -> dict[str, int]:
        return dict(self._by_query.get(query_id, {}))

    def num_judged(self) -> int:
        return sum(len(d) for d in self._by_query.values())


@dataclass
class RunEntry:
    doc_id: str
    rank: int
    score: float


@dataclass
class RunList:
    """Ranked retrieval output for one query.

    Invariants: ranks strictly increasing starting at 1, scores
    non-increasing with rank, doc_ids distinct.
    """

    query_id: str
    entries: list[RunEntry] = field(default_factory=list)

    def validate(self) -> None:
        seen: set[str] = set()
        prev_rank = 0
        prev_score = None
        for e in self.entries:
            if e.doc_id in seen:
                raise ValidationError(
                    f"run for {self.query_id}: duplicate doc {e.doc_id}")
            seen.add(e.doc_id)
            if e.rank <= prev_rank:
                raise ValidationError(
                    f"run for {self.query_id}: rank {e.rank} after "
                    f"{prev_rank} is not increasing")
            if prev_rank == 0 and e.rank != 1:
                raise ValidationError(
                    f"run for {self.query_id}: first rank is {e.rank}, not 1")
            if prev_score is not None and e.score > prev_score:
                raise ValidationError(
                    f"run for {self.query_id}: score increases at rank "
                    f"{e.rank}")
            prev_rank = e.rank
            prev_score = e.score

    def doc_ids(self) -> list[str]:
        return [e.doc_id for e in self.entries]

    def truncated(self, k: int) -> "RunList":
        return RunList(self.query_id, self.entries[:k])


class EmbeddingTable:
    """Immutable token -> vector map with a fixed dimension."""

    def __init__(self, dimension: int, vectors: dict[str, np.ndarray]):
        self.dimension = dimension
        self._vectors = vectors

    def get(self, token: str) -> np.ndarray | None:
        """Vector for ``token``, or None when the token is not present."""
        return self._vectors.get(token)

    def __contains__(self, token: str) -> bool:
        return token in self._vectors

    def __len__(self) -> int:
        return len(self._vectors)


def load_queries(path: str) -> dict[str, Query]:
    """Load a TSV query file into an ordered ``query_id -> Query`` map."""
    queries: dict[str, Query] = {}
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            if "\t" not in line:
                raise ParseError(f"{path}:{lineno}: expected TAB separator")
            qid, text = line.split("\t", 1)
            if qid in queries:
                raise ValidationError(
                    f"{path}:{lineno}: duplicate query_id {qid}")
            if not qid:
                raise ValidationError(f"{path}:{lineno}: empty query_id")
            queries[qid] = Query(query_id=qid, text=text,
                                 tokens=tokenize(text))
    return queries


def load_corpus(path: str) -> dict[str, Document]:
    """Load a JSONL corpus into an ordered ``doc_id -> Document`` map."""
    corpus: dict[str, Document] = {}
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ParseError(f"{path}:{lineno}: invalid JSON: {exc}") from exc
            if not isinstance(obj, dict) or "doc_id" not in obj or "text" not in obj:
                raise ParseError(
                    f"{path}:{lineno}: object must have doc_id and text")
            doc_id = str(obj["doc_id"])
            if doc_id in corpus:
                raise ValidationError(
                    f"{path}:{lineno}: duplicate doc_id {doc_id}")
            corpus[doc_id] = make_document(doc_id, str(obj["text"]))
    return corpus


def load_qrels(path: str) -> Qrels:
    """Load TREC qrels; later duplicate (qid, docid) lines win with a warning."""
    qrels = Qrels()
    seen: set[tuple[str, str]] = set()
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            parts = line.split()
            if not parts:
                continue
            if len(parts) != 4:
                raise ParseError(
                    f"{path}:{lineno}: expected 4 columns, got {len(parts)}")
            qid, _iter, did, grade_str = parts
            try:
                grade = int(grade_str)
            except ValueError:
                raise ParseError(
                    f"{path}:{lineno}: non-integer grade {grade_str!r}")
            if (qid, did) in seen:
                logger.warning("%s:%d: duplicate qrels line for (%s, %s); "
                               "overriding", path, lineno, qid, did)
            seen.add((qid, did))
            try:
                qrels.set_grade(qid, did, grade)
            except ValidationError as exc:
                raise ParseError(f"{path}:{lineno}: {exc}") from exc
    return qrels


def load_run(path: str, top_k: int | None = None) -> dict[str, RunList]:
    """Load a TREC run file into a ``query_id -> RunList`` map.

    Unknown doc_ids are retained; resolution against a corpus is up to the
    caller. ``top_k`` truncates each list after validation.
    """
    runs: dict[str, RunList] = {}
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            parts = line.split()
            if not parts:
                continue
            if len(parts) != 6:
                raise ParseError(
                    f"{path}:{lineno}: expected 6 columns, got {len(parts)}")
            qid, _q0, did, rank_str, score_str, _tag = parts
            try:
                rank = int(rank_str)
                score = float(score_str)
            except ValueError:
                raise ParseError(f"{path}:{lineno}: bad rank or score")
            runs.setdefault(qid, RunList(qid)).entries.append(
                RunEntry(doc_id=did, rank=rank, score=score))
    for run in runs.values():
        run.validate()
    if top_k is not None:
        runs = {qid: run.truncated(top_k) for qid, run in runs.items()}
    return runs


def write_run(path: str, runs: dict[str, RunList], tag: str) -> None:
    """Write runs in six-column TREC format, queries in sorted order."""
    with open(path, "w", encoding="utf-8") as f:
        for qid in sorted(runs):
            for e in runs[qid].entries:
                f.write(f"{qid} Q0 {e.doc_id} {e.rank} {e.score:.6f} {tag}\n")


def load_embeddings(path: str) -> EmbeddingTable:
    """Load whitespace-separated text embeddings, inferring the dimension."""
    vectors: dict[str, np.ndarray] = {}
    dimension: int | None = None
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            parts = line.split()
            if not parts:
                continue
            token = parts[0]
            try:
                vec = np.array([float(x) for x in parts[1:]], dtype=np.float64)
            except ValueError:
                raise ParseError(f"{path}:{lineno}: non-numeric component")
            if vec.size == 0:
                raise ParseError(f"{path}:{lineno}: token without vector")
            if dimension is None:
                dimension = vec.size
            elif vec.size != dimension:
                raise ParseError(
                    f"{path}:{lineno}: dimension {vec.size} != {dimension}")
            if token in vectors:
                logger.warning("%s:%d: duplicate embedding for %r; "
                               "overriding", path, lineno, token)
            vectors[token] = vec
    if dimension is None:
        raise ParseError(f"{path}: empty embedding file")
    return EmbeddingTable(dimension=dimension, vectors=vectors)
