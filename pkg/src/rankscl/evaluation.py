"""Re-ranking and retrieval evaluation: AP, RR, nDCG@k, and a paired
significance test between two systems.

Queries without any relevant judgment are excluded from metric means (and
counted); unjudged documents are treated as non-relevant. nDCG defaults to
exponential gain (2^grade - 1) with a linear-gain switch for cross-checks.
"""

from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import dataclass

import numpy as np
from scipy import stats

from .corpus import Document, Qrels, Query, RunEntry, RunList
from .encoder import EncoderConfig, ModelParams, featurize, forward_batch
from .errors import ValidationError

logger = logging.getLogger(__name__)

METRICS = ("map", "rr", "ndcg10")


def rerank(params: ModelParams, runs: dict[str, RunList],
           corpus: dict[str, Document], queries: dict[str, Query],
           cfg: EncoderConfig) -> dict[str, RunList]:
    """Score every retrieved document with the encoder and re-sort.

    Ties break by first-stage rank, then doc_id; unresolvable documents are
    dropped with a warning; ranks are reassigned from 1.
    """
    out: dict[str, RunList] = {}
    for qid, run in runs.items():
        query = queries.get(qid)
        if query is None:
            raise ValidationError(f"rerank: no query text for {qid}")
        docs = []
        for e in run.entries:
            doc = corpus.get(e.doc_id)
            if doc is None:
                logger.warning("rerank: dropping unresolvable doc %s for "
                               "query %s", e.doc_id, qid)
                continue
            docs.append((e, doc))
        if not docs:
            out[qid] = RunList(qid, [])
            continue
        features = [featurize(query, doc, cfg) for _, doc in docs]
        scores = forward_batch(params, features, cfg).yhat
        order = sorted(range(len(docs)),
                       key=lambda i: (-scores[i], docs[i][0].rank,
                                      docs[i][0].doc_id))
        entries = [RunEntry(doc_id=docs[i][0].doc_id, rank=r + 1,
                            score=float(scores[i]))
                   for r, i in enumerate(order)]
        out[qid] = RunList(qid, entries)
    return out


def average_precision(run: RunList, qrels: Qrels) -> float:
    """AP with R = all judged-relevant docs for the query, retrieved or not."""
    total_relevant = qrels.relevant_count(run.query_id)
    if total_relevant == 0:
        raise ValidationError(
            f"AP undefined for {run.query_id}: no relevant documents")
    hits = 0
    precision_sum = 0.0
    for position, e in enumerate(run.entries, start=1):
        if qrels.grade(run.query_id, e.doc_id) >= 1:
            hits += 1
            precision_sum += hits / position
    return precision_sum / total_relevant


def reciprocal_rank(run: RunList, qrels: Qrels) -> float:
    for position, e in enumerate(run.entries, start=1):
        if qrels.grade(run.query_id, e.doc_id) >= 1:
            return 1.0 / position
    return 0.0


def _gain(grade: int, gain: str) -> float:
    if gain == "exp":
        return float(2 ** grade - 1)
    return float(grade)


def ndcg_at_k(run: RunList, qrels: Qrels, k: int = 10,
              gain: str = "exp") -> float:
    """nDCG@k with DCG = sum gain(grade_r) / log2(r + 1)."""
    if gain not in ("exp", "linear"):
        raise ValidationError(f"unknown gain mode {gain!r}")
    judged = qrels.judged(run.query_id)
    ideal_gains = sorted((_gain(g, gain) for g in judged.values()),
                         reverse=True)[:k]
    idcg = sum(g / math.log2(r + 1)
               for r, g in enumerate(ideal_gains, start=1))
    if idcg <= 0:
        raise ValidationError(
            f"nDCG undefined for {run.query_id}: no relevant documents")
    dcg = 0.0
    for position, e in enumerate(run.entries[:k], start=1):
        dcg += _gain(qrels.grade(run.query_id, e.doc_id), gain) / \
            math.log2(position + 1)
    return dcg / idcg


@dataclass
class MetricReport:
    system: str
    per_query: dict[str, dict[str, float]]   # metric -> qid -> value
    means: dict[str, float]
    n_evaluated: int
    n_skipped: int

    def to_json(self) -> str:
        return json.dumps({
            "system": self.system,
            "means": self.means,
            "n_evaluated": self.n_evaluated,
            "n_skipped": self.n_skipped,
            "per_query": self.per_query,
        }, sort_keys=True, indent=2)

    def format_table(self) -> str:
        lines = [f"system: {self.system}   queries: {self.n_evaluated} "
                 f"(skipped {self.n_skipped})"]
        header = f"{'metric':<8}{'mean':>10}"
        lines.append(header)
        lines.append("-" * len(header))
        for metric in METRICS:
            lines.append(f"{metric:<8}{self.means[metric]:>10.4f}")
        return "\n".join(lines)


def compute_metrics(runs: dict[str, RunList], qrels: Qrels,
                    system: str = "system", ndcg_k: int = 10,
                    gain: str = "exp") -> MetricReport:
    """Per-query AP / RR / nDCG@k and their means over evaluable queries."""
    per_query: dict[str, dict[str, float]] = {m: {} for m in METRICS}
    skipped = 0
    for qid in sorted(runs):
        run = runs[qid]
        if qrels.relevant_count(qid) == 0:
            logger.warning("query %s has no relevant judgments; skipped", qid)
            skipped += 1
            continue
        per_query["map"][qid] = average_precision(run, qrels)
        per_query["rr"][qid] = reciprocal_rank(run, qrels)
        per_query["ndcg10"][qid] = ndcg_at_k(run, qrels, k=ndcg_k, gain=gain)
    n_eval = len(per_query["map"])
    means = {m: (float(np.mean(list(vals.values()))) if vals else 0.0)
             for m, vals in per_query.items()}
    return MetricReport(system=system, per_query=per_query, means=means,
                        n_evaluated=n_eval, n_skipped=skipped)


@dataclass
class SignificanceResult:
    mean_difference: float
    t_statistic: float
    p_value: float
    significant_05: bool
    significant_10: bool
    degenerate: bool
    n: int


def paired_test(system_a: dict[str, float],
                system_b: dict[str, float]) -> SignificanceResult:
    """Two-sided paired Student t-test on per-query differences (a - b).

    All-zero differences give t = 0, p = 1; zero variance around a nonzero
    mean is flagged degenerate with an undefined p.
    """
    shared = sorted(set(system_a) & set(system_b))
    if len(shared) != len(system_a) or len(shared) != len(system_b):
        raise ValidationError("paired test requires the same query set")
    if len(shared) < 2:
        raise ValidationError("paired test needs at least 2 queries")
    diffs = np.array([system_a[q] - system_b[q] for q in shared])
    n = diffs.size
    mean = float(diffs.mean())
    sd = float(diffs.std(ddof=1))
    if sd == 0.0:
        if mean == 0.0:
            return SignificanceResult(0.0, 0.0, 1.0, False, False, False, n)
        return SignificanceResult(mean, math.copysign(math.inf, mean),
                                  float("nan"), False, False, True, n)
    t_stat = mean / (sd / math.sqrt(n))
    p = float(2.0 * stats.t.sf(abs(t_stat), df=n - 1))
    return SignificanceResult(mean, t_stat, p, p < 0.05, p < 0.10, False, n)


def write_per_query_csv(path: str, report: MetricReport) -> None:
    """One row per evaluated query with all three metric values."""
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        writer.writerow(["query_id", "map", "rr", "ndcg10"])
        for qid in sorted(report.per_query["map"]):
            writer.writerow([qid,
                             f"{report.per_query['map'][qid]:.10f}",
                             f"{report.per_query['rr'][qid]:.10f}",
                             f"{report.per_query['ndcg10'][qid]:.10f}"])


def read_per_query_csv(path: str, metric: str = "ndcg10") -> dict[str, float]:
    if metric not in METRICS:
        raise ValidationError(f"unknown metric {metric!r}")
    values: dict[str, float] = {}
    with open(path, newline="", encoding="utf-8") as f:
        for row in csv.DictReader(f):
            values[row["query_id"]] = float(row[metric])
    return values
