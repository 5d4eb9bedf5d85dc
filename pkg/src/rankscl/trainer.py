"""Mini-batch training loop: shuffle, cut batches, optionally augment,
compute the configured loss, and apply adaptive-moment updates, with
per-epoch validation re-ranking for model selection.

Everything is seed-deterministic: epoch e reshuffles with seed + e, and the
same (config, data, seed) always reproduces the same parameter trajectory.
"""

from __future__ import annotations

import json
import logging
import time
from dataclasses import dataclass, field, replace

import numpy as np

from . import kernels
from .augment import NegativePool, augment_batch
from .batching import TrainingSet, make_batches, to_pointwise
from .corpus import Document, Qrels, Query, RunList
from .encoder import (EncoderConfig, FeatureVector, ModelParams, backward,
                      featurize, forward_batch, init_params)
from .errors import ConfigError, NumericError, ValidationError
from .evaluation import METRICS, compute_metrics, rerank
from .losses import BatchView, CombinedLoss, LossConfig, ranking_scl
from .selector import IdfTable, SelectorConfig, SentenceSelector, build_idf

logger = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    loss: LossConfig = field(default_factory=LossConfig)
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    selector: SelectorConfig = field(default_factory=SelectorConfig)
    batch_size: int = 16
    epochs: int = 1
    learning_rate: float = 1e-3
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    seed: int = 0
    augment: bool = False
    validation_metric: str = "ndcg10"

    def __post_init__(self) -> None:
        if self.learning_rate <= 0:
            raise ConfigError("learning_rate must be > 0")
        if self.epochs < 1:
            raise ConfigError("epochs must be >= 1")
        if self.batch_size < 2:
            raise ConfigError("batch_size must be >= 2")
        if self.validation_metric not in METRICS:
            raise ConfigError(
                f"unknown validation metric {self.validation_metric!r}")


@dataclass
class TrainData:
    """Everything the loop needs besides the triples themselves."""

    queries: dict[str, Query]
    corpus: dict[str, Document]
    qrels: Qrels
    val_runs: dict[str, RunList]
    embeddings: object | None = None
    idf: IdfTable | None = None


@dataclass
class TrainReport:
    epoch_losses: list[float]
    val_metrics: list[float]
    best_epoch: int
    wall_clock_seconds: float
    seed: int
    loss_summary: dict

    def to_json(self, include_timing: bool = False) -> str:
        # wall clock is volatile; it stays out of the canonical JSON so
        # identical runs serialize identically
        payload = {
            "epoch_losses": self.epoch_losses,
            "val_metrics": self.val_metrics,
            "best_epoch": self.best_epoch,
            "seed": self.seed,
            "loss": self.loss_summary,
        }
        if include_timing:
            payload["wall_clock_seconds"] = self.wall_clock_seconds
        return json.dumps(payload, sort_keys=True, indent=2)


@dataclass
class AdamState:
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    step: int = 0


def init_adam(params: ModelParams) -> AdamState:
    return AdamState(m={n: np.zeros_like(a) for n, a in params.arrays()},
                     v={n: np.zeros_like(a) for n, a in params.arrays()})


def adam_step(params: ModelParams, grads: ModelParams, state: AdamState,
              cfg: TrainConfig) -> None:
    """One bias-corrected adaptive-moment update, in place."""
    for _, g in grads.arrays():
        if not np.isfinite(g).all():
            raise NumericError("non-finite gradient in optimizer step")
    state.step += 1
    bc1 = 1.0 - cfg.adam_beta1 ** state.step
    bc2 = 1.0 - cfg.adam_beta2 ** state.step
    for (name, p), (_, g) in zip(params.arrays(), grads.arrays()):
        kernels.adam_update(p.ravel(), g.ravel(), state.m[name].ravel(),
                            state.v[name].ravel(), cfg.learning_rate,
                            cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps,
                            bc1, bc2)


def _build_selector(data: TrainData, cfg: TrainConfig) -> SentenceSelector:
    idf = data.idf
    if cfg.selector.strategy == "term_matching" and idf is None:
        idf = build_idf(data.corpus)
        data.idf = idf
    return SentenceSelector(cfg.selector, idf=idf,
                            embeddings=data.embeddings)


class _FeatureCache:
    """Features for corpus documents are reused across epochs; derived
    (augmented) documents are always featurized fresh."""

    def __init__(self, queries: dict[str, Query],
                 corpus: dict[str, Document], enc: EncoderConfig):
        self.queries = queries
        self.corpus = corpus
        self.enc = enc
        self._cache: dict[tuple[str, str], FeatureVector] = {}

    def get(self, qid: str, doc_id: str,
            derived: dict[str, Document]) -> FeatureVector:
        doc = derived.get(doc_id)
        if doc is not None:
            return featurize(self.queries[qid], doc, self.enc)
        key = (qid, doc_id)
        fv = self._cache.get(key)
        if fv is None:
            doc = self.corpus.get(doc_id)
            if doc is None:
                raise ValidationError(f"document {doc_id} not in corpus")
            fv = featurize(self.queries[qid], doc, self.enc)
            self._cache[key] = fv
        return fv


def _loss_summary(cfg: TrainConfig) -> dict:
    return {
        "base": cfg.loss.base,
        "temperature": cfg.loss.temperature,
        "scl_weight": cfg.loss.scl_weight,
        "margin": cfg.loss.margin,
        "augment": cfg.augment,
        "validation_metric": cfg.validation_metric,
    }


def train(data: TrainData, ts: TrainingSet, cfg: TrainConfig,
          loss_impl=None) -> tuple[ModelParams, TrainReport]:
    """Train on ``ts`` and return the parameters of the best epoch.

    ``loss_impl`` overrides the batch objective (same signature as
    losses.ranking_scl); used to cross-check the interpolation endpoints.
    """
    t_start = time.perf_counter()
    if not ts.triples:
        raise ValidationError("training set is empty")
    if not data.val_runs:
        raise ValidationError("validation runs are empty")
    train_qids = {t.query_id for t in ts.triples}
    overlap = train_qids & set(data.val_runs)
    if overlap:
        raise ValidationError(
            f"validation queries overlap training queries: "
            f"{sorted(overlap)[:5]}")
    if loss_impl is None:
        loss_impl = ranking_scl

    selector = _build_selector(data, cfg) if cfg.augment else None
    pool = NegativePool(data.corpus, data.qrels) if cfg.augment else None
    params = init_params(cfg.encoder)
    state = init_adam(params)
    cache = _FeatureCache(data.queries, data.corpus, cfg.encoder)

    epoch_losses: list[float] = []
    val_metrics: list[float] = []
    best_epoch = -1
    best_metric = -np.inf
    best_params = params.copy()

    for epoch in range(cfg.epochs):
        rng = np.random.default_rng(cfg.seed + epoch)
        triples = list(ts.triples)
        rng.shuffle(triples)
        shuffled = TrainingSet(triples=triples, seed=cfg.seed,
                               provenance=ts.provenance)
        batch_losses = []
        for b_idx, batch in enumerate(make_batches(shuffled, cfg.batch_size)):
            derived: dict[str, Document] = {}
            if cfg.augment:
                augmented = augment_batch(
                    batch, corpus=data.corpus, queries=data.queries,
                    pool=pool, selector=selector, rng=rng)
                batch = augmented.triples
                derived = augmented.documents
            instances = to_pointwise(batch)
            features = [cache.get(inst.query_id, inst.doc_id, derived)
                        for inst in instances]
            fwd = forward_batch(params, features, cfg.encoder)
            view = BatchView(
                query_ids=[inst.query_id for inst in instances],
                labels=np.array([inst.label for inst in instances]),
                yhat=fwd.yhat,
                phi=fwd.phi_view)
            result: CombinedLoss = loss_impl(view, cfg.loss)
            if not np.isfinite(result.loss):
                raise NumericError(
                    f"non-finite loss at epoch {epoch} batch {b_idx}")
            grads = backward(params, fwd, result.d_yhat, result.d_phi,
                             cfg.encoder)
            adam_step(params, grads, state, cfg)
            batch_losses.append(result.loss)
        epoch_losses.append(float(np.mean(batch_losses)))

        reranked = rerank(params, data.val_runs, data.corpus, data.queries,
                          cfg.encoder)
        report = compute_metrics(reranked, data.qrels, system="validation")
        metric = report.means[cfg.validation_metric]
        val_metrics.append(metric)
        if metric > best_metric:
            best_metric = metric
            best_epoch = epoch
            best_params = params.copy()
        logger.info("epoch %d: loss %.6f, val %s %.4f", epoch,
                    epoch_losses[-1], cfg.validation_metric, metric)

    report = TrainReport(
        epoch_losses=epoch_losses,
        val_metrics=val_metrics,
        best_epoch=best_epoch,
        wall_clock_seconds=time.perf_counter() - t_start,
        seed=cfg.seed,
        loss_summary=_loss_summary(cfg))
    return best_params, report


@dataclass
class GridCell:
    temperature: float
    scl_weight: float
    metric: float
    best_epoch: int


@dataclass
class GridResult:
    best_temperature: float
    best_scl_weight: float
    cells: list[GridCell]


def grid_search(data: TrainData, ts: TrainingSet, cfg: TrainConfig,
                temperatures: list[float],
                scl_weights: list[float]) -> GridResult:
    """Train one model per (tau, lambda) cell; argmax validation metric,
    ties toward smaller lambda then smaller tau."""
    if not temperatures or not scl_weights:
        raise ValidationError("grid axes must be non-empty")
    cells = []
    for lam in scl_weights:
        for tau in temperatures:
            cell_cfg = replace(cfg, loss=replace(cfg.loss, temperature=tau,
                                                 scl_weight=lam))
            _, report = train(data, ts, cell_cfg)
            cells.append(GridCell(
                temperature=tau, scl_weight=lam,
                metric=report.val_metrics[report.best_epoch],
                best_epoch=report.best_epoch))
    best = sorted(cells, key=lambda c: (-c.metric, c.scl_weight,
                                        c.temperature))[0]
    return GridResult(best_temperature=best.temperature,
                      best_scl_weight=best.scl_weight, cells=cells)


@dataclass
class SeedResult:
    seed: int
    params: ModelParams
    report: TrainReport


def train_multi(data: TrainData, train_runs: dict[str, RunList], top_k: int,
                cfg: TrainConfig, seeds: list[int]) -> list[SeedResult]:
    """Retrain with several seeds (new sampling, shuffling, and init per
    seed); callers aggregate metrics over the results."""
    from .batching import build_training_set

    results = []
    for seed in seeds:
        seed_cfg = replace(cfg, seed=seed,
                           encoder=replace(cfg.encoder, init_seed=seed))
        ts = build_training_set(train_runs, data.qrels, top_k, seed,
                                corpus=data.corpus)
        params, report = train(data, ts, seed_cfg)
        results.append(SeedResult(seed=seed, params=params, report=report))
    return results
