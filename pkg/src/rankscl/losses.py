"""Training objectives and their exact gradients.

Four losses over a batch of scored instances:

* pointwise cross-entropy over (yhat, y) pairs,
* pairwise hinge over (yhat+, yhat-) score pairs with margin m,
* a supervised contrastive term over the representations phi, where an
  anchor's positives are the other relevant instances of the same query
  and the denominator runs over every other instance in the batch,
* the convex combination (1 - lambda) * base + lambda * contrastive.

The contrastive term normalizes by the batch-global count of relevant
instances and is computed with max-subtracted log-sum-exp. Gradients are
returned w.r.t. yhat for the base losses and w.r.t. phi for the
contrastive term; both are exact.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, ValidationError

BASES = ("pointwise", "pairwise")


@dataclass
class LossConfig:
    base: str = "pointwise"
    temperature: float = 1.0     # tau > 0
    scl_weight: float = 0.0      # lambda in [0, 1]
    margin: float = 1.0          # m >= 0
    clip_eps: float = 1e-7

    def __post_init__(self) -> None:
        if self.base not in BASES:
            raise ConfigError(f"unknown base loss {self.base!r}")
        if self.temperature <= 0:
            raise ConfigError("temperature must be > 0")
        if not 0.0 <= self.scl_weight <= 1.0:
            raise ConfigError("scl_weight must be in [0, 1]")
        if self.margin < 0:
            raise ConfigError("margin must be >= 0")


@dataclass
class BatchView:
    """Loss-facing view of a batch: one row per scored instance.

    ``phi`` is whatever representation the encoder was configured to expose
    (normalized or raw); the losses are agnostic.
    """

    query_ids: list[str]
    labels: np.ndarray          # (N,) ints in {0, 1}
    yhat: np.ndarray            # (N,) floats in (0, 1)
    phi: np.ndarray             # (N, t)
    query_codes: np.ndarray = field(init=False)

    def __post_init__(self) -> None:
        n = len(self.query_ids)
        if not (self.labels.shape == (n,) and self.yhat.shape == (n,)
                and self.phi.ndim == 2 and self.phi.shape[0] == n):
            raise ValidationError("batch view arrays are inconsistent")
        codes: dict[str, int] = {}
        self.query_codes = np.array(
            [codes.setdefault(q, len(codes)) for q in self.query_ids],
            dtype=np.int64)

    @property
    def n(self) -> int:
        return len(self.query_ids)

    @property
    def n_plus(self) -> int:
        return int((self.labels == 1).sum())


def pointwise_loss(view: BatchView, cfg: LossConfig) -> tuple[float, np.ndarray]:
    """Mean binary cross-entropy; gradient w.r.t. each yhat.

    Predictions are clamped to [clip_eps, 1 - clip_eps] inside the logs;
    clamped entries get a zero gradient.
    """
    n = view.n
    if n == 0:
        raise ValidationError("pointwise loss over an empty batch")
    y = view.labels.astype(np.float64)
    yc = np.clip(view.yhat, cfg.clip_eps, 1.0 - cfg.clip_eps)
    loss = float(-np.mean(y * np.log(yc) + (1.0 - y) * np.log(1.0 - yc)))
    grad = -(y / yc - (1.0 - y) / (1.0 - yc)) / n
    clamped = (view.yhat < cfg.clip_eps) | (view.yhat > 1.0 - cfg.clip_eps)
    grad[clamped] = 0.0
    return loss, grad


def pairwise_loss(yhat_pos: np.ndarray, yhat_neg: np.ndarray,
                  cfg: LossConfig) -> tuple[float, np.ndarray, np.ndarray]:
    """Mean hinge max(0, m - yhat+ + yhat-); zero subgradient at the kink."""
    n = yhat_pos.shape[0]
    if n == 0:
        raise ValidationError("pairwise loss over an empty list")
    if yhat_neg.shape[0] != n:
        raise ValidationError("positive/negative score lists differ in length")
    slack = cfg.margin - yhat_pos + yhat_neg
    active = slack > 0.0
    loss = float(np.where(active, slack, 0.0).mean())
    d_pos = np.where(active, -1.0 / n, 0.0)
    d_neg = np.where(active, 1.0 / n, 0.0)
    return loss, d_pos, d_neg


def _positive_pair_mask(view: BatchView) -> np.ndarray:
    """mask[i, j] = same query, i != j, both labeled relevant."""
    q = view.query_codes
    y = view.labels
    same_query = q[:, None] == q[None, :]
    both_pos = (y[:, None] == 1) & (y[None, :] == 1)
    mask = same_query & both_pos
    np.fill_diagonal(mask, False)
    return mask


def scl_loss(view: BatchView, cfg: LossConfig) -> tuple[float, np.ndarray]:
    """Supervised contrastive loss over the batch representations.

    Returns exactly 0 with zero gradients when no anchor has a same-query
    relevant partner.
    """
    n = view.n
    if n < 2:
        raise ValidationError("contrastive loss needs a batch of >= 2")
    mask = _positive_pair_mask(view)
    if not mask.any():
        return 0.0, np.zeros_like(view.phi)

    n_plus = view.n_plus
    tau = cfg.temperature
    logits = (view.phi @ view.phi.T) / tau        # (N, N)
    off_diag = logits.copy()
    np.fill_diagonal(off_diag, -np.inf)
    row_max = off_diag.max(axis=1)
    exp_shift = np.exp(off_diag - row_max[:, None])  # diag -> exp(-inf) = 0
    z = exp_shift.sum(axis=1)
    log_z = row_max + np.log(z)

    pair_terms = logits - log_z[:, None]
    loss = float(-(pair_terms[mask]).sum() / n_plus)

    # d loss / d logits: -(mask - c_i * softmax_i) / n_plus, row-wise
    softmax = exp_shift / z[:, None]
    c = mask.sum(axis=1).astype(np.float64)
    d_logits = -(mask.astype(np.float64) - c[:, None] * softmax) / n_plus
    d_logits /= tau
    d_phi = (d_logits + d_logits.T) @ view.phi
    return loss, d_phi


@dataclass
class CombinedLoss:
    """Value and gradients of (1 - lambda) * base + lambda * contrastive.

    At the lambda endpoints the unused term is skipped entirely and its
    component value is None.
    """

    loss: float
    base_value: float | None
    scl_value: float | None
    d_yhat: np.ndarray
    d_phi: np.ndarray


def _base_loss(view: BatchView, cfg: LossConfig) -> tuple[float, np.ndarray]:
    """Dispatch the base ranking loss; gradient is w.r.t. every yhat."""
    if cfg.base == "pointwise":
        return pointwise_loss(view, cfg)
    if view.n % 2 != 0:
        raise ValidationError("pairwise base needs an even instance count")
    labels = view.labels
    if not ((labels[0::2] == 1).all() and (labels[1::2] == 0).all()):
        raise ValidationError("pairwise base expects interleaved "
                              "positive/negative instances")
    loss, d_pos, d_neg = pairwise_loss(view.yhat[0::2], view.yhat[1::2], cfg)
    d_yhat = np.empty_like(view.yhat)
    d_yhat[0::2] = d_pos
    d_yhat[1::2] = d_neg
    return loss, d_yhat


def ranking_scl(view: BatchView, cfg: LossConfig) -> CombinedLoss:
    """The interpolated training objective on one batch."""
    lam = cfg.scl_weight
    if lam == 0.0:
        base_value, d_yhat = _base_loss(view, cfg)
        return CombinedLoss(loss=base_value, base_value=base_value,
                            scl_value=None, d_yhat=d_yhat,
                            d_phi=np.zeros_like(view.phi))
    if lam == 1.0:
        scl_value, d_phi = scl_loss(view, cfg)
        return CombinedLoss(loss=scl_value, base_value=None,
                            scl_value=scl_value,
                            d_yhat=np.zeros_like(view.yhat), d_phi=d_phi)
    base_value, d_yhat = _base_loss(view, cfg)
    scl_value, d_phi = scl_loss(view, cfg)
    return CombinedLoss(
        loss=(1.0 - lam) * base_value + lam * scl_value,
        base_value=base_value,
        scl_value=scl_value,
        d_yhat=(1.0 - lam) * d_yhat,
        d_phi=lam * d_phi)
