"""A small trainable joint query-document encoder.

The joint input is emulated by a hashed bag-of-features map with three
namespaces: query unigrams (Q), document unigrams (D), and query-document
match features (M, weighted by document term frequency). A one-hidden-layer
MLP maps the hashed vector to a representation phi and a relevance score
yhat in (0, 1). Exact reverse-mode gradients are provided for every
parameter, including the chain through the optional L2 normalization of
phi.
"""

from __future__ import annotations

import hashlib
import json
from collections import Counter
from dataclasses import asdict, dataclass
from functools import lru_cache

import numpy as np

from . import kernels
from .corpus import Document, Query
from .errors import ConfigError, NumericError, ValidationError

# guard for the phi-normalization denominator
NORM_EPS = 1e-12

_CHECKPOINT_MAGIC = b"RSCLCKPT\n"


@dataclass
class EncoderConfig:
    hash_dim: int = 2 ** 18        # H: hashed feature space
    hidden_dim: int = 128          # h: hidden width
    repr_dim: int = 64             # t: representation dimension
    max_tokens: int = 512
    normalize_phi: bool = True
    init_seed: int = 0
    init_scale: float = 0.05

    def __post_init__(self) -> None:
        if self.hash_dim < 1 or self.hidden_dim < 1 or self.repr_dim < 1:
            raise ConfigError("all encoder dimensions must be >= 1")
        if self.max_tokens < 2:
            raise ConfigError("max_tokens must be >= 2")


@dataclass
class FeatureVector:
    """Sparse hashed features: parallel index/value arrays, indices sorted."""

    indices: np.ndarray
    values: np.ndarray

    @property
    def nnz(self) -> int:
        return int(self.indices.shape[0])


@lru_cache(maxsize=1 << 20)
def _token_hash(namespace: bytes, token: str) -> int:
    digest = hashlib.blake2b(token.encode("utf-8"), digest_size=8,
                             person=namespace).digest()
    return int.from_bytes(digest, "little")


def featurize(query: Query, doc: Document, cfg: EncoderConfig) -> FeatureVector:
    """Hash the truncated joint token stream into a unit-L2 sparse vector.

    The stream is query tokens, a separator slot, then document tokens,
    truncated to ``max_tokens`` total. Q and D features count token
    occurrences; each distinct query token present in the document adds an
    M feature valued at its document term frequency.
    """
    budget = cfg.max_tokens
    q_tokens = query.tokens[:budget]
    remaining = budget - len(q_tokens) - 1  # one slot for the separator
    d_tokens = doc.tokens[:remaining] if remaining > 0 else []

    weights: dict[int, float] = {}
    for tok in q_tokens:
        idx = _token_hash(b"Q", tok) % cfg.hash_dim
        weights[idx] = weights.get(idx, 0.0) + 1.0
    for tok in d_tokens:
        idx = _token_hash(b"D", tok) % cfg.hash_dim
        weights[idx] = weights.get(idx, 0.0) + 1.0
    if d_tokens:
        tf = Counter(d_tokens)
        for tok in sorted(set(q_tokens)):
            count = tf.get(tok, 0)
            if count:
                idx = _token_hash(b"M", tok) % cfg.hash_dim
                weights[idx] = weights.get(idx, 0.0) + float(count)

    if not weights:
        return FeatureVector(np.empty(0, dtype=np.int64),
                             np.empty(0, dtype=np.float64))
    indices = np.array(sorted(weights), dtype=np.int64)
    values = np.array([weights[i] for i in indices], dtype=np.float64)
    norm = float(np.linalg.norm(values))
    if norm > 0:
        values /= norm
    return FeatureVector(indices, values)


@dataclass
class ModelParams:
    """All trainable weights; also reused as the gradient container."""

    W1: np.ndarray      # (H, h)
    b1: np.ndarray      # (h,)
    W2: np.ndarray      # (h, t)
    b2: np.ndarray      # (t,)
    w_score: np.ndarray  # (t,)
    b_score: np.ndarray  # (1,)

    def arrays(self) -> list[tuple[str, np.ndarray]]:
        return [("W1", self.W1), ("b1", self.b1), ("W2", self.W2),
                ("b2", self.b2), ("w_score", self.w_score),
                ("b_score", self.b_score)]

    def copy(self) -> "ModelParams":
        return ModelParams(*(arr.copy() for _, arr in self.arrays()))


def init_params(cfg: EncoderConfig) -> ModelParams:
    """Uniform(-init_scale, +init_scale) weights, zero biases."""
    rng = np.random.default_rng(cfg.init_seed)
    s = cfg.init_scale
    H, h, t = cfg.hash_dim, cfg.hidden_dim, cfg.repr_dim
    return ModelParams(
        W1=rng.uniform(-s, s, size=(H, h)),
        b1=np.zeros(h),
        W2=rng.uniform(-s, s, size=(h, t)),
        b2=np.zeros(t),
        w_score=rng.uniform(-s, s, size=t),
        b_score=np.zeros(1),
    )


def zeros_like_params(params: ModelParams) -> ModelParams:
    return ModelParams(*(np.zeros_like(arr) for _, arr in params.arrays()))


def params_to_vector(params: ModelParams) -> np.ndarray:
    return np.concatenate([arr.ravel() for _, arr in params.arrays()])


def vector_to_params(vec: np.ndarray, cfg: EncoderConfig) -> ModelParams:
    H, h, t = cfg.hash_dim, cfg.hidden_dim, cfg.repr_dim
    shapes = [("W1", (H, h)), ("b1", (h,)), ("W2", (h, t)), ("b2", (t,)),
              ("w_score", (t,)), ("b_score", (1,))]
    out = {}
    pos = 0
    for name, shape in shapes:
        size = int(np.prod(shape))
        out[name] = vec[pos:pos + size].reshape(shape).copy()
        pos += size
    if pos != vec.size:
        raise ValidationError("parameter vector length mismatch")
    return ModelParams(**out)


def pack_batch(features: list[FeatureVector]) -> tuple[np.ndarray, np.ndarray,
                                                       np.ndarray]:
    """CSR-encode a batch of sparse feature vectors."""
    indptr = np.zeros(len(features) + 1, dtype=np.int64)
    for i, fv in enumerate(features):
        indptr[i + 1] = indptr[i] + fv.nnz
    if features:
        indices = np.concatenate([fv.indices for fv in features])
        values = np.concatenate([fv.values for fv in features])
    else:
        indices = np.empty(0, dtype=np.int64)
        values = np.empty(0, dtype=np.float64)
    return indptr, indices, values


@dataclass
class ForwardBatch:
    """Cached activations for a batch, as needed by the backward pass."""

    indptr: np.ndarray
    indices: np.ndarray
    values: np.ndarray
    hidden: np.ndarray          # (B, h), post-relu
    phi: np.ndarray             # (B, t), raw representation
    yhat: np.ndarray            # (B,), strictly inside (0, 1)
    phi_norm: np.ndarray | None  # (B, t) unit rows when normalization is on
    norms: np.ndarray | None     # (B,) raw L2 norms of phi

    @property
    def phi_view(self) -> np.ndarray:
        """The representation the contrastive loss should consume."""
        return self.phi if self.phi_norm is None else self.phi_norm

    def __len__(self) -> int:
        return int(self.yhat.shape[0])


@dataclass
class ForwardRecord:
    """Single-instance view of a forward pass."""

    phi: np.ndarray
    yhat: float
    phi_normalized: np.ndarray | None


def forward_batch(params: ModelParams, features: list[FeatureVector],
                  cfg: EncoderConfig) -> ForwardBatch:
    indptr, indices, values = pack_batch(features)
    hidden, phi, yhat = kernels.forward_batch(
        indptr, indices, values, params.W1, params.b1, params.W2, params.b2,
        params.w_score, float(params.b_score[0]))
    if not np.isfinite(hidden).all():
        raise NumericError("non-finite value in the hidden layer")
    if not np.isfinite(phi).all():
        raise NumericError("non-finite value in the representation layer")
    if not np.isfinite(yhat).all():
        raise NumericError("non-finite value in the score layer")
    phi_norm = None
    norms = None
    if cfg.normalize_phi:
        norms = np.linalg.norm(phi, axis=1)
        denom = np.maximum(norms, NORM_EPS)
        phi_norm = phi / denom[:, None]
    return ForwardBatch(indptr, indices, values, hidden, phi, yhat,
                        phi_norm, norms)


def forward(params: ModelParams, x: FeatureVector,
            cfg: EncoderConfig) -> ForwardRecord:
    fb = forward_batch(params, [x], cfg)
    return ForwardRecord(
        phi=fb.phi[0],
        yhat=float(fb.yhat[0]),
        phi_normalized=None if fb.phi_norm is None else fb.phi_norm[0])


def backward(params: ModelParams, fwd: ForwardBatch,
             d_yhat: np.ndarray, d_phi_view: np.ndarray,
             cfg: EncoderConfig) -> ModelParams:
    """Exact gradients of a scalar loss given dL/dyhat and dL/dphi.

    ``d_phi_view`` is taken w.r.t. the same representation view the loss
    consumed (normalized when cfg.normalize_phi, raw otherwise).
    """
    n = len(fwd)
    if d_yhat.shape != (n,) or d_phi_view.shape != fwd.phi.shape:
        raise ValidationError("upstream gradient shapes do not match batch")
    if not (np.isfinite(d_yhat).all() and np.isfinite(d_phi_view).all()):
        raise NumericError("non-finite upstream gradient")

    # score head: yhat = sigmoid(ws . phi + bs) on the raw phi
    dz = d_yhat * fwd.yhat * (1.0 - fwd.yhat)
    d_phi = dz[:, None] * params.w_score[None, :]
    d_ws = dz @ fwd.phi
    d_bs = np.array([dz.sum()])

    if cfg.normalize_phi:
        # phi_n = phi / c with c = max(||phi||, eps); through rows where the
        # norm exceeds eps the Jacobian is (I - phi_n phi_n^T) / ||phi||
        g = d_phi_view
        norms = fwd.norms
        live = norms > NORM_EPS
        d_raw = np.empty_like(g)
        if live.any():
            pn = fwd.phi_norm[live]
            gl = g[live]
            proj = (gl * pn).sum(axis=1, keepdims=True)
            d_raw[live] = (gl - proj * pn) / norms[live][:, None]
        if (~live).any():
            d_raw[~live] = g[~live] / NORM_EPS
        d_phi = d_phi + d_raw
    else:
        d_phi = d_phi + d_phi_view

    d_W2 = fwd.hidden.T @ d_phi
    d_b2 = d_phi.sum(axis=0)
    d_hidden = d_phi @ params.W2.T
    d_z1 = d_hidden * (fwd.hidden > 0.0)
    d_W1 = kernels.w1_grad(fwd.indptr, fwd.indices, fwd.values, d_z1,
                           params.W1.shape[0])
    d_b1 = d_z1.sum(axis=0)
    return ModelParams(W1=d_W1, b1=d_b1, W2=d_W2, b2=d_b2, w_score=d_ws,
                       b_score=d_bs)


def save_checkpoint(path: str, params: ModelParams,
                    cfg: EncoderConfig) -> None:
    """Write a deterministic binary checkpoint (header JSON + raw arrays)."""
    header = {
        "format_version": 1,
        "encoder": asdict(cfg),
        "arrays": [{"name": name, "shape": list(arr.shape),
                    "dtype": str(arr.dtype)}
                   for name, arr in params.arrays()],
    }
    with open(path, "wb") as f:
        f.write(_CHECKPOINT_MAGIC)
        f.write(json.dumps(header, sort_keys=True).encode("utf-8"))
        f.write(b"\n")
        for _, arr in params.arrays():
            f.write(np.ascontiguousarray(arr).tobytes())


def load_checkpoint(path: str) -> tuple[ModelParams, EncoderConfig]:
    with open(path, "rb") as f:
        magic = f.read(len(_CHECKPOINT_MAGIC))
        if magic != _CHECKPOINT_MAGIC:
            raise ValidationError(f"{path}: not a checkpoint file")
        header = json.loads(f.readline().decode("utf-8"))
        if header.get("format_version") != 1:
            raise ValidationError(
                f"{path}: unsupported format version "
                f"{header.get('format_version')}")
        cfg = EncoderConfig(**header["encoder"])
        loaded = {}
        for spec in header["arrays"]:
            shape = tuple(spec["shape"])
            dtype = np.dtype(spec["dtype"])
            count = int(np.prod(shape)) if shape else 1
            raw = f.read(count * dtype.itemsize)
            loaded[spec["name"]] = np.frombuffer(raw, dtype=dtype).reshape(
                shape).copy()
    return ModelParams(**loaded), cfg
