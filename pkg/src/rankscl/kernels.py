"""Numeric kernels behind the encoder and the optimizer.

Two interchangeable backends compute identical math:

* ``numba``  -- @njit loops over the CSR feature batch (default when numba
  imports cleanly); fused, allocation-light.
* ``numpy``  -- pure-numpy fallback.

Select explicitly with the environment variable ``RANKSCL_BACKEND=numpy``
or ``RANKSCL_BACKEND=numba`` (read once at import). The two backends agree
to floating-point round-off, not bit-for-bit; within one backend every
kernel is deterministic.

Batches are CSR-encoded: ``indptr`` (B+1,), ``indices`` (nnz,) row indices
into the hashed feature space, ``values`` (nnz,).
"""

from __future__ import annotations

import os

import numpy as np

_ENV_VAR = "RANKSCL_BACKEND"

# sigmoid outputs are clamped into the open interval (0, 1)
_YHAT_LO = 1e-15
_YHAT_HI = 1.0 - 1e-15


def _sigmoid_clamped(s: np.ndarray) -> np.ndarray:
    y = 1.0 / (1.0 + np.exp(-s))
    return np.clip(y, _YHAT_LO, _YHAT_HI)


# ----------------------------------------------------------------------
# pure-numpy backend
# ----------------------------------------------------------------------

def forward_numpy(indptr, indices, values, W1, b1, W2, b2, ws, bs):
    """Per-row: hidden = relu(W1^T x + b1); phi = W2^T hidden + b2;
    yhat = sigmoid(ws . phi + bs)."""
    n_rows = indptr.shape[0] - 1
    h = W1.shape[1]
    hidden = np.empty((n_rows, h), dtype=np.float64)
    for r in range(n_rows):
        lo, hi = indptr[r], indptr[r + 1]
        if hi > lo:
            hidden[r] = values[lo:hi] @ W1[indices[lo:hi]] + b1
        else:
            hidden[r] = b1
    np.maximum(hidden, 0.0, out=hidden)
    phi = hidden @ W2 + b2
    yhat = _sigmoid_clamped(phi @ ws + bs)
    return hidden, phi, yhat


def w1_grad_numpy(indptr, indices, values, dz1, n_features):
    """Scatter-add the hidden-layer deltas back onto the touched W1 rows."""
    h = dz1.shape[1]
    dW1 = np.zeros((n_features, h), dtype=np.float64)
    n_rows = indptr.shape[0] - 1
    counts = np.diff(indptr)
    if counts.sum() == 0:
        return dW1
    row_of = np.repeat(np.arange(n_rows), counts)
    np.add.at(dW1, indices, values[:, None] * dz1[row_of])
    return dW1


def adam_numpy(param, grad, m, v, lr, beta1, beta2, eps, bc1, bc2):
    """One bias-corrected adaptive-moment step, in place.

    bc1 = 1 - beta1**t and bc2 = 1 - beta2**t for the incremented step t.
    """
    m *= beta1
    m += (1.0 - beta1) * grad
    v *= beta2
    v += (1.0 - beta2) * grad * grad
    param -= lr * (m / bc1) / (np.sqrt(v / bc2) + eps)


# ----------------------------------------------------------------------
# numba backend
# ----------------------------------------------------------------------

def _build_numba():
    from numba import njit

    @njit(cache=True)
    def forward_numba(indptr, indices, values, W1, b1, W2, b2, ws, bs):
        n_rows = indptr.shape[0] - 1
        h = W1.shape[1]
        t = W2.shape[1]
        hidden = np.empty((n_rows, h), dtype=np.float64)
        phi = np.empty((n_rows, t), dtype=np.float64)
        yhat = np.empty(n_rows, (np.float64))
        for r in range(n_rows):
            for j in range(h):
                hidden[r, j] = b1[j]
            for p in range(indptr[r], indptr[r + 1]):
                row = indices[p]
                val = values[p]
                for j in range(h):
                    hidden[r, j] += val * W1[row, j]
            for j in range(h):
                if hidden[r, j] < 0.0:
                    hidden[r, j] = 0.0
            s = bs
            for c in range(t):
                acc = b2[c]
                for j in range(h):
                    acc += hidden[r, j] * W2[j, c]
                phi[r, c] = acc
                s += acc * ws[c]
            y = 1.0 / (1.0 + np.exp(-s))
            if y < _YHAT_LO:
                y = _YHAT_LO
            elif y > _YHAT_HI:
                y = _YHAT_HI
            yhat[r] = y
        return hidden, phi, yhat

    @njit(cache=True)
    def w1_grad_numba(indptr, indices, values, dz1, n_features):
        h = dz1.shape[1]
        dW1 = np.zeros((n_features, h), dtype=np.float64)
        n_rows = indptr.shape[0] - 1
        for r in range(n_rows):
            for p in range(indptr[r], indptr[r + 1]):
                row = indices[p]
                val = values[p]
                for j in range(h):
                    dW1[row, j] += val * dz1[r, j]
        return dW1

    @njit(cache=True)
    def adam_numba(param, grad, m, v, lr, beta1, beta2, eps, bc1, bc2):
        for i in range(param.shape[0]):
            g = grad[i]
            m[i] = beta1 * m[i] + (1.0 - beta1) * g
            v[i] = beta2 * v[i] + (1.0 - beta2) * g * g
            param[i] -= lr * (m[i] / bc1) / (np.sqrt(v[i] / bc2) + eps)

    return forward_numba, w1_grad_numba, adam_numba


def _select_backend() -> str:
    want = os.environ.get(_ENV_VAR, "").strip().lower()
    if want in ("numpy", "numba"):
        return want
    if want:
        raise ValueError(f"{_ENV_VAR} must be 'numpy' or 'numba', "
                         f"got {want!r}")
    try:
        import numba  # noqa: F401
        return "numba"
    except ImportError:
        return "numpy"


ACTIVE_BACKEND = _select_backend()

if ACTIVE_BACKEND == "numba":
    forward_batch, w1_grad, adam_update = _build_numba()
else:
    forward_batch, w1_grad, adam_update = (forward_numpy, w1_grad_numpy,
                                           adam_numpy)
