"""Dense float primitives, each with an explicit backward companion.

Everything operates on plain numpy arrays: float32 on the training/attack
path, float64 in gradient-check mode.  Functions allocate fresh outputs and
never mutate their inputs; backward companions take the same inputs the
forward saw plus the upstream gradient.
"""

import numpy as np
from scipy.special import erf

from .errors import ShapeError

INV_SQRT2 = 0.7071067811865476
INV_SQRT_2PI = 0.3989422804014327

LAYERNORM_EPS = 1e-6


def matmul(a, b):
    """Matrix product of a 2-D ``a`` (m,k) and ``b`` (k,n)."""
    if a.ndim != 2 or b.ndim != 2:
        raise ShapeError(f"matmul expects 2-D operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul inner dims disagree: {a.shape} vs {b.shape}")
    return a @ b


def matmul_backward(a, b, gout):
    """Gradients of ``matmul``: returns (dA, dB) = (gout @ B^T, A^T @ gout)."""
    if gout.shape != (a.shape[0], b.shape[1]):
        raise ShapeError(f"upstream gradient shape {gout.shape} does not match product")
    return gout @ b.T, a.T @ gout


def layernorm(x, gamma, beta, eps=LAYERNORM_EPS, cache=None):
    """Normalize the last axis of ``x`` to zero mean / unit variance, then affine.

    ``gamma`` and ``beta`` are 1-D of length ``x.shape[-1]``.  When ``cache``
    is a dict, the normalized values and inverse stddev are recorded for
    reuse by the backward pass.
    """
    c = x.shape[-1]
    if c == 0:
        raise ShapeError("layernorm over an empty last axis")
    if gamma.shape != (c,) or beta.shape != (c,):
        raise ShapeError(f"gamma/beta must have shape ({c},)")
    if eps <= 0:
        raise ValueError("layernorm eps must be positive")
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    var = np.mean(xc * xc, axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    if cache is not None:
        cache["xhat"] = xhat
        cache["inv"] = inv
    return xhat * gamma + beta


def layernorm_backward(x, gamma, beta, gout, eps=LAYERNORM_EPS, cache=None):
    """Gradients of ``layernorm``: returns (dx, dgamma, dbeta)."""
    if cache is not None:
        xhat, inv = cache["xhat"], cache["inv"]
    else:
        mu = x.mean(axis=-1, keepdims=True)
        xc = x - mu
        var = np.mean(xc * xc, axis=-1, keepdims=True)
        inv = 1.0 / np.sqrt(var + eps)
        xhat = xc * inv
    lead = tuple(range(x.ndim - 1))
    dgamma = np.sum(gout * xhat, axis=lead)
    dbeta = np.sum(gout, axis=lead)
    gh = gout * gamma
    gh_mean = gh.mean(axis=-1, keepdims=True)
    ghx_mean = np.mean(gh * xhat, axis=-1, keepdims=True)
    dx = inv * (gh - gh_mean - xhat * ghx_mean)
    return dx, dgamma, dbeta


def gelu(x, cache=None):
    """Exact-erf GELU, elementwise: 0.5 * x * (1 + erf(x / sqrt(2)))."""
    e = erf(x * INV_SQRT2)
    if cache is not None:
        cache["erf"] = e
    return 0.5 * x * (1.0 + e)


def gelu_backward(x, gout, cache=None):
    """Analytic GELU derivative times the upstream gradient."""
    e = cache["erf"] if cache is not None else erf(x * INV_SQRT2)
    pdf = INV_SQRT_2PI * np.exp(-0.5 * x * x)
    return gout * (0.5 * (1.0 + e) + x * pdf)


def log_softmax(logits):
    """Numerically stable log-softmax over the last axis."""
    shifted = logits - logits.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def softmax(logits):
    """Stable softmax over the last axis."""
    shifted = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def _check_labels(logits, labels):
    if logits.ndim != 2:
        raise ShapeError(f"logits must be (batch, classes), got {logits.shape}")
    labels = np.asarray(labels)
    if labels.shape != (logits.shape[0],):
        raise ShapeError(f"labels shape {labels.shape} does not match batch {logits.shape[0]}")
    k = logits.shape[1]
    if labels.size and (labels.min() < 0 or labels.max() >= k):
        raise IndexError(f"label outside [0,{k})")
    return labels


def softmax_cross_entropy(logits, labels, reduction="mean"):
    """Cross-entropy of ``logits`` (B,K) against integer ``labels`` (B,).

    ``reduction='mean'`` returns a scalar; ``'none'`` returns the per-sample
    loss vector (used by the attack path, where each sample is its own
    optimization problem).
    """
    labels = _check_labels(logits, labels)
    ls = log_softmax(logits)
    per_sample = -ls[np.arange(logits.shape[0]), labels]
    if reduction == "mean":
        return float(per_sample.mean())
    if reduction == "none":
        return per_sample
    raise ValueError(f"unknown reduction {reduction!r}")


def softmax_cross_entropy_backward(logits, labels, reduction="mean"):
    """Gradient of the cross-entropy w.r.t. logits: softmax minus one-hot.

    With ``reduction='mean'`` the result is divided by the batch size; with
    ``'none'`` each row is the gradient of that sample's own loss.
    """
    labels = _check_labels(logits, labels)
    g = softmax(logits)
    g[np.arange(logits.shape[0]), labels] -= 1.0
    if reduction == "mean":
        g /= logits.shape[0]
    elif reduction != "none":
        raise ValueError(f"unknown reduction {reduction!r}")
    return g


def assert_finite(x, where=""):
    """Raise if ``x`` contains NaN or Inf; used at public operation borders."""
    if not np.isfinite(x).all():
        raise FloatingPointError(f"non-finite values{' in ' + where if where else ''}")
    return x
