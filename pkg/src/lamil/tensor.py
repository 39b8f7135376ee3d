"""Dense numeric core: the few array operations the model is built from.

Matrices are two-dimensional row-major ``numpy.float64`` arrays and vectors
are one-dimensional ones; every public operation keeps that convention.  All
compute runs in 64-bit floats end to end (file formats alone use 32-bit), so
finite-difference gradient comparisons stay tight.
"""

from __future__ import annotations

from typing import Callable

import numpy as np


def matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Matrix product with explicit shape validation."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.ndim != 2 or b.ndim != 2:
        raise ValueError(f"matmul expects 2-d arrays, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ValueError(f"matmul dimension mismatch: {a.shape} x {b.shape}")
    return a @ b


def softmax(x: np.ndarray) -> np.ndarray:
    """Stable softmax over the last axis (max subtraction)."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] == 0:
        raise ValueError("softmax of an empty vector is undefined")
    shifted = x - x.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def layer_norm(
    x: np.ndarray, gamma: np.ndarray, beta: np.ndarray, eps: float = 1e-5
) -> np.ndarray:
    """Layer normalization of one vector with learned scale and shift.

    Uses population (biased) variance: out_i = gamma_i * (x_i - mean) /
    sqrt(var + eps) + beta_i.
    """
    x = np.asarray(x, dtype=np.float64)
    gamma = np.asarray(gamma, dtype=np.float64)
    beta = np.asarray(beta, dtype=np.float64)
    if not (x.shape == gamma.shape == beta.shape) or x.ndim != 1:
        raise ValueError(
            f"layer_norm length mismatch: x {x.shape}, gamma {gamma.shape}, "
            f"beta {beta.shape}"
        )
    out, _, _ = layer_norm_rows(x[None, :], gamma, beta, eps)
    return out[0]


def layer_norm_rows(
    x: np.ndarray, gamma: np.ndarray, beta: np.ndarray, eps: float = 1e-5
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Row-wise layer norm returning (out, xhat, inv_std) for backprop."""
    mu = x.mean(axis=1, keepdims=True)
    xc = x - mu
    var = np.mean(xc * xc, axis=1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    return gamma * xhat + beta, xhat, inv


def layer_norm_rows_backward(
    dy: np.ndarray, xhat: np.ndarray, inv: np.ndarray, gamma: np.ndarray
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Backward of layer_norm_rows: returns (dx, dgamma, dbeta)."""
    g = dy * gamma
    d = xhat.shape[1]
    mean_g = g.sum(axis=1, keepdims=True) / d
    mean_gx = (g * xhat).sum(axis=1, keepdims=True) / d
    dx = inv * (g - mean_g - xhat * mean_gx)
    return dx, (dy * xhat).sum(axis=0), dy.sum(axis=0)


def sigmoid(x: np.ndarray) -> np.ndarray:
    """Numerically stable logistic function."""
    x = np.asarray(x, dtype=np.float64)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def log_sigmoid(x: np.ndarray) -> np.ndarray:
    """log(sigmoid(x)) without overflow at large |x|."""
    x = np.asarray(x, dtype=np.float64)
    return -np.logaddexp(0.0, -x)


def grad_check(
    f: Callable[[np.ndarray], tuple[float, np.ndarray]],
    x: np.ndarray,
    h: float = 1e-5,
) -> float:
    """Max relative error between analytic and central-difference gradients.

    ``f`` maps a flat float64 vector to ``(scalar value, gradient vector)``.
    Returns max_i |g_analytic_i - g_fd_i| / max(1, |g_fd_i|).  Central
    differences use step ``h`` per coordinate.
    """
    x = np.asarray(x, dtype=np.float64)
    _, grad = f(x)
    grad = np.asarray(grad, dtype=np.float64)
    if grad.shape != x.shape:
        raise ValueError(f"gradient shape {grad.shape} does not match x {x.shape}")
    worst = 0.0
    for i in range(x.size):
        xp = x.copy()
        xp[i] += h
        fp, _ = f(xp)
        xm = x.copy()
        xm[i] -= h
        fm, _ = f(xm)
        if not (np.isfinite(fp) and np.isfinite(fm)):
            raise ValueError(f"non-finite evaluation in grad_check at index {i}")
        g_fd = (fp - fm) / (2.0 * h)
        err = abs(grad[i] - g_fd) / max(1.0, abs(g_fd))
        if err > worst:
            worst = err
    return worst
