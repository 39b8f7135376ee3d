"""AdamW wrapped by Lookahead, on the flat parameter vector.

One adamw_step per bag (batch size 1): decoupled weight decay first
(theta -= lr * wd * theta), then the bias-corrected Adam update
theta -= lr * mhat / (sqrt(vhat) + eps).  Lookahead keeps a slow copy of
the weights and every ``lookahead_k`` inner steps pulls it toward the fast
weights by ``alpha``, then resets the fast weights onto it; evaluation uses
the slow weights, so trainers force a final sync at the end of a run.

The compiled and the numpy update paths execute the same per-element
rounding sequence, so they produce bit-identical trajectories.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ._accel import HAVE_NUMBA, njit


def _adamw_loops(p, g, m, v, decay, b1, b2, eps, lr, c1, c2):
    # c1 = 1/(1-b1^t), c2 = 1/(1-b2^t); all arrays same length, updated in place.
    c1m = 1.0 - b1
    c2v = 1.0 - b2
    for i in range(p.shape[0]):
        gi = g[i]
        mi = b1 * m[i] + c1m * gi
        vi = b2 * v[i] + c2v * (gi * gi)
        m[i] = mi
        v[i] = vi
        num = mi * c1
        den = np.sqrt(vi * c2) + eps
        p[i] = p[i] * decay - lr * (num / den)


def _first_nonfinite_loops(g):
    for i in range(g.shape[0]):
        if not np.isfinite(g[i]):
            return i
    return -1


def _interpolate_loops(p, slow, alpha):
    # Same per-element rounding as the numpy sequence in _interpolate.
    for i in range(p.shape[0]):
        s = slow[i] + alpha * (p[i] - slow[i])
        slow[i] = s
        p[i] = s


if HAVE_NUMBA:
    _adamw_fast = njit(cache=True)(_adamw_loops)
    _first_nonfinite_fast = njit(cache=True)(_first_nonfinite_loops)
    _interpolate_fast = njit(cache=True)(_interpolate_loops)
else:  # pragma: no cover - exercised only without numba
    _adamw_fast = None
    _first_nonfinite_fast = None
    _interpolate_fast = None


@dataclass(eq=False)
class OptimState:
    """Moments, slow weights, counters, and hyperparameters."""

    lr: float
    beta1: float
    beta2: float
    eps: float
    weight_decay: float
    lookahead_alpha: float
    lookahead_k: int
    step: int
    m: np.ndarray
    v: np.ndarray
    slow: np.ndarray
    since_sync: int
    _scratch: np.ndarray = field(repr=False, default=None)

    @classmethod
    def create(
        cls,
        params: np.ndarray,
        lr: float,
        beta1: float = 0.9,
        beta2: float = 0.999,
        eps: float = 1e-8,
        weight_decay: float = 2e-5,
        lookahead_alpha: float = 0.5,
        lookahead_k: int = 5,
    ) -> "OptimState":
        if lr <= 0:
            raise ValueError(f"lr must be > 0, got {lr}")
        if lookahead_k < 1:
            raise ValueError(f"lookahead_k must be >= 1, got {lookahead_k}")
        n = params.shape[0]
        return cls(
            lr=lr,
            beta1=beta1,
            beta2=beta2,
            eps=eps,
            weight_decay=weight_decay,
            lookahead_alpha=lookahead_alpha,
            lookahead_k=lookahead_k,
            step=0,
            m=np.zeros(n),
            v=np.zeros(n),
            slow=params.copy(),
            since_sync=0,
            _scratch=np.empty(n),
        )


def _check_finite(grads: np.ndarray) -> None:
    if _first_nonfinite_fast is not None:
        idx = _first_nonfinite_fast(grads)
    else:
        finite = np.isfinite(grads)
        idx = -1 if finite.all() else int(np.flatnonzero(~finite)[0])
    if idx >= 0:
        raise ValueError(f"non-finite gradient at parameter index {idx}")


def adamw_step(params: np.ndarray, grads: np.ndarray, state: OptimState) -> None:
    """One in-place AdamW update; rejects non-finite gradients by index."""
    if params.shape != grads.shape or params.shape != state.m.shape:
        raise ValueError(
            f"length mismatch: params {params.shape}, grads {grads.shape}, "
            f"moments {state.m.shape}"
        )
    _check_finite(grads)
    state.step += 1
    t = state.step
    c1 = 1.0 / (1.0 - state.beta1**t)
    c2 = 1.0 / (1.0 - state.beta2**t)
    decay = 1.0 - state.lr * state.weight_decay
    if _adamw_fast is not None:
        _adamw_fast(
            params, grads, state.m, state.v,
            decay, state.beta1, state.beta2, state.eps, state.lr, c1, c2,
        )
        return
    # Same rounding sequence as the compiled loop, pass by pass.
    m, v = state.m, state.v
    t1 = state._scratch
    m *= state.beta1
    np.multiply(grads, 1.0 - state.beta1, out=t1)
    m += t1
    np.multiply(grads, grads, out=t1)
    t1 *= 1.0 - state.beta2
    v *= state.beta2
    v += t1
    num = m * c1
    np.multiply(v, c2, out=t1)
    np.sqrt(t1, out=t1)
    t1 += state.eps
    np.divide(num, t1, out=num)
    num *= state.lr
    params *= decay
    params -= num


def lookahead_sync(params: np.ndarray, state: OptimState) -> bool:
    """Count one inner step; on every lookahead_k-th, interpolate and sync.

    Returns True when a sync happened.  slow += alpha * (fast - slow), then
    fast is reset onto slow.
    """
    state.since_sync += 1
    if state.since_sync < state.lookahead_k:
        return False
    _interpolate(params, state)
    return True


def force_sync(params: np.ndarray, state: OptimState) -> bool:
    """Sync immediately if any inner steps are pending (end of training)."""
    if state.since_sync == 0:
        return False
    _interpolate(params, state)
    return True


def _interpolate(params: np.ndarray, state: OptimState) -> None:
    if _interpolate_fast is not None:
        _interpolate_fast(params, state.slow, state.lookahead_alpha)
    else:
        t1 = state._scratch
        np.subtract(params, state.slow, out=t1)
        t1 *= state.lookahead_alpha
        state.slow += t1
        params[:] = state.slow
    state.since_sync = 0
