"""Graph-restricted and global multi-head self-attention.

Local attention updates every token from its kNN neighborhood only: per
head, logits are scaled dot products (Q h_i . K h_j) / sqrt(d_k) over the
neighbors j of i, softmaxed per row, and head outputs sum w_ij * V h_j
before concatenation and the output projection O.  The local path works on
gathered neighbor lists and never materializes an n x n matrix; its cost is
O(n * k).  Global attention is the same update over all pairs and serves as
the baseline the local blocks are swapped against.

A block is post-norm and has no feed-forward sublayer: out =
layer_norm(tokens + attention(tokens)).  Softmax rows from every forward
are cached so per-tile attention scores can be extracted afterwards.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ._accel import HAVE_NUMBA, njit
from .graph import KnnGraph
from .tensor import layer_norm_rows, layer_norm_rows_backward, softmax


@dataclass(eq=False)
class AttentionLayerParams:
    """One attention layer's learnable arrays.

    q, k, v are (H, d_k, d) with d_k = d / H; o is (d, d); gamma and beta
    are the layer-norm scale and shift, both (d,).  Arrays are float64 and
    may be views into a flat parameter vector.
    """

    q: np.ndarray
    k: np.ndarray
    v: np.ndarray
    o: np.ndarray
    gamma: np.ndarray
    beta: np.ndarray

    @property
    def heads(self) -> int:
        return self.q.shape[0]

    @property
    def head_dim(self) -> int:
        return self.q.shape[1]

    @property
    def dim(self) -> int:
        return self.q.shape[2]


@dataclass(eq=False)
class AttentionCache:
    """Softmax rows retained from one layer's forward pass.

    ``weights`` is (n, k, H) for the local path, row-aligned with the
    layer's KnnGraph, and (n, n, H) for the global path (graph None).
    """

    weights: np.ndarray
    graph: KnnGraph | None


@dataclass(eq=False)
class BlockState:
    """Forward intermediates one transformer block needs for backward."""

    tokens_in: np.ndarray
    qh: np.ndarray
    kh: np.ndarray
    vh: np.ndarray
    w: np.ndarray  # (n, H, k) local or (n, H, n) global
    concat: np.ndarray  # head outputs, (n, d)
    xhat: np.ndarray
    inv: np.ndarray
    cache: AttentionCache


def _local_fwd_loops(qh, kh, vh, nbr, scale, w, out):
    # qh/kh/vh: (n, H, dk) contiguous; nbr: (n, k); w: (n, H, k); out: (n, H, dk)
    n, H, dk = qh.shape
    k = nbr.shape[1]
    for i in range(n):
        for h in range(H):
            m = -1e300
            for s in range(k):
                j = nbr[i, s]
                acc = 0.0
                for c in range(dk):
                    acc += qh[i, h, c] * kh[j, h, c]
                acc *= scale
                w[i, h, s] = acc
                if acc > m:
                    m = acc
            tot = 0.0
            for s in range(k):
                e = np.exp(w[i, h, s] - m)
                w[i, h, s] = e
                tot += e
            inv = 1.0 / tot
            for c in range(dk):
                out[i, h, c] = 0.0
            for s in range(k):
                ws = w[i, h, s] * inv
                w[i, h, s] = ws
                j = nbr[i, s]
                for c in range(dk):
                    out[i, h, c] += ws * vh[j, h, c]


def _local_bwd_loops(dh, w, qh, kh, vh, nbr, scale, dq, dk_, dv):
    n, H, dk = qh.shape
    k = nbr.shape[1]
    dz = np.empty(k)
    for i in range(n):
        for h in range(H):
            # dw_s = dh_i . V h_j, accumulated with the dv scatter in one pass.
            tot = 0.0
            for s in range(k):
                j = nbr[i, s]
                acc = 0.0
                ws = w[i, h, s]
                for c in range(dk):
                    acc += dh[i, h, c] * vh[j, h, c]
                    dv[j, h, c] += ws * dh[i, h, c]
                dz[s] = acc
                tot += ws * acc
            for s in range(k):
                dzs = w[i, h, s] * (dz[s] - tot) * scale
                j = nbr[i, s]
                for c in range(dk):
                    dq[i, h, c] += dzs * kh[j, h, c]
                    dk_[j, h, c] += dzs * qh[i, h, c]


if HAVE_NUMBA:
    # fastmath only reassociates the short dot products here; the numpy
    # fallback agrees to ~1e-15 relative, and nothing downstream assumes a
    # particular summation order inside a head.
    _local_fwd_kernel = njit(cache=True, fastmath=True)(_local_fwd_loops)
    _local_bwd_kernel = njit(cache=True, fastmath=True)(_local_bwd_loops)
else:  # pragma: no cover - exercised only without numba
    _local_fwd_kernel = None
    _local_bwd_kernel = None


def _local_core_forward(qh, kh, vh, nbr, scale):
    """Neighbor attention inner step: returns (w, head outputs)."""
    n, H, dk = qh.shape
    k = nbr.shape[1]
    if _local_fwd_kernel is not None:
        w = np.empty((n, H, k))
        out = np.empty((n, H, dk))
        _local_fwd_kernel(qh, kh, vh, nbr, scale, w, out)
        return w, out
    kn = kh[nbr]  # (n, k, H, dk)
    z = np.einsum("ihc,ikhc->ihk", qh, kn) * scale
    w = softmax(z)
    out = np.einsum("ihk,ikhc->ihc", w, vh[nbr])
    return w, out


def _local_core_backward(dh, w, qh, kh, vh, nbr, scale):
    """Backward of the inner step: returns (dqh, dkh, dvh)."""
    if _local_bwd_kernel is not None:
        dq = np.zeros_like(qh)
        dk_ = np.zeros_like(kh)
        dv = np.zeros_like(vh)
        _local_bwd_kernel(dh, w, qh, kh, vh, nbr, scale, dq, dk_, dv)
        return dq, dk_, dv
    kn = kh[nbr]
    vn = vh[nbr]
    dw = np.einsum("ihc,ikhc->ihk", dh, vn)
    dv = np.zeros_like(vh)
    np.add.at(dv, nbr, np.einsum("ihk,ihc->ikhc", w, dh))
    dz = w * (dw - np.einsum("ihk,ihk->ih", w, dw)[:, :, None]) * scale
    dq = np.einsum("ihk,ikhc->ihc", dz, kn)
    dk_ = np.zeros_like(kh)
    np.add.at(dk_, nbr, np.einsum("ihk,ihc->ikhc", dz, qh))
    return dq, dk_, dv


def _project_heads(tokens: np.ndarray, params: AttentionLayerParams):
    n = tokens.shape[0]
    H, dk, d = params.q.shape
    qh = (tokens @ params.q.reshape(H * dk, d).T).reshape(n, H, dk)
    kh = (tokens @ params.k.reshape(H * dk, d).T).reshape(n, H, dk)
    vh = (tokens @ params.v.reshape(H * dk, d).T).reshape(n, H, dk)
    return qh, kh, vh


def _check_tokens(tokens: np.ndarray, params: AttentionLayerParams) -> np.ndarray:
    tokens = np.ascontiguousarray(tokens, dtype=np.float64)
    if tokens.ndim != 2 or tokens.shape[1] != params.dim:
        raise ValueError(
            f"tokens shape {tokens.shape} does not match layer dim {params.dim}"
        )
    return tokens


def local_attention_forward(
    tokens: np.ndarray, graph: KnnGraph, params: AttentionLayerParams
) -> tuple[np.ndarray, AttentionCache, BlockState]:
    """Neighbor-restricted multi-head attention over one bag."""
    tokens = _check_tokens(tokens, params)
    n = tokens.shape[0]
    if graph.n != n:
        raise ValueError(f"graph has {graph.n} tiles but tokens have {n} rows")
    scale = 1.0 / np.sqrt(params.head_dim)
    qh, kh, vh = _project_heads(tokens, params)
    w, hout = _local_core_forward(qh, kh, vh, graph.neighbors, scale)
    concat = hout.reshape(n, params.dim)
    out = concat @ params.o.T
    cache = AttentionCache(weights=w.transpose(0, 2, 1), graph=graph)
    state = BlockState(tokens, qh, kh, vh, w, concat, None, None, cache)
    return out, cache, state


def global_attention_forward(
    tokens: np.ndarray, params: AttentionLayerParams
) -> tuple[np.ndarray, AttentionCache, BlockState]:
    """Standard scaled dot-product self-attention over all tile pairs."""
    tokens = _check_tokens(tokens, params)
    n = tokens.shape[0]
    scale = 1.0 / np.sqrt(params.head_dim)
    qh, kh, vh = _project_heads(tokens, params)
    z = np.einsum("ihc,jhc->ihj", qh, kh) * scale
    w = softmax(z)  # (n, H, n), softmax over j
    hout = np.einsum("ihj,jhc->ihc", w, vh)
    concat = hout.reshape(n, params.dim)
    out = concat @ params.o.T
    cache = AttentionCache(weights=w.transpose(0, 2, 1), graph=None)
    state = BlockState(tokens, qh, kh, vh, w, concat, None, None, cache)
    return out, cache, state


def _attention_backward(
    d_out: np.ndarray, state: BlockState, params: AttentionLayerParams, grads: AttentionLayerParams
) -> np.ndarray:
    """Shared backward for both attention flavors; returns d_tokens.

    Writes (not accumulates) each gradient array, straight into the views,
    so no temporaries the size of a weight matrix are allocated.
    """
    n = state.tokens_in.shape[0]
    H, dk, d = params.q.shape
    scale = 1.0 / np.sqrt(dk)
    np.matmul(d_out.T, state.concat, out=grads.o)
    dh = (d_out @ params.o).reshape(n, H, dk)
    if state.cache.graph is not None:
        dq, dk_, dv = _local_core_backward(
            dh, state.w, state.qh, state.kh, state.vh,
            state.cache.graph.neighbors, scale,
        )
    else:
        w = state.w
        dw = np.einsum("ihc,jhc->ihj", dh, state.vh)
        dv = np.einsum("ihj,ihc->jhc", w, dh)
        dz = w * (dw - np.einsum("ihj,ihj->ih", w, dw)[:, :, None]) * scale
        dq = np.einsum("ihj,jhc->ihc", dz, state.kh)
        dk_ = np.einsum("ihj,ihc->jhc", dz, state.qh)
    x = state.tokens_in
    dq2 = dq.reshape(n, d)
    dk2 = dk_.reshape(n, d)
    dv2 = dv.reshape(n, d)
    np.matmul(dq2.T, x, out=grads.q.reshape(d, d))
    np.matmul(dk2.T, x, out=grads.k.reshape(d, d))
    np.matmul(dv2.T, x, out=grads.v.reshape(d, d))
    d_tokens = dq2 @ params.q.reshape(d, d)
    d_tokens += dk2 @ params.k.reshape(d, d)
    d_tokens += dv2 @ params.v.reshape(d, d)
    return d_tokens


def transformer_block(
    tokens: np.ndarray, graph: KnnGraph | None, params: AttentionLayerParams
) -> tuple[np.ndarray, AttentionCache, BlockState]:
    """Post-norm block: layer_norm(tokens + attention(tokens)).

    ``graph`` selects the attention flavor: a KnnGraph runs the local path,
    None runs global.  There is no feed-forward sublayer.
    """
    if graph is not None:
        att, cache, state = local_attention_forward(tokens, graph, params)
    else:
        att, cache, state = global_attention_forward(tokens, params)
    out, xhat, inv = layer_norm_rows(state.tokens_in + att, params.gamma, params.beta)
    state.xhat = xhat
    state.inv = inv
    return out, cache, state


def transformer_block_backward(
    dy: np.ndarray, state: BlockState, params: AttentionLayerParams, grads: AttentionLayerParams
) -> np.ndarray:
    """Backward through one block; writes into grads, returns d_tokens."""
    dr, dgamma, dbeta = layer_norm_rows_backward(dy, state.xhat, state.inv, params.gamma)
    grads.gamma[:] = dgamma
    grads.beta[:] = dbeta
    d_tokens = _attention_backward(dr, state, params, grads)
    d_tokens += dr
    return d_tokens


def attention_scores(cache: AttentionCache, graph: KnnGraph | None) -> np.ndarray:
    """Per-tile attention scores in [0, 1] from one layer's cache.

    The raw score of tile i is its incoming attention mass, summed across
    heads and across every tile whose neighborhood contains i:
    a_i = sum_h sum_{j : i in N_j} w_jih.  (The outgoing row sums are 1 per
    head by softmax normalization, so only incoming mass varies per tile.)
    Raw scores are min-max normalized; if all are equal the score is 0.5
    everywhere.
    """
    w = cache.weights  # (n, k, H) or (n, n, H)
    if graph is not None:
        if cache.graph is not graph and (
            cache.graph is None
            or not np.array_equal(cache.graph.neighbors, graph.neighbors)
        ):
            raise ValueError("cache was produced with a different graph")
        if w.shape[0] != graph.n or w.shape[1] != graph.k:
            raise ValueError(
                f"cache weights {w.shape} misaligned with graph ({graph.n}, {graph.k})"
            )
        raw = np.zeros(graph.n)
        np.add.at(raw, graph.neighbors.ravel(), w.sum(axis=2).ravel())
    else:
        if cache.graph is not None or w.shape[0] != w.shape[1]:
            raise ValueError("global scores need a global (n, n, H) cache")
        raw = w.sum(axis=2).sum(axis=0)
    lo = raw.min()
    hi = raw.max()
    if hi == lo:
        return np.full(raw.shape, 0.5)
    return (raw - lo) / (hi - lo)
