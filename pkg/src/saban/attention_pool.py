"""Class-token attention pooling (the learned aggregation layer).

For token embeddings ``H`` (n x d) and a learnable query ``q`` (1 x d)::

    K = H W_K,  V = H W_V
    alpha = softmax(q K^T / sqrt(d))
    z = alpha V
    h = FFN(z + q)

Batches are ragged: all token rows are stacked into one matrix and
``offsets`` marks where each sequence starts. ``q K^T`` is evaluated as
``H (W_K q^T)`` and ``alpha V`` as ``(alpha H) W_V``; both are the same
products with far fewer flops for long sequences.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import LengthMismatch, ShapeMismatch
from .tensor_core import FFNParams, Param, check_finite, ffn_backward, ffn_forward, xavier_uniform


@dataclass
class PoolParams:
    q: Param
    w_k: Param
    w_v: Param
    ffn: FFNParams

    @classmethod
    def init(cls, prefix: str, dim: int, ffn_hidden: int, rng) -> "PoolParams":
        return cls(
            Param(f"{prefix}.q", rng.normal(0.0, 0.02, size=(1, dim))),
            Param(f"{prefix}.w_k", xavier_uniform(rng, dim, dim)),
            Param(f"{prefix}.w_v", xavier_uniform(rng, dim, dim)),
            FFNParams.init(f"{prefix}.ffn", dim, ffn_hidden, rng),
        )

    @property
    def dim(self) -> int:
        return self.q.value.shape[1]

    def params(self) -> list[Param]:
        return [self.q, self.w_k, self.w_v] + self.ffn.params()


@dataclass
class PoolOutput:
    h: np.ndarray  # 1 x d
    alpha: np.ndarray  # 1 x n


def canonical_order(H) -> np.ndarray:
    """Row order determined by row contents alone (bytewise).

    Sorting rows this way before any reduction makes results bit-identical
    under permutations of the input rows.
    """
    H = np.ascontiguousarray(H, dtype=np.float64)
    keys = H.view(np.dtype((np.void, H.dtype.itemsize * H.shape[1]))).ravel()
    return np.argsort(keys, kind="stable")


def segment_ids(offsets) -> np.ndarray:
    return np.repeat(np.arange(len(offsets) - 1), np.diff(offsets))


def pool_batch_forward(H, offsets, p: PoolParams, mode: str = "attention", ffn_mask=None):
    """Pool every segment of ``H``. Returns (B x d outputs, alpha per row, cache).

    ``mode="mean"`` replaces attention with the unweighted row mean (the
    no-aggregation ablation) and keeps the same FFN.
    """
    H = np.asarray(H, dtype=np.float64)
    d = p.dim
    if H.ndim != 2 or H.shape[1] != d:
        raise ShapeMismatch(f"token matrix {H.shape} vs pooling dim {d}")
    offsets = np.asarray(offsets, dtype=np.int64)
    starts = offsets[:-1]
    counts = np.diff(offsets)
    if (counts < 1).any():
        raise ShapeMismatch("every sequence needs at least one token")
    seg = segment_ids(offsets)

    if mode == "attention":
        kq = p.w_k.value @ p.q.value.T  # d x 1
        scores = (H @ kq)[:, 0] / math.sqrt(d)
        smax = np.maximum.reduceat(scores, starts)
        e = np.exp(scores - smax[seg])
        alpha = e / np.add.reduceat(e, starts)[seg]
        pooled_h = np.add.reduceat(alpha[:, None] * H, starts, axis=0)  # B x d
        z = pooled_h @ p.w_v.value
        u = z + p.q.value
    elif mode == "mean":
        alpha = 1.0 / counts[seg]
        pooled_h = np.add.reduceat(H, starts, axis=0) / counts[:, None]
        kq = None
        u = pooled_h
    else:
        raise ValueError(f"unknown pooling mode {mode!r}")
    out, ffn_cache = ffn_forward(u, p.ffn, ffn_mask)
    check_finite(out, "pooled embedding")
    cache = (mode, H, offsets, seg, kq, alpha, pooled_h, ffn_cache)
    return out, alpha, cache


def pool_batch_backward(dout, cache, p: PoolParams) -> None:
    """Accumulate parameter gradients (token embeddings are frozen inputs)."""
    mode, H, offsets, seg, kq, alpha, pooled_h, ffn_cache = cache
    du = ffn_backward(dout, ffn_cache, p.ffn)
    if mode == "mean":
        return
    d = p.dim
    starts = offsets[:-1]
    p.q.grad += du.sum(axis=0, keepdims=True)
    # z = pooled_h W_V
    p.w_v.grad += pooled_h.T @ du
    dpooled = du @ p.w_v.value.T  # B x d
    dalpha = np.einsum("ij,ij->i", H, dpooled[seg])
    weighted = np.add.reduceat(alpha * dalpha, starts)
    dscore = alpha * (dalpha - weighted[seg]) / math.sqrt(d)
    dkq = H.T @ dscore[:, None]  # d x 1
    p.w_k.grad += dkq @ p.q.value
    p.q.grad += (p.w_k.value.T @ dkq).T


def pool_forward(H, p: PoolParams, mode: str = "attention") -> PoolOutput:
    """Pool a single sequence. Rows are processed in canonical order, so the
    output is exactly invariant to row permutations; alpha is reported in the
    caller's row order."""
    H = np.asarray(H, dtype=np.float64)
    if H.ndim != 2 or H.shape[0] < 1:
        raise ShapeMismatch(f"expected n x d token matrix, got {H.shape}")
    order = canonical_order(H)
    out, alpha, _ = pool_batch_forward(H[order], [0, H.shape[0]], p, mode)
    restored = np.empty_like(alpha)
    restored[order] = alpha
    return PoolOutput(out, restored[None, :])


def export_attention(alpha, token_labels) -> list[tuple[int, str, float]]:
    weights = np.asarray(alpha, dtype=np.float64).reshape(-1)
    labels = list(token_labels)
    if len(labels) != weights.shape[0]:
        raise LengthMismatch(f"{len(labels)} labels for {weights.shape[0]} weights")
    return [(i, str(label), float(w)) for i, (label, w) in enumerate(zip(labels, weights))]


def write_attention_tsv(path, rows) -> None:
    with open(path, "w") as fh:
        fh.write("position\ttoken_label\tweight\n")
        for pos, label, weight in rows:
            fh.write(f"{pos}\t{label}\t{weight!r}\n")
