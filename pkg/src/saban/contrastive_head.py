"""Co-embedding projections and the symmetric InfoNCE objective."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ShapeMismatch, ZeroVector
from .tensor_core import Param, linear, linear_backward, xavier_uniform

TEMPERATURE_INIT = 1.0 / 0.07
TEMPERATURE_MIN = 1.0
TEMPERATURE_MAX = 100.0


@dataclass
class ProjParams:
    w_d: Param
    b_d: Param
    w_t: Param
    b_t: Param
    log_scale: Param  # similarity scale = clip(exp(log_scale), 1, 100)

    @classmethod
    def init(cls, d_drug: int, d_protein: int, latent: int, rng,
             scale_init: float = TEMPERATURE_INIT) -> "ProjParams":
        return cls(
            Param("proj.w_d", xavier_uniform(rng, d_drug, latent)),
            Param("proj.b_d", np.zeros((1, latent))),
            Param("proj.w_t", xavier_uniform(rng, d_protein, latent)),
            Param("proj.b_t", np.zeros((1, latent))),
            Param("proj.log_scale", [[math.log(scale_init)]]),
        )

    def params(self) -> list[Param]:
        return [self.w_d, self.b_d, self.w_t, self.b_t, self.log_scale]

    def scale(self) -> float:
        return float(np.clip(math.exp(self.log_scale.value[0, 0]), TEMPERATURE_MIN, TEMPERATURE_MAX))

    def scale_grad_factor(self) -> float:
        """d scale / d log_scale (zero while clamped)."""
        raw = math.exp(self.log_scale.value[0, 0])
        return raw if TEMPERATURE_MIN < raw < TEMPERATURE_MAX else 0.0


def normalize_rows(z):
    norms = np.linalg.norm(z, axis=1, keepdims=True)
    if (norms == 0.0).any():
        raise ZeroVector("projection produced an exactly zero vector")
    return z / norms, norms


def normalize_rows_backward(zhat, norms, dzhat):
    return (dzhat - zhat * (zhat * dzhat).sum(axis=1, keepdims=True)) / norms


def project_normalize(h, w: Param, b: Param):
    """Linear map followed by L2 normalisation of every row.

    Returns ``(z_hat, cache)``; pass the cache to ``project_normalize_backward``.
    """
    z = linear(h, w, b)
    zhat, norms = normalize_rows(z)
    return zhat, (np.asarray(h, dtype=np.float64), zhat, norms)


def project_normalize_backward(dzhat, cache, w: Param, b: Param):
    h, zhat, norms = cache
    dz = normalize_rows_backward(zhat, norms, dzhat)
    return linear_backward(h, w, b, dz)


def similarity_matrix(zd_hat, zt_hat):
    zd_hat = np.asarray(zd_hat, dtype=np.float64)
    zt_hat = np.asarray(zt_hat, dtype=np.float64)
    if zd_hat.ndim != 2 or zt_hat.ndim != 2 or zd_hat.shape != zt_hat.shape:
        raise ShapeMismatch(f"co-embedding batches {zd_hat.shape} vs {zt_hat.shape}")
    return zd_hat @ zt_hat.T


def _log_softmax(x, axis):
    m = x.max(axis=axis, keepdims=True)
    shifted = x - m
    return shifted - np.log(np.exp(shifted).sum(axis=axis, keepdims=True))


@dataclass
class InfoNCEResult:
    loss: float
    grad_s: np.ndarray  # dL/dS
    grad_scale: float  # dL/d(scale)
    row_term: np.ndarray  # drug->target part of dL/d(scale * S)
    col_term: np.ndarray  # target->drug part of dL/d(scale * S)


def info_nce(S, scale: float, anchors=None) -> InfoNCEResult:
    """Symmetric InfoNCE over an N x N similarity matrix.

    Diagonal entries are the matched pairs. ``anchors`` (boolean, length N)
    restricts which rows/columns contribute a log-probability term; the
    softmax denominators always span the whole batch. With every entry
    anchored this is ``-(1/2N) sum_i [log p(t=i|d=i) + log p(d=i|t=i)]``.
    """
    S = np.asarray(S, dtype=np.float64)
    if S.ndim != 2 or S.shape[0] != S.shape[1]:
        raise ShapeMismatch(f"similarity matrix must be square, got {S.shape}")
    n = S.shape[0]
    if n < 2:
        raise ShapeMismatch("InfoNCE needs at least two pairs")
    if scale <= 0:
        raise ValueError("similarity scale must be positive")
    a = np.ones(n, dtype=bool) if anchors is None else np.asarray(anchors, dtype=bool)
    n_anchor = int(a.sum())
    if n_anchor == 0:
        zero = np.zeros_like(S)
        return InfoNCEResult(0.0, zero, 0.0, zero, zero)
    X = scale * S
    log_row = _log_softmax(X, axis=1)
    log_col = _log_softmax(X, axis=0)
    diag = np.arange(n)
    loss = -(log_row[diag, diag][a].sum() + log_col[diag, diag][a].sum()) / (2 * n_anchor)
    eye = np.eye(n)
    row_term = (np.exp(log_row) - eye) * a[:, None] / (2 * n_anchor)
    col_term = (np.exp(log_col) - eye) * a[None, :] / (2 * n_anchor)
    dX = row_term + col_term
    return InfoNCEResult(float(loss), scale * dX, float((dX * S).sum()), row_term, col_term)


def info_nce_loss(S, alpha_scale: float):
    """Loss and its gradient with respect to ``S``."""
    res = info_nce(S, alpha_scale)
    return res.loss, res.grad_s


def score_pair(h_drug, h_protein, params: ProjParams) -> float:
    """Cosine similarity of the projected, normalised co-embeddings."""
    zd, _ = project_normalize(np.atleast_2d(h_drug), params.w_d, params.b_d)
    zt, _ = project_normalize(np.atleast_2d(h_protein), params.w_t, params.b_t)
    return float(np.clip(similarity_matrix(zd, zt)[0, 0], -1.0, 1.0))
