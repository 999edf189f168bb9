"""Multi-glimpse bilinear attention fusion and the interaction MLP head.

Per glimpse ``g`` with projections ``U_g`` (d_drug x r) and ``V_g``
(d_protein x r)::

    D = relu(H_d U_g),  T = relu(H_t V_g)
    A = softmax(D T^T)            # row-wise over protein tokens by default
    f_g = sum_i D_i * (A T)_i     # elementwise product, summed over drug tokens

``f`` concatenates the glimpses and an MLP maps it to a logit. All glimpse
projections are stored side by side in one matrix so a batch needs a
single matmul per modality; the fusion itself runs in ``kernels``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernels
from .attention_pool import canonical_order
from .errors import ShapeMismatch
from .tensor_core import Param, check_finite, linear, linear_backward, relu, xavier_uniform

SOFTMAX_AXES = ("rows", "flat")


@dataclass
class MLPParams:
    w1: Param
    b1: Param
    w2: Param
    b2: Param

    @classmethod
    def init(cls, prefix: str, in_dim: int, hidden: int, rng) -> "MLPParams":
        return cls(
            Param(f"{prefix}.w1", xavier_uniform(rng, in_dim, hidden)),
            Param(f"{prefix}.b1", np.zeros((1, hidden))),
            Param(f"{prefix}.w2", xavier_uniform(rng, hidden, 1)),
            Param(f"{prefix}.b2", np.zeros((1, 1))),
        )

    def params(self) -> list[Param]:
        return [self.w1, self.b1, self.w2, self.b2]


@dataclass
class BanParams:
    u: Param  # d_drug x (G * r)
    v: Param  # d_protein x (G * r)
    glimpses: int

    @classmethod
    def init(cls, d_drug: int, d_protein: int, rank: int, glimpses: int, rng) -> "BanParams":
        if glimpses < 1 or rank < 1:
            raise ValueError("glimpses and rank must be >= 1")
        u = np.hstack([xavier_uniform(rng, d_drug, rank) for _ in range(glimpses)])
        v = np.hstack([xavier_uniform(rng, d_protein, rank) for _ in range(glimpses)])
        return cls(Param("ban.u", u), Param("ban.v", v), glimpses)

    @property
    def rank(self) -> int:
        return self.u.value.shape[1] // self.glimpses

    @property
    def width(self) -> int:
        return self.u.value.shape[1]

    def params(self) -> list[Param]:
        return [self.u, self.v]

    def glimpse(self, g: int) -> "BanParams":
        """A single-glimpse view sharing no storage with ``self``."""
        c = slice(g * self.rank, (g + 1) * self.rank)
        return BanParams(Param("ban.u", self.u.value[:, c]), Param("ban.v", self.v.value[:, c]), 1)


@dataclass
class BanOutput:
    f: np.ndarray  # 1 x (G r)
    maps: np.ndarray  # G x n_d x n_t
    prob: float | None = None


def ban_batch_forward(Hd, d_off, Ht, t_off, p: BanParams, softmax_axis: str = "rows"):
    if softmax_axis not in SOFTMAX_AXES:
        raise ValueError(f"softmax_axis must be one of {SOFTMAX_AXES}")
    Hd = np.asarray(Hd, dtype=np.float64)
    Ht = np.asarray(Ht, dtype=np.float64)
    if Hd.shape[1] != p.u.value.shape[0] or Ht.shape[1] != p.v.value.shape[0]:
        raise ShapeMismatch(f"BAN inputs {Hd.shape}, {Ht.shape} vs projections "
                            f"{p.u.value.shape}, {p.v.value.shape}")
    d_off = np.asarray(d_off, dtype=np.int64)
    t_off = np.asarray(t_off, dtype=np.int64)
    if len(d_off) != len(t_off):
        raise ShapeMismatch("drug and protein batches differ in size")
    if (np.diff(d_off) < 1).any() or (np.diff(t_off) < 1).any():
        raise ShapeMismatch("every sequence needs at least one token")
    pre_d = Hd @ p.u.value
    pre_t = Ht @ p.v.value
    D = relu(pre_d)
    T = relu(pre_t)
    f, A, a_off = kernels.ban_forward(D, T, d_off, t_off, p.glimpses, softmax_axis == "flat")
    check_finite(f, "BAN fusion")
    cache = (Hd, Ht, d_off, t_off, pre_d, pre_t, D, T, A, a_off, softmax_axis)
    return f, cache


def ban_batch_backward(df, cache, p: BanParams) -> None:
    Hd, Ht, d_off, t_off, pre_d, pre_t, D, T, A, a_off, softmax_axis = cache
    dD, dT = kernels.ban_backward(D, T, d_off, t_off, p.glimpses, softmax_axis == "flat",
                                  A, a_off, np.ascontiguousarray(df))
    p.u.grad += Hd.T @ (dD * (pre_d > 0))
    p.v.grad += Ht.T @ (dT * (pre_t > 0))


def attention_maps(cache, pair: int, glimpses: int) -> np.ndarray:
    _, _, d_off, t_off, *_rest, A, a_off, _ax = cache
    nd = d_off[pair + 1] - d_off[pair]
    nt = t_off[pair + 1] - t_off[pair]
    return A[a_off[pair]:a_off[pair + 1]].reshape(glimpses, nd, nt).copy()


def ban_forward(H_d, H_t, p: BanParams, mlp: MLPParams | None = None,
                softmax_axis: str = "rows") -> BanOutput:
    """Fuse one drug/protein pair. Rows are reduced in canonical order, so
    ``f`` is exactly invariant to permutations of either token axis; the
    attention maps are returned in the caller's row/column order."""
    H_d = np.asarray(H_d, dtype=np.float64)
    H_t = np.asarray(H_t, dtype=np.float64)
    if H_d.ndim != 2 or H_t.ndim != 2 or H_d.shape[0] < 1 or H_t.shape[0] < 1:
        raise ShapeMismatch("BAN expects non-empty n x d token matrices")
    od, ot = canonical_order(H_d), canonical_order(H_t)
    f, cache = ban_batch_forward(H_d[od], [0, len(od)], H_t[ot], [0, len(ot)], p, softmax_axis)
    sorted_maps = attention_maps(cache, 0, p.glimpses)
    maps = np.empty_like(sorted_maps)
    maps[:, od[:, None], ot[None, :]] = sorted_maps
    prob = predict_probability(f, mlp) if mlp is not None else None
    return BanOutput(f, maps, prob)


def mlp_forward(x, p: MLPParams, mask=None):
    pre = linear(x, p.w1, p.b1)
    hidden = relu(pre)
    if mask is not None:
        hidden = hidden * mask
    logits = linear(hidden, p.w2, p.b2)[:, 0]
    return logits, (x, pre, hidden, mask)


def mlp_backward(dlogits, cache, p: MLPParams):
    x, pre, hidden, mask = cache
    dh = linear_backward(hidden, p.w2, p.b2, np.asarray(dlogits, dtype=np.float64)[:, None])
    if mask is not None:
        dh = dh * mask
    dh = dh * (pre > 0)
    return linear_backward(x, p.w1, p.b1, dh)


def sigmoid(z):
    z = np.asarray(z, dtype=np.float64)
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def predict_probability(f, mlp: MLPParams):
    """Interaction probability for each row of ``f`` (scalar for one row)."""
    logits, _ = mlp_forward(np.atleast_2d(f), mlp)
    probs = sigmoid(logits)
    return float(probs[0]) if probs.shape[0] == 1 else probs


def bce_with_logits(logits, labels):
    """Mean binary cross-entropy and its gradient ``(p - y) / N`` at the logits."""
    z = np.asarray(logits, dtype=np.float64)
    y = np.asarray(labels, dtype=np.float64)
    if z.shape != y.shape:
        raise ShapeMismatch(f"logits {z.shape} vs labels {y.shape}")
    # softplus(z) - y z, evaluated without overflow
    per = np.maximum(z, 0.0) - y * z + np.log1p(np.exp(-np.abs(z)))
    return float(per.mean()), (sigmoid(z) - y) / z.shape[0]
