"""Dense float64 building blocks with explicit backward passes.

Matrices are plain 2-D ``numpy.ndarray`` objects. Every op checks shapes
up front (no implicit broadcasting beyond a 1 x n bias row) and raises
``NonFiniteError`` if a result contains NaN or Inf.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import NonFiniteError, NonFiniteLoss, ShapeMismatch


class Param:
    """A learnable tensor paired with its gradient buffer."""

    __slots__ = ("name", "value", "grad")

    def __init__(self, name: str, value):
        value = np.array(value, dtype=np.float64, ndmin=2)
        self.name = name
        self.value = value
        self.grad = np.zeros_like(value)

    @property
    def shape(self):
        return self.value.shape

    def zero_grad(self) -> None:
        self.grad[...] = 0.0

    def __repr__(self):
        return f"Param({self.name!r}, shape={self.value.shape})"


def check_finite(x, where: str = "tensor"):
    if not np.all(np.isfinite(x)):
        raise NonFiniteError(f"non-finite values in {where}")
    return x


def _as_matrix(x, name):
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2:
        raise ShapeMismatch(f"{name} must be 2-D, got shape {x.shape}")
    return x


def matmul(a, b):
    a = _as_matrix(a, "a")
    b = _as_matrix(b, "b")
    if a.shape[1] != b.shape[0]:
        raise ShapeMismatch(f"matmul {a.shape} x {b.shape}")
    return check_finite(a @ b, "matmul")


def matmul_backward(a, b, dc):
    """Gradients of ``C = A B``: ``dA = dC B^T``, ``dB = A^T dC``."""
    return dc @ b.T, a.T @ dc


def softmax_rows(x, scale: float = 1.0):
    x = _as_matrix(x, "x")
    z = x * scale
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def softmax_rows_backward(y, dy, scale: float = 1.0):
    """Vector-Jacobian product of ``softmax_rows`` given its output ``y``."""
    return scale * y * (dy - (y * dy).sum(axis=1, keepdims=True))


def relu(x):
    return np.maximum(x, 0.0)


def linear(x, w: Param, b: Param | None):
    x = _as_matrix(x, "x")
    if x.shape[1] != w.value.shape[0]:
        raise ShapeMismatch(f"linear input {x.shape} vs weight {w.value.shape}")
    y = x @ w.value
    if b is not None:
        y = y + b.value
    return check_finite(y, w.name)


def linear_backward(x, w: Param, b: Param | None, dy):
    """Accumulate weight/bias gradients, return the input gradient."""
    w.grad += x.T @ dy
    if b is not None:
        b.grad += dy.sum(axis=0, keepdims=True)
    return dy @ w.value.T


def xavier_uniform(rng, fan_in: int, fan_out: int):
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=(fan_in, fan_out))


def dropout_mask(rng, shape, rate: float):
    """Inverted-dropout mask (entries 0 or 1/(1-rate)); None when disabled."""
    if rng is None or rate <= 0.0:
        return None
    keep = rng.random(shape) >= rate
    return keep / (1.0 - rate)


@dataclass
class FFNParams:
    w1: Param
    b1: Param
    w2: Param
    b2: Param

    @classmethod
    def init(cls, prefix: str, dim: int, hidden: int, rng) -> "FFNParams":
        return cls(
            Param(f"{prefix}.w1", xavier_uniform(rng, dim, hidden)),
            Param(f"{prefix}.b1", np.zeros((1, hidden))),
            Param(f"{prefix}.w2", xavier_uniform(rng, hidden, dim)),
            Param(f"{prefix}.b2", np.zeros((1, dim))),
        )

    def params(self) -> list[Param]:
        return [self.w1, self.b1, self.w2, self.b2]


def ffn_forward(x, p: FFNParams, mask=None):
    """Linear -> ReLU -> (dropout) -> Linear. Returns output and a cache."""
    pre = linear(x, p.w1, p.b1)
    hidden = relu(pre)
    if mask is not None:
        hidden = hidden * mask
    out = linear(hidden, p.w2, p.b2)
    return out, (x, pre, hidden, mask)


def ffn_backward(dy, cache, p: FFNParams):
    x, pre, hidden, mask = cache
    dh = linear_backward(hidden, p.w2, p.b2, dy)
    if mask is not None:
        dh = dh * mask
    dh = dh * (pre > 0)
    return linear_backward(x, p.w1, p.b1, dh)


def grad_check(fn, params, max_probes: int | None = None, h: float = 1e-4, seed: int = 0) -> float:
    """Compare analytic gradients with central differences.

    ``fn()`` must return the scalar loss and leave analytic gradients in
    ``param.grad`` (it is responsible for zeroing them first). At most
    ``max_probes`` random coordinates are probed per tensor; all of them
    when None. Returns ``max |analytic - numeric| / max(1, |numeric|)``.
    """
    params = list(params)
    base = fn()
    if not np.isfinite(base):
        raise NonFiniteLoss(f"loss is {base}")
    analytic = [p.grad.copy() for p in params]
    rng = np.random.default_rng(seed)
    worst = 0.0
    for p, g in zip(params, analytic):
        flat = p.value.reshape(-1)
        coords = np.arange(flat.size)
        if max_probes is not None and flat.size > max_probes:
            coords = rng.choice(flat.size, size=max_probes, replace=False)
        for k in coords:
            old = flat[k]
            flat[k] = old + h
            up = fn()
            flat[k] = old - h
            down = fn()
            flat[k] = old
            if not (np.isfinite(up) and np.isfinite(down)):
                raise NonFiniteLoss(f"loss non-finite while probing {p.name}[{k}]")
            numeric = (up - down) / (2.0 * h)
            err = abs(g.reshape(-1)[k] - numeric) / max(1.0, abs(numeric))
            worst = max(worst, err)
    fn()  # leave grads consistent with restored values
    return worst
