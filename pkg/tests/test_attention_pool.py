import math

import numpy as np
import pytest

from saban import attention_pool as ap
from saban.errors import LengthMismatch, ShapeMismatch
from saban.tensor_core import ffn_forward, grad_check


@pytest.fixture
def params(rng):
    return ap.PoolParams.init("pool", 6, 12, rng)


def _reference_pool(H, p):
    """Direct evaluation: K = H W_K, V = H W_V, alpha = softmax(q K^T / sqrt(d))."""
    K = H @ p.w_k.value
    V = H @ p.w_v.value
    s = (p.q.value @ K.T) / math.sqrt(H.shape[1])
    e = np.exp(s - s.max())
    alpha = e / e.sum()
    out, _ = ffn_forward(alpha @ V + p.q.value, p.ffn)
    return out, alpha


def test_matches_direct_formula(rng, params):
    for _ in range(20):
        H = rng.standard_normal((int(rng.integers(1, 9)), 6))
        res = ap.pool_forward(H, params)
        h_ref, a_ref = _reference_pool(H, params)
        np.testing.assert_allclose(res.h, h_ref, rtol=1e-12, atol=1e-12)
        np.testing.assert_allclose(res.alpha, a_ref, rtol=1e-12, atol=1e-14)


def test_single_token(rng, params):
    H = rng.standard_normal((1, 6))
    res = ap.pool_forward(H, params)
    assert res.alpha.tolist() == [[1.0]]
    out, _ = ffn_forward(H @ params.w_v.value + params.q.value, params.ffn)
    np.testing.assert_allclose(res.h, out, rtol=1e-13)


def test_identical_rows_give_uniform_alpha(rng, params):
    H = np.tile(rng.standard_normal((1, 6)), (4, 1))
    np.testing.assert_allclose(ap.pool_forward(H, params).alpha, 0.25, atol=1e-15)


def test_alpha_is_a_distribution(rng, params):
    res = ap.pool_forward(rng.standard_normal((11, 6)) * 10, params)
    assert abs(res.alpha.sum() - 1) < 1e-12
    assert (res.alpha > 0).all() and (res.alpha < 1).all()


def test_permutation_invariance_exact(rng, params):
    H = rng.standard_normal((7, 6))
    base = ap.pool_forward(H, params)
    for _ in range(50):
        perm = rng.permutation(7)
        res = ap.pool_forward(H[perm], params)
        assert np.array_equal(res.h, base.h)
        assert np.array_equal(res.alpha[0], base.alpha[0, perm])


def test_mean_mode_is_row_mean_through_same_ffn(rng, params):
    H = rng.standard_normal((5, 6))
    res = ap.pool_forward(H, params, mode="mean")
    out, _ = ffn_forward(H.mean(axis=0, keepdims=True), params.ffn)
    np.testing.assert_allclose(res.h, out, rtol=1e-13, atol=1e-15)
    np.testing.assert_allclose(res.alpha, 0.2)


def test_shape_errors(params):
    with pytest.raises(ShapeMismatch):
        ap.pool_forward(np.ones((3, 5)), params)
    with pytest.raises(ShapeMismatch):
        ap.pool_forward(np.ones((0, 6)), params)


def test_batch_matches_single(rng, params):
    mats = [rng.standard_normal((n, 6)) for n in (1, 4, 3)]
    offs = np.r_[0, np.cumsum([m.shape[0] for m in mats])]
    out, alpha, _ = ap.pool_batch_forward(np.vstack(mats), offs, params)
    for b, m in enumerate(mats):
        single = ap.pool_batch_forward(m, [0, m.shape[0]], params)
        np.testing.assert_allclose(out[b], single[0][0], rtol=1e-13, atol=1e-15)
        np.testing.assert_allclose(alpha[offs[b]:offs[b + 1]], single[1], rtol=1e-13)


@pytest.mark.parametrize("mode", ["attention", "mean"])
def test_gradient(rng, params, mode):
    mats = [rng.standard_normal((n, 6)) for n in (3, 2)]
    offs = np.r_[0, np.cumsum([m.shape[0] for m in mats])]
    H = np.vstack(mats)
    w = rng.standard_normal((2, 6))
    plist = params.params()

    def loss():
        for p in plist:
            p.zero_grad()
        out, _, cache = ap.pool_batch_forward(H, offs, params, mode)
        ap.pool_batch_backward(w, cache, params)
        return float((out * w).sum())

    assert grad_check(loss, plist) < 1e-4


def test_export_rows():
    rows = ap.export_attention(np.full((1, 4), 0.25), ["a", "b", "c", "d"])
    assert rows == [(0, "a", 0.25), (1, "b", 0.25), (2, "c", 0.25), (3, "d", 0.25)]
    assert ap.export_attention([[1.0]], ["x"]) == [(0, "x", 1.0)]
    with pytest.raises(LengthMismatch):
        ap.export_attention([[0.5, 0.5]], ["x"])


def test_export_file_sums_to_one(tmp_path, rng, params):
    res = ap.pool_forward(rng.standard_normal((9, 6)), params)
    path = tmp_path / "alpha.tsv"
    ap.write_attention_tsv(path, ap.export_attention(res.alpha, [f"t{i}" for i in range(9)]))
    lines = path.read_text().splitlines()
    assert lines[0] == "position\ttoken_label\tweight"
    weights = [float(line.split("\t")[2]) for line in lines[1:]]
    assert weights == res.alpha[0].tolist()
    assert abs(math.fsum(weights) - 1) < 1e-12
