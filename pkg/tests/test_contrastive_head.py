import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from saban import contrastive_head as ch
from saban.errors import ShapeMismatch, ZeroVector
from saban.tensor_core import Param, grad_check


def _unit_rows(rng, n, d):
    z = rng.standard_normal((n, d))
    return z / np.linalg.norm(z, axis=1, keepdims=True)


def test_normalize_345():
    w = Param("w", np.eye(5))
    b = Param("b", np.zeros((1, 5)))
    z, _ = ch.project_normalize(np.array([[3.0, 4.0, 0, 0, 0]]), w, b)
    np.testing.assert_allclose(z, [[0.6, 0.8, 0, 0, 0]], rtol=0, atol=1e-16)
    again, _ = ch.project_normalize(z, w, b)
    np.testing.assert_allclose(again, z, rtol=0, atol=1e-16)


def test_zero_vector():
    with pytest.raises(ZeroVector):
        ch.project_normalize(np.ones((1, 3)), Param("w", np.zeros((3, 4))), Param("b", np.zeros((1, 4))))


def test_projection_rows_are_unit(rng):
    p = ch.ProjParams.init(6, 8, 16, rng)
    z, _ = ch.project_normalize(rng.standard_normal((10, 6)), p.w_d, p.b_d)
    assert np.abs(np.linalg.norm(z, axis=1) - 1).max() < 1e-9


def test_project_normalize_gradient(rng):
    p = ch.ProjParams.init(5, 5, 4, rng)
    h = rng.standard_normal((3, 5))
    w = rng.standard_normal((3, 4))

    def loss():
        p.w_d.zero_grad()
        p.b_d.zero_grad()
        z, cache = ch.project_normalize(h, p.w_d, p.b_d)
        ch.project_normalize_backward(w, cache, p.w_d, p.b_d)
        return float((z * w).sum())

    assert grad_check(loss, [p.w_d, p.b_d]) < 1e-6


def test_similarity_examples(rng):
    z = _unit_rows(rng, 4, 6)
    np.testing.assert_allclose(np.diag(ch.similarity_matrix(z, z)), 1.0, atol=1e-15)
    assert not ch.similarity_matrix(np.eye(3), np.eye(3)[[1, 2, 0]]).diagonal().any()
    with pytest.raises(ShapeMismatch):
        ch.similarity_matrix(z, z[:3])


def test_similarity_matches_double_loop(rng):
    for _ in range(100):
        zd, zt = _unit_rows(rng, 8, 5), _unit_rows(rng, 8, 5)
        S = ch.similarity_matrix(zd, zt)
        ref = np.array([[math.fsum(zd[i, k] * zt[j, k] for k in range(5)) for j in range(8)]
                        for i in range(8)])
        assert np.abs(S - ref).max() <= 1e-10
        assert np.abs(S).max() <= 1 + 1e-12


@pytest.mark.parametrize("n", [2, 4, 64])
def test_uniform_similarity_gives_log_n(n):
    for value in (0.0, 0.3, -1.0):
        loss, _ = ch.info_nce_loss(np.full((n, n), value), 14.3)
        assert abs(loss - math.log(n)) < 1e-12


def test_two_pair_hand_value():
    loss, _ = ch.info_nce_loss(np.array([[1.0, -1.0], [-1.0, 1.0]]), 1.0)
    expected = -math.log(math.e / (math.e + math.exp(-1)))
    assert abs(loss - expected) < 1e-15
    assert abs(loss - 0.126928) < 1e-6


def test_gradient_matches_finite_differences(rng):
    S = Param("S", rng.uniform(-1, 1, (5, 5)))

    def loss():
        value, grad = ch.info_nce_loss(S.value, 3.0)
        S.grad[...] = grad
        return value

    assert grad_check(loss, [S], h=1e-5) < 1e-6


def test_scale_gradient(rng):
    S = rng.uniform(-1, 1, (4, 4))
    res = ch.info_nce(S, 5.0)
    h = 1e-6
    num = (ch.info_nce(S, 5.0 + h).loss - ch.info_nce(S, 5.0 - h).loss) / (2 * h)
    assert abs(res.grad_scale - num) < 1e-7


def test_anchor_subset(rng):
    S = rng.uniform(-1, 1, (5, 5))
    full = ch.info_nce(S, 2.0)
    same = ch.info_nce(S, 2.0, anchors=np.ones(5, bool))
    assert full.loss == same.loss
    none = ch.info_nce(S, 2.0, anchors=np.zeros(5, bool))
    assert none.loss == 0.0 and not none.grad_s.any()
    a = np.array([True, False, True, False, False])
    part = ch.info_nce(S, 2.0, anchors=a)
    X = 2.0 * S
    lr = X - np.log(np.exp(X).sum(axis=1, keepdims=True))
    lc = X - np.log(np.exp(X).sum(axis=0, keepdims=True))
    expected = -(lr[0, 0] + lr[2, 2] + lc[0, 0] + lc[2, 2]) / 4
    assert abs(part.loss - expected) < 1e-12


def test_errors():
    with pytest.raises(ShapeMismatch):
        ch.info_nce(np.zeros((1, 1)), 1.0)
    with pytest.raises(ShapeMismatch):
        ch.info_nce(np.zeros((2, 3)), 1.0)
    with pytest.raises(ValueError):
        ch.info_nce(np.zeros((2, 2)), 0.0)


square = st.integers(2, 7).flatmap(
    lambda n: arrays(np.float64, (n, n), elements=st.floats(-1, 1)))


@given(square, st.floats(1, 100))
def test_transpose_symmetry(S, scale):
    assert ch.info_nce(S, scale).loss == pytest.approx(ch.info_nce(S.T, scale).loss, abs=1e-12)


@given(square, st.floats(-3, 3))
def test_shift_invariance(S, c):
    a = ch.info_nce(S, 4.0).loss
    b = ch.info_nce(S + c, 4.0).loss
    assert abs(a - b) < 1e-10


@given(square, st.floats(1, 100))
def test_bounds_and_conservation(S, scale):
    res = ch.info_nce(S, scale)
    assert res.loss >= 0
    assert np.abs(res.row_term.sum(axis=1)).max() < 1e-12
    assert np.abs(res.col_term.sum(axis=0)).max() < 1e-12


def test_loss_vanishes_with_diagonal_dominance():
    S = 2 * np.eye(4) - 1
    assert ch.info_nce(S, 100.0).loss < 1e-80


def test_temperature_parameterisation(rng):
    p = ch.ProjParams.init(3, 3, 4, rng)
    assert abs(p.scale() - 1 / 0.07) < 1e-12
    p.log_scale.value[...] = 10.0
    assert p.scale() == 100.0 and p.scale_grad_factor() == 0.0
    p.log_scale.value[...] = -5.0
    assert p.scale() == 1.0


def test_score_pair_examples():
    eye = ch.ProjParams(Param("w_d", np.eye(3)), Param("b_d", np.zeros((1, 3))),
                        Param("w_t", np.eye(3)), Param("b_t", np.zeros((1, 3))), Param("t", [[0.0]]))
    h = np.array([0.3, -1.0, 2.0])
    assert ch.score_pair(h, h, eye) == 1.0
    assert ch.score_pair(h, -h, eye) == -1.0
    g = np.array([1.0, 0.5, 0.0])
    zd, _ = ch.project_normalize(h[None], eye.w_d, eye.b_d)
    zt, _ = ch.project_normalize(g[None], eye.w_t, eye.b_t)
    assert ch.score_pair(h, g, eye) == ch.similarity_matrix(zd, zt)[0, 0]
