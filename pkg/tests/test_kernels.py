import numpy as np
import pytest

from saban import _kernels_py, kernels

backends = kernels.available_backends()
compiled = pytest.mark.skipif("cython" not in backends, reason="compiled kernels not built")


def test_backend_selected():
    assert kernels.BACKEND in backends


def _ragged(rng, width):
    nd = rng.integers(1, 5, size=4)
    nt = rng.integers(1, 7, size=4)
    d_off = np.r_[0, np.cumsum(nd)].astype(np.int64)
    t_off = np.r_[0, np.cumsum(nt)].astype(np.int64)
    D = np.abs(rng.standard_normal((d_off[-1], width)))
    T = np.abs(rng.standard_normal((t_off[-1], width)))
    return D, T, d_off, t_off


@compiled
@pytest.mark.parametrize("flat", [False, True])
def test_ban_parity(rng, flat):
    fast = backends["cython"]
    for _ in range(20):
        D, T, d_off, t_off = _ragged(rng, 12)
        f1, A1, o1 = fast.ban_forward(D, T, d_off, t_off, 3, flat)
        f2, A2, o2 = _kernels_py.ban_forward(D, T, d_off, t_off, 3, flat)
        assert np.array_equal(o1, o2)
        np.testing.assert_allclose(f1, f2, rtol=1e-12, atol=1e-13)
        np.testing.assert_allclose(A1, A2, rtol=1e-12, atol=1e-15)
        df = rng.standard_normal(f1.shape)
        g1 = fast.ban_backward(D, T, d_off, t_off, 3, flat, A1, o1, df)
        g2 = _kernels_py.ban_backward(D, T, d_off, t_off, 3, flat, A2, o2, df)
        for a, b in zip(g1, g2):
            np.testing.assert_allclose(a, b, rtol=1e-11, atol=1e-12)


@compiled
def test_synth_bit_identical(rng):
    ids = rng.integers(0, 500, size=40)
    for dim in (1, 7, 64):
        assert np.array_equal(backends["cython"].synth_rows(ids, dim, 99), _kernels_py.synth_rows(ids, dim, 99))


@compiled
def test_thread_count_does_not_change_results(rng, monkeypatch):
    fast = backends["cython"]
    D, T, d_off, t_off = _ragged(rng, 8)
    monkeypatch.setenv("SABAN_THREADS", "1")
    one = fast.ban_forward(D, T, d_off, t_off, 2, False)
    monkeypatch.setenv("SABAN_THREADS", "4")
    four = fast.ban_forward(D, T, d_off, t_off, 2, False)
    for a, b in zip(one, four):
        assert np.array_equal(a, b)


def test_pure_python_switch(tmp_path):
    import subprocess
    import sys

    out = subprocess.run([sys.executable, "-c", "from saban import kernels; print(kernels.BACKEND)"],
                         env={**__import__("os").environ, "SABAN_PURE_PYTHON": "1"},
                         capture_output=True, text=True, check=True)
    assert out.stdout.strip() == "python"
