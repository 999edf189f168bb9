"""Pure numpy implementations of the hot kernels.

Same signatures as the compiled ``_kernels`` extension. Used when the
extension is not built or ``SABAN_PURE_PYTHON=1`` is set.
"""

import numpy as np

BACKEND = "python"

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_MASK = (1 << 64) - 1


def _mix(z):
    z = z ^ (z >> np.uint64(30))
    z = z * _M1
    z = z ^ (z >> np.uint64(27))
    z = z * _M2
    return z ^ (z >> np.uint64(31))


def synth_rows(token_ids, dim, seed):
    ids = np.asarray(token_ids, dtype=np.int64)
    n = ids.shape[0]
    with np.errstate(over="ignore"):
        seed64 = np.uint64(int(seed) & _MASK)
        tok = ids.astype(np.uint64) + np.uint64(1)
        pos = np.arange(1, n + 1, dtype=np.uint64)
        key = _mix(_mix(seed64 + _GOLDEN * tok) + _GOLDEN * pos)
        cols = np.arange(1, dim + 1, dtype=np.uint64)
        v = _mix(key[:, None] + _GOLDEN * cols[None, :])
    u = (v >> np.uint64(11)).astype(np.float64) * (1.0 / 9007199254740992.0)
    return 2.0 * u - 1.0


def _softmax(s, flat):
    if flat:
        e = np.exp(s - s.max())
        return e / e.sum()
    e = np.exp(s - s.max(axis=1, keepdims=True))
    return e / e.sum(axis=1, keepdims=True)


def ban_forward(D, T, d_off, t_off, glimpses, flat):
    n_pairs = d_off.shape[0] - 1
    width = D.shape[1]
    r = width // glimpses
    sizes = [glimpses * (d_off[b + 1] - d_off[b]) * (t_off[b + 1] - t_off[b])
             for b in range(n_pairs)]
    a_off = np.zeros(n_pairs + 1, dtype=np.int64)
    a_off[1:] = np.cumsum(sizes)
    A = np.empty(int(a_off[-1]))
    f = np.empty((n_pairs, width))
    for b in range(n_pairs):
        Db = D[d_off[b]:d_off[b + 1]]
        Tb = T[t_off[b]:t_off[b + 1]]
        nd, nt = Db.shape[0], Tb.shape[0]
        for g in range(glimpses):
            c = slice(g * r, (g + 1) * r)
            Dg, Tg = Db[:, c], Tb[:, c]
            Ag = _softmax(Dg @ Tg.T, flat)
            f[b, c] = (Dg * (Ag @ Tg)).sum(axis=0)
            start = a_off[b] + g * nd * nt
            A[start:start + nd * nt] = Ag.ravel()
    return f, A, a_off


def ban_backward(D, T, d_off, t_off, glimpses, flat, A, a_off, df):
    n_pairs = d_off.shape[0] - 1
    r = D.shape[1] // glimpses
    dD = np.zeros_like(D)
    dT = np.zeros_like(T)
    for b in range(n_pairs):
        ds, de = d_off[b], d_off[b + 1]
        ts, te = t_off[b], t_off[b + 1]
        nd, nt = de - ds, te - ts
        for g in range(glimpses):
            c = slice(g * r, (g + 1) * r)
            Dg, Tg = D[ds:de, c], T[ts:te, c]
            start = a_off[b] + g * nd * nt
            Ag = A[start:start + nd * nt].reshape(nd, nt)
            dfg = df[b, c]
            dM = Dg * dfg
            dD[ds:de, c] += (Ag @ Tg) * dfg
            dA = dM @ Tg.T
            dT[ts:te, c] += Ag.T @ dM
            if flat:
                dS = Ag * (dA - (Ag * dA).sum())
            else:
                dS = Ag * (dA - (Ag * dA).sum(axis=1, keepdims=True))
            dD[ds:de, c] += dS @ Tg
            dT[ts:te, c] += dS.T @ Dg
    return dD, dT
