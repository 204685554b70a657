"""Hot numeric kernels with two interchangeable backends.

Every kernel exists as an explicit-loop numba ``@njit`` version and a
vectorised numpy version. The numba path is used when numba imports and the
environment variable ``DROPTRIPLE_PURE_NUMPY`` is unset or ``0``; otherwise
the numpy path is used. Both paths agree to ~1e-15 but are not bitwise equal
(loop order vs. BLAS / pairwise summation), so a run is only bit-reproducible
against another run on the same backend.

Ragged sequences are passed packed: ``H`` stacks all elements of all
sequences row-wise and ``offsets`` (length n+1) delimits sequence k as
``H[offsets[k]:offsets[k+1]]``. Every sequence has at least one element.
"""

from __future__ import annotations

import os

import numpy as np

try:  # pragma: no cover - depends on the environment
    import numba
except ImportError:  # pragma: no cover
    numba = None

FLAG = "DROPTRIPLE_PURE_NUMPY"


def _want_numba() -> bool:
    return numba is not None and os.environ.get(FLAG, "0") in ("", "0")


# ---------------------------------------------------------------------------
# numpy backend


def sim_matrix_np(A, B):
    return A @ B.T


def pool_forward_np(H, offsets, q, scale):
    starts = offsets[:-1]
    seg = np.repeat(np.arange(starts.size), np.diff(offsets))
    scores = (H @ q) * scale
    peak = np.maximum.reduceat(scores, starts)
    e = np.exp(scores - peak[seg])
    attn = e / np.add.reduceat(e, starts)[seg]
    pooled = np.add.reduceat(attn[:, None] * H, starts, axis=0)
    return pooled, attn


def pool_backward_np(H, offsets, q, scale, attn, dpooled):
    starts = offsets[:-1]
    seg = np.repeat(np.arange(starts.size), np.diff(offsets))
    dp = dpooled[seg]
    da = np.einsum("ij,ij->i", H, dp)
    ds = attn * (da - np.add.reduceat(attn * da, starts)[seg])
    dH = attn[:, None] * dp + scale * ds[:, None] * q[None, :]
    dq = scale * (ds @ H)
    return dH, dq


def sum_of_hinges_np(S, alpha):
    n = S.shape[0]
    diag = np.diag(S)
    off = ~np.eye(n, dtype=bool)
    text_side = np.where(off, alpha - diag[:, None] + S, 0.0)
    motion_side = np.where(off, alpha - diag[None, :] + S, 0.0)
    act_t = text_side > 0.0
    act_m = motion_side > 0.0
    value = float(text_side[act_t].sum() + motion_side[act_m].sum())
    dS = act_t.astype(np.float64) + act_m.astype(np.float64)
    dS[np.diag_indices(n)] = -(act_t.sum(axis=1) + act_m.sum(axis=0))
    return value, dS


def hardest_negative_np(S, excl_t, excl_m, alpha):
    n = S.shape[0]
    eye = np.eye(n, dtype=bool)
    diag = np.diag(S)
    cand_t = ~(excl_t | eye)
    cand_m = ~(excl_m | eye).T  # cand_m[j, i]: m_j eligible for text anchor i
    sel_t = np.where(cand_t.any(axis=1), np.where(cand_t, S, -np.inf).argmax(axis=1), -1)
    sel_m = np.where(cand_m.any(axis=0), np.where(cand_m, S, -np.inf).argmax(axis=0), -1)
    rows = np.arange(n)
    has_t = sel_t >= 0
    has_m = sel_m >= 0
    term_t = np.where(has_t, alpha - diag + S[rows, np.maximum(sel_t, 0)], 0.0)
    term_m = np.where(has_m, alpha - diag + S[np.maximum(sel_m, 0), rows], 0.0)
    act_t = has_t & (term_t > 0.0)
    act_m = has_m & (term_m > 0.0)
    value = float(term_t[act_t].sum() + term_m[act_m].sum())
    dS = np.zeros_like(S)
    np.add.at(dS, (rows[act_t], sel_t[act_t]), 1.0)
    np.add.at(dS, (sel_m[act_m], rows[act_m]), 1.0)
    dS[rows, rows] -= act_t.astype(np.float64) + act_m.astype(np.float64)
    empty = int((~has_t).sum() + (~has_m).sum())
    return value, dS, sel_t.astype(np.int64), sel_m.astype(np.int64), empty


# ---------------------------------------------------------------------------
# numba backend


def _sim_matrix_loop(A, B):
    n, d = A.shape
    m = B.shape[0]
    out = np.empty((n, m))
    for i in range(n):
        for j in range(m):
            acc = 0.0
            for k in range(d):
                acc += A[i, k] * B[j, k]
            out[i, j] = acc
    return out


def _pool_forward_loop(H, offsets, q, scale):
    n = offsets.shape[0] - 1
    d = H.shape[1]
    pooled = np.zeros((n, d))
    attn = np.empty(H.shape[0])
    for s in range(n):
        a, b = offsets[s], offsets[s + 1]
        peak = -np.inf
        for f in range(a, b):
            acc = 0.0
            for k in range(d):
                acc += H[f, k] * q[k]
            attn[f] = acc * scale
            if attn[f] > peak:
                peak = attn[f]
        den = 0.0
        for f in range(a, b):
            attn[f] = np.exp(attn[f] - peak)
            den += attn[f]
        for f in range(a, b):
            attn[f] /= den
            for k in range(d):
                pooled[s, k] += attn[f] * H[f, k]
    return pooled, attn


def _pool_backward_loop(H, offsets, q, scale, attn, dpooled):
    n = offsets.shape[0] - 1
    total, d = H.shape
    dH = np.empty((total, d))
    dq = np.zeros(d)
    da = np.empty(total)
    for s in range(n):
        a, b = offsets[s], offsets[s + 1]
        mean_da = 0.0
        for f in range(a, b):
            acc = 0.0
            for k in range(d):
                acc += H[f, k] * dpooled[s, k]
            da[f] = acc
            mean_da += attn[f] * acc
        for f in range(a, b):
            ds = attn[f] * (da[f] - mean_da)
            for k in range(d):
                dH[f, k] = attn[f] * dpooled[s, k] + scale * ds * q[k]
                dq[k] += scale * ds * H[f, k]
    return dH, dq


def _sum_of_hinges_loop(S, alpha):
    n = S.shape[0]
    dS = np.zeros((n, n))
    acc_t = 0.0
    acc_m = 0.0
    for i in range(n):
        for j in range(n):
            if j == i:
                continue
            t = alpha - S[i, i] + S[i, j]
            if t > 0.0:
                acc_t += t
                dS[i, j] += 1.0
                dS[i, i] -= 1.0
            m = alpha - S[i, i] + S[j, i]
            if m > 0.0:
                acc_m += m
                dS[j, i] += 1.0
                dS[i, i] -= 1.0
    return acc_t + acc_m, dS


def _hardest_negative_loop(S, excl_t, excl_m, alpha):
    n = S.shape[0]
    dS = np.zeros((n, n))
    sel_t = np.full(n, -1, dtype=np.int64)
    sel_m = np.full(n, -1, dtype=np.int64)
    acc_t = 0.0
    acc_m = 0.0
    empty = 0
    for i in range(n):
        best = -np.inf
        for j in range(n):
            if j != i and not excl_t[i, j] and (sel_t[i] < 0 or S[i, j] > best):
                best = S[i, j]
                sel_t[i] = j
        if sel_t[i] < 0:
            empty += 1
        else:
            t = alpha - S[i, i] + best
            if t > 0.0:
                acc_t += t
                dS[i, sel_t[i]] += 1.0
                dS[i, i] -= 1.0
        best = -np.inf
        for j in range(n):
            if j != i and not excl_m[i, j] and (sel_m[i] < 0 or S[j, i] > best):
                best = S[j, i]
                sel_m[i] = j
        if sel_m[i] < 0:
            empty += 1
        else:
            m = alpha - S[i, i] + best
            if m > 0.0:
                acc_m += m
                dS[sel_m[i], i] += 1.0
                dS[i, i] -= 1.0
    return acc_t + acc_m, dS, sel_t, sel_m, empty


if numba is not None:
    _jit = numba.njit(cache=True)
    sim_matrix_nb = _jit(_sim_matrix_loop)
    pool_forward_nb = _jit(_pool_forward_loop)
    pool_backward_nb = _jit(_pool_backward_loop)
    sum_of_hinges_nb = _jit(_sum_of_hinges_loop)
    _hardest_negative_jit = _jit(_hardest_negative_loop)

    def hardest_negative_nb(S, excl_t, excl_m, alpha):
        value, dS, sel_t, sel_m, empty = _hardest_negative_jit(S, excl_t, excl_m, alpha)
        return float(value), dS, sel_t, sel_m, int(empty)
else:  # pragma: no cover
    sim_matrix_nb = pool_forward_nb = pool_backward_nb = None
    sum_of_hinges_nb = hardest_negative_nb = None


def _select(name: str):
    return globals()[f"{name}_nb" if _want_numba() else f"{name}_np"]


# Dispatch is resolved per call so tests can flip the flag with monkeypatch.
def backend() -> str:
    return "numba" if _want_numba() else "numpy"


def sim_matrix(A, B):
    return _select("sim_matrix")(A, B)


def pool_forward(H, offsets, q, scale):
    return _select("pool_forward")(H, offsets, q, float(scale))


def pool_backward(H, offsets, q, scale, attn, dpooled):
    return _select("pool_backward")(H, offsets, q, float(scale), attn, dpooled)


def sum_of_hinges(S, alpha):
    value, dS = _select("sum_of_hinges")(S, float(alpha))
    return float(value), dS


def hardest_negative(S, excl_t, excl_m, alpha):
    return _select("hardest_negative")(S, excl_t, excl_m, float(alpha))
