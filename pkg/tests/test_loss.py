import numpy as np
import pytest
from hypothesis import assume, given, settings, strategies as st

import oracles
from conftest import unit_rows
from droptriple import _kernels
from droptriple.errors import InvalidBatch, InvalidConfig
from droptriple.loss import (
    BatchEmbeddings,
    LossConfig,
    compute_loss,
    droptriple_loss,
    false_negative_masks,
    hardest_from_similarity,
    masks_from_similarity,
    mh_loss,
    sh_from_similarity,
    sh_loss,
)

S3 = np.array([[0.8, 0.75, 0.2], [0.3, 0.7, 0.1], [0.2, 0.4, 0.9]])
S_MM3 = np.array([[1.0, 0.85, 0.2], [0.85, 1.0, 0.1], [0.2, 0.1, 1.0]])
S_TT3 = np.array([[1.0, 0.65, 0.3], [0.65, 1.0, 0.5], [0.3, 0.5, 1.0]])


def random_batch(seed, n=None, d=None):
    rng = np.random.default_rng(seed)
    n = n or int(rng.integers(1, 9))
    d = d or int(rng.integers(2, 17))
    return BatchEmbeddings(unit_rows(rng, n, d), unit_rows(rng, n, d))


def clustered_batch(seed, n=6, d=4, spread=0.3):
    """Rows near a few shared centres so that masks actually fire."""
    rng = np.random.default_rng(seed)
    centres = rng.standard_normal((2, d))
    pick = rng.integers(0, 2, n)
    M = centres[pick] + spread * rng.standard_normal((n, d))
    T = centres[pick] + spread * rng.standard_normal((n, d))
    norm = lambda X: X / np.linalg.norm(X, axis=1, keepdims=True)  # noqa: E731
    return BatchEmbeddings(norm(M), norm(T))


# --- worked fixtures -------------------------------------------------------

def test_sh_fixture(backend):
    S = np.array([[0.6, 0.7], [0.5, 0.55]])
    assert sh_from_similarity(S, 0.2).value == pytest.approx(0.9, abs=1e-12)
    assert oracles.sh_loss(S.tolist(), 0.2) == pytest.approx(0.9, abs=1e-12)


def test_mh_fixture(backend):
    assert hardest_from_similarity(S3, 0.2).value == pytest.approx(0.40, abs=1e-12)
    assert oracles.hardest_loss(S3.tolist(), 0.2) == pytest.approx(0.40, abs=1e-12)


def test_droptriple_fixture(backend):
    cfg = LossConfig(0.2, 0.7, 0.9)
    masks = masks_from_similarity(S_MM3, S_TT3, cfg)
    res = hardest_from_similarity(S3, 0.2, masks)
    assert res.value == pytest.approx(0.15, abs=1e-12)
    Y_M, Y_T = oracles.false_negative_sets(S_MM3.tolist(), S_TT3.tolist(), 0.7, 0.9)
    assert oracles.hardest_loss(S3.tolist(), 0.2, Y_M, Y_T) == pytest.approx(0.15, abs=1e-12)


def test_mask_examples():
    cfg = LossConfig(0.2, 0.7, 0.9)
    m = masks_from_similarity(S_MM3, S_TT3, cfg)
    # 1-based (1, 2) in the description is (0, 1) here
    assert m.y_m[0, 1] and not m.y_t[0, 1]
    b = random_batch(3, n=5)
    ones = false_negative_masks(b.M, b.T, LossConfig(0.2, 1.0, 1.0))
    assert not ones.y_m.any() and not ones.y_t.any()
    neg = false_negative_masks(b.M, b.T, LossConfig(0.2, -1.0, -1.0))
    off = ~np.eye(5, dtype=bool)
    assert np.array_equal(neg.y_m, off) and np.array_equal(neg.y_t, off)


def test_masks_match_oracle_sets():
    cfg = LossConfig(0.2, 0.3, 0.5)
    for seed in range(20):
        b = clustered_batch(seed)
        m = false_negative_masks(b.M, b.T, cfg)
        Y_M, Y_T = oracles.false_negative_sets((b.M @ b.M.T).tolist(), (b.T @ b.T.T).tolist(), 0.3, 0.5)
        assert [set(np.flatnonzero(r)) for r in m.y_m] == Y_M
        assert [set(np.flatnonzero(r)) for r in m.y_t] == Y_T


def test_trivial_values(backend):
    cfg = LossConfig()
    I = np.eye(3)
    for fn in (sh_loss, mh_loss, droptriple_loss):
        # orthonormal rows: S_ii = 1, S_ij = 0 -> every hinge negative
        r = fn(BatchEmbeddings(I, I), cfg)
        assert r.value == 0.0
        assert not r.grad_M.any() and not r.grad_T.any()
        single = random_batch(1, n=1)
        assert fn(single, cfg).value == 0.0
    S = np.full((3, 3), -1.0)
    np.fill_diagonal(S, 1.0)
    assert sh_from_similarity(S, 0.2).value == 0.0
    assert hardest_from_similarity(S, 0.2).value == 0.0


def test_mh_equals_sh_for_pairs(backend):
    for seed in range(30):
        b = random_batch(seed, n=2)
        assert mh_loss(b, LossConfig()).value == sh_loss(b, LossConfig()).value


def test_degenerate_all_pruned(backend):
    v = l = np.tile([[1.0, 0.0, 0.0]], (4, 1))
    r = droptriple_loss(BatchEmbeddings(v, l), LossConfig())
    assert r.value == 0.0
    assert r.empty_negset_anchors == 8
    assert not r.grad_M.any()


def test_invalid_inputs():
    with pytest.raises(InvalidBatch):
        BatchEmbeddings(np.ones((2, 2)), np.eye(2))
    with pytest.raises(InvalidBatch):
        BatchEmbeddings(np.eye(2), np.eye(3))
    with pytest.raises(InvalidBatch):
        BatchEmbeddings(np.full((1, 1), np.nan), np.ones((1, 1)))
    with pytest.raises(InvalidConfig):
        LossConfig(alpha=0.0)
    with pytest.raises(InvalidConfig):
        LossConfig(delta_hetero=1.5)
    with pytest.raises(InvalidConfig):
        compute_loss("infonce", random_batch(0), LossConfig())


# --- oracle equivalence and gradients --------------------------------------

@pytest.mark.parametrize("seed", range(40))
def test_values_match_triple_loop(seed, backend):
    b = clustered_batch(seed, n=int(2 + seed % 7)) if seed % 2 else random_batch(seed)
    cfg = LossConfig(0.2, 0.6, 0.8)
    S = oracles.sim_matrix(b.M.tolist(), b.T.tolist())
    assert abs(sh_loss(b, cfg).value - oracles.sh_loss(S, 0.2)) <= 1e-12
    assert abs(mh_loss(b, cfg).value - oracles.hardest_loss(S, 0.2)) <= 1e-12
    dt = oracles.droptriple_loss(b.M.tolist(), b.T.tolist(), 0.2, 0.6, 0.8)
    assert abs(droptriple_loss(b, cfg).value - dt) <= 1e-12


def _fd_embeddings(fn, b, cfg, eps=1e-5):
    """Central differences w.r.t. raw rows; the loss re-normalises nothing,
    so perturbations are projected back onto the sphere via renormalisation."""
    out = []
    for which in ("M", "T"):
        X = getattr(b, which)
        g = np.zeros_like(X)
        for idx in np.ndindex(X.shape):
            vals = []
            for s in (eps, -eps):
                Y = X.copy()
                Y[idx] += s
                Y[idx[0]] /= np.linalg.norm(Y[idx[0]])
                kw = {"M": Y, "T": b.T} if which == "M" else {"M": b.M, "T": Y}
                vals.append(fn(BatchEmbeddings(**kw), cfg).value)
            g[idx] = (vals[0] - vals[1]) / (2 * eps)
        out.append(g)
    return out


@pytest.mark.parametrize("fn", [sh_loss, mh_loss, droptriple_loss])
@pytest.mark.parametrize("seed", range(5))
def test_embedding_gradients_match_fd(fn, seed):
    b = clustered_batch(seed, n=4, d=6, spread=0.6)
    cfg = LossConfig(0.2, 0.7, 0.9)
    r = fn(b, cfg)
    fd_M, fd_T = _fd_embeddings(fn, b, cfg)
    # finite differences see only the tangent component of the gradient
    for G, X, F in ((r.grad_M, b.M, fd_M), (r.grad_T, b.T, fd_T)):
        tangent = G - np.sum(G * X, axis=1, keepdims=True) * X
        scale = max(np.abs(tangent).max(), np.abs(F).max())
        if scale:
            assert np.abs(tangent - F).max() / scale <= 1e-4


def test_droptriple_gradient_sparsity():
    cfg = LossConfig(0.2, 0.7, 0.9)
    for seed in range(20):
        b = clustered_batch(seed, n=7, d=5, spread=0.5)
        r = droptriple_loss(b, cfg)
        dS = r.grad_S
        S = b.similarity()
        n = b.size
        expect = np.zeros_like(dS)
        for i in range(n):
            j = r.hardest_t[i]
            if j >= 0 and cfg.alpha - S[i, i] + S[i, j] > 0:
                expect[i, i] -= 1
                expect[i, j] += 1
            j = r.hardest_m[i]
            if j >= 0 and cfg.alpha - S[i, i] + S[j, i] > 0:
                expect[i, i] -= 1
                expect[j, i] += 1
        assert np.array_equal(dS, expect)


# --- invariants ------------------------------------------------------------

batches = st.builds(
    lambda seed, n, d, clustered: clustered_batch(seed, n, d) if clustered else random_batch(seed, n, d),
    st.integers(0, 2**31), st.integers(1, 8), st.integers(2, 16), st.booleans(),
)
thresholds = st.floats(-1.0, 1.0)


@settings(max_examples=150, deadline=None)
@given(batches, thresholds, thresholds)
def test_dominance_chain(b, dh, do):
    cfg = LossConfig(0.2, dh, do)
    dt, mh, sh = (f(b, cfg).value for f in (droptriple_loss, mh_loss, sh_loss))
    assert dt <= mh <= sh


@settings(max_examples=100, deadline=None)
@given(batches)
def test_threshold_one_is_mh_bitwise(b):
    cfg = LossConfig(0.2, 1.0, 1.0)
    a, m = droptriple_loss(b, cfg), mh_loss(b, cfg)
    assert a.value == m.value
    assert np.array_equal(a.grad_M, m.grad_M) and np.array_equal(a.grad_T, m.grad_T)


@settings(max_examples=100, deadline=None)
@given(batches, st.floats(-1, 1), st.floats(-1, 1), st.floats(0, 1), st.floats(0, 1))
def test_monotone_in_thresholds(b, dh, do, lower_h, lower_o):
    hi = droptriple_loss(b, LossConfig(0.2, dh, do)).value
    lo = droptriple_loss(b, LossConfig(0.2, max(-1.0, dh - lower_h), max(-1.0, do - lower_o))).value
    assert lo <= hi


@settings(max_examples=60, deadline=None)
@given(batches, st.integers(0, 2**31), st.sampled_from(["sh", "mh", "droptriple"]))
def test_permutation_invariance(b, seed, kind):
    perm = np.random.default_rng(seed).permutation(b.size)
    S = b.similarity()
    # distinct similarities avoid index-dependent tie-breaks
    assume(len(np.unique(S)) == S.size)
    cfg = LossConfig()
    r = compute_loss(kind, b, cfg)
    p = compute_loss(kind, BatchEmbeddings(b.M[perm], b.T[perm]), cfg)
    assert abs(r.value - p.value) <= 1e-12
    np.testing.assert_allclose(p.grad_M, r.grad_M[perm], atol=1e-12)
    np.testing.assert_allclose(p.grad_T, r.grad_T[perm], atol=1e-12)


@pytest.mark.skipif(_kernels.numba is None, reason="numba not installed")
@settings(max_examples=80, deadline=None)
@given(batches, thresholds, thresholds)
def test_backends_agree(b, dh, do):
    S = b.similarity()
    cfg = LossConfig(0.2, dh, do)
    masks = false_negative_masks(b.M, b.T, cfg)
    for a, c in [
        (_kernels.sum_of_hinges_np(S, 0.2), _kernels.sum_of_hinges_nb(S, 0.2)),
        (_kernels.hardest_negative_np(S, masks.y_t, masks.y_m, 0.2),
         _kernels.hardest_negative_nb(S, masks.y_t, masks.y_m, 0.2)),
    ]:
        assert abs(a[0] - c[0]) <= 1e-12
        for x, y in zip(a[1:], c[1:]):
            np.testing.assert_allclose(np.asarray(x), np.asarray(y), atol=1e-12)
    np.testing.assert_allclose(_kernels.sim_matrix_np(b.M, b.T), _kernels.sim_matrix_nb(b.M, b.T), atol=1e-12)
