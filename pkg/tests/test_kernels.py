"""Both kernel backends against straightforward per-list references."""
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from vecultr import _pykernels, kernels
from vecultr.ranking import ndcg_at_k


def ragged(rng, n_lists, max_len=10):
    lengths = rng.integers(1, max_len + 1, size=n_lists)
    return np.concatenate([[0], np.cumsum(lengths)])


def ref_softmax_ce(s, c):
    m = s.max()
    logz = m + np.log(np.sum(np.exp(s - m)))
    p = np.exp(s - logz)
    return -np.sum(c * (s - logz)), c.sum() * p - c


def test_backend_switching():
    assert "python" in kernels.available_backends()
    prev = kernels.use_backend("python")
    try:
        assert kernels.backend_name() == "python"
    finally:
        kernels.use_backend(prev)
    with pytest.raises(ValueError):
        kernels.use_backend("fortran")


def test_softmax_ce_matches_reference(backend, rng):
    off = ragged(rng, 50)
    s = rng.normal(scale=3, size=off[-1])
    c = (rng.random(off[-1]) < 0.3).astype(float)
    loss, grad = kernels.softmax_ce(s, c, off)
    for i in range(50):
        lo, hi = off[i], off[i + 1]
        rl, rg = ref_softmax_ce(s[lo:hi], c[lo:hi])
        assert loss[i] == pytest.approx(rl, abs=1e-12)
        np.testing.assert_allclose(grad[lo:hi], rg, atol=1e-12)


def test_softmax_ce_zero_targets(backend):
    loss, grad = kernels.softmax_ce(np.array([1.0, -2.0, 3.0]), np.zeros(3), np.array([0, 3]))
    assert loss[0] == 0.0
    np.testing.assert_array_equal(grad, 0.0)


def test_softmax_ce_large_scores_stable(backend):
    loss, grad = kernels.softmax_ce(np.array([1000.0, 0.0]), np.array([0.0, 1.0]), np.array([0, 2]))
    assert loss[0] == pytest.approx(1000.0)
    assert np.all(np.isfinite(grad))


def test_base_vectors_matches_reference(backend, rng):
    off = ragged(rng, 30)
    mu = rng.normal(size=(off[-1], 3))
    s = rng.normal(scale=5, size=(off[-1], 3))
    out = kernels.base_vectors(mu, s, off)
    for i in range(30):
        lo, hi = off[i], off[i + 1]
        w = np.exp(-np.clip(s[lo:hi], -10, 10))
        np.testing.assert_allclose(out[i], (w * mu[lo:hi]).sum(0) / w.sum(0), rtol=1e-12)


def test_segment_argsort_stable_descending(backend, rng):
    off = ragged(rng, 40)
    s = rng.integers(0, 3, size=off[-1]).astype(float)  # many ties
    order = kernels.segment_argsort(s, off)
    for i in range(40):
        lo, hi = off[i], off[i + 1]
        np.testing.assert_array_equal(order[lo:hi], np.argsort(-s[lo:hi], kind="stable"))


@pytest.mark.parametrize("k", [1, 3, 5, 10, 20])
def test_segment_ndcg_matches_pure_python(backend, rng, k):
    off = ragged(rng, 40, max_len=15)
    s = rng.normal(size=off[-1])
    y = rng.integers(0, 5, size=off[-1])
    out = kernels.segment_ndcg(s, y.astype(float), off, k)
    for i in range(40):
        lo, hi = off[i], off[i + 1]
        ranked = y[lo:hi][np.argsort(-s[lo:hi], kind="stable")]
        assert out[i] == pytest.approx(ndcg_at_k(ranked, k), abs=1e-12)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.integers(1, 12), min_size=1, max_size=20), st.integers(0, 2**32 - 1))
def test_backends_agree(lengths, seed):
    if "compiled" not in kernels.available_backends():
        pytest.skip("compiled backend not built")
    from vecultr import _ckernels

    rng = np.random.default_rng(seed)
    off = np.concatenate([[0], np.cumsum(lengths)]).astype(np.int64)
    n = int(off[-1])
    s = rng.normal(size=n)
    c = (rng.random(n) < 0.4).astype(float)
    mu, lv = rng.normal(size=(n, 2)), rng.normal(size=(n, 2))
    y = rng.integers(0, 5, size=n).astype(float)
    for a, b in zip(_ckernels.softmax_ce(s, c, off), _pykernels.softmax_ce(s, c, off)):
        np.testing.assert_allclose(a, b, atol=1e-12)
    np.testing.assert_allclose(_ckernels.base_vectors(mu, lv, off), _pykernels.base_vectors(mu, lv, off), rtol=1e-12)
    np.testing.assert_array_equal(_ckernels.segment_argsort(s, off), _pykernels.segment_argsort(s, off))
    np.testing.assert_allclose(_ckernels.segment_ndcg(s, y, off, 5), _pykernels.segment_ndcg(s, y, off, 5), atol=1e-12)


@pytest.mark.parametrize(
    "offsets",
    [np.array([1, 3]), np.array([0, 2, 2]), np.array([[0, 2]])],
)
def test_bad_offsets(offsets):
    with pytest.raises(ValueError):
        kernels.segment_argsort(np.zeros(3), offsets)


def test_length_mismatch():
    with pytest.raises(ValueError):
        kernels.softmax_ce(np.zeros(3), np.zeros(2), np.array([0, 3]))
    with pytest.raises(ValueError):
        kernels.base_vectors(np.zeros((3, 2)), np.zeros((3, 1)), np.array([0, 3]))
    with pytest.raises(ValueError):
        kernels.segment_ndcg(np.zeros(3), np.zeros(3), np.array([0, 3]), 0)
