import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from gsrgnn import graph as G
from gsrgnn import tensor as T
from gsrgnn.blocks import (BlockCache, BlockGrads, BlockParams, accumulate_block_grads,
                           dense_block, dense_block_vjp, gsr_backward_block, gsr_forward_block)
from gsrgnn.errors import SequencingError, ShapeError
from gsrgnn.verify import random_graph


def case(seed, n=None, width=None, bias=True):
    rng = np.random.default_rng(seed)
    n = n or int(rng.integers(2, 20))
    width = width or int(rng.integers(1, 8))
    g = random_graph(rng, n)
    p = BlockParams.init(width, rng, use_bias=bias)
    p.b[:] = rng.normal(size=width)
    return rng, g, p, rng.normal(size=(n, width))


@given(seed=st.integers(0, 10**6))
def test_dense_block_matches_matrix_formula(seed):
    _, g, p, x = case(seed)
    expect = g.dense() @ np.maximum(x, 0) @ p.w + p.b
    np.testing.assert_allclose(dense_block(x, g, p), expect, rtol=1e-12, atol=1e-12)


def test_identity_block_flags_skip_transform():
    _, g, _, x = case(0)
    p = BlockParams.identity(x.shape[1])
    np.testing.assert_array_equal(dense_block(x, g, p), G.spmm(g, np.maximum(x, 0)))


@given(seed=st.integers(0, 10**6))
def test_dense_block_vjp_matches_finite_differences(seed):
    rng, g, p, x = case(seed, n=5, width=3)
    x[np.abs(x) < 1e-3] = 0.5  # keep away from the ReLU kink
    gout = rng.normal(size=x.shape)
    grads = BlockGrads.zeros_like(p)
    gin, f = dense_block_vjp(x, g, p, gout, grads)
    np.testing.assert_allclose(f, dense_block(x, g, p), rtol=1e-12, atol=1e-12)

    def loss():
        return float(np.sum(dense_block(x, g, p) * gout))

    h = 1e-6
    for arr, analytic in ((x, gin), (p.w, grads.dw), (p.b, grads.db)):
        fd = np.zeros_like(arr)
        for idx in np.ndindex(arr.shape):
            old = arr[idx]
            arr[idx] = old + h
            up = loss()
            arr[idx] = old - h
            fd[idx] = (up - loss()) / (2 * h)
            arr[idx] = old
        np.testing.assert_allclose(analytic, fd, rtol=1e-6, atol=1e-7)


@given(seed=st.integers(0, 10**6), data=st.data())
def test_gsr_blocks_match_dense_scatter_formulas(seed, data):
    rng, g, p, x = case(seed)
    k = data.draw(st.integers(1, x.shape[1]))
    s = T.gs_topk(x, k)
    a = g.dense()
    forward = gsr_forward_block(s, g, p)
    np.testing.assert_allclose(forward, a @ T.scatter(s) @ p.w + p.b, rtol=1e-12, atol=1e-12)

    m = rng.normal(size=x.shape)
    cache = BlockCache("t")
    cache.store(s)
    back = gsr_backward_block(m, cache, g, p)
    t = m @ p.w.T
    kept = np.zeros_like(t)
    np.put_along_axis(kept, s.indices, np.take_along_axis(t, s.indices, 1), 1)
    np.testing.assert_allclose(back, a.T @ kept, rtol=1e-12, atol=1e-12)
    assert not cache.occupied


@given(seed=st.integers(0, 10**6), data=st.data())
def test_sparse_weight_gradient_equals_transposed_form(seed, data):
    rng, g, p, x = case(seed)
    s = T.gs_topk(x, data.draw(st.integers(1, x.shape[1])))
    m = rng.normal(size=x.shape)
    grads = BlockGrads.zeros_like(p)
    accumulate_block_grads(m, g, p, grads, s)
    expect = T.scatter(s).T @ (g.dense().T @ m)
    np.testing.assert_allclose(grads.dw, expect, rtol=1e-10, atol=1e-12)
    np.testing.assert_allclose(grads.db, m.sum(axis=0), rtol=1e-12)


@given(seed=st.integers(0, 10**6))
def test_full_width_sparse_gradient_equals_dense_block_gradient(seed):
    rng, g, p, x = case(seed)
    x = np.abs(x)  # ReLU is the identity, so the dense block sees the same input
    gout = rng.normal(size=x.shape)
    dense_grads, sparse_grads = BlockGrads.zeros_like(p), BlockGrads.zeros_like(p)
    dense_block_vjp(x, g, p, gout, dense_grads)
    accumulate_block_grads(gout, g, p, sparse_grads, T.gs_topk(x, x.shape[1]))
    np.testing.assert_allclose(sparse_grads.dw, dense_grads.dw, rtol=1e-10, atol=1e-12)
    np.testing.assert_allclose(sparse_grads.db, dense_grads.db, rtol=1e-12)


def test_cache_sequencing_errors():
    _, g, p, x = case(1, width=4)
    s = T.gs_topk(x, 2)
    cache = BlockCache("c")
    with pytest.raises(SequencingError):
        cache.peek()
    gsr_forward_block(s, g, p, cache)
    with pytest.raises(SequencingError):
        gsr_forward_block(s, g, p, cache)
    gsr_backward_block(x, cache, g, p)
    with pytest.raises(SequencingError):
        gsr_backward_block(x, cache, g, p)


def test_block_shape_errors():
    _, g, p, x = case(2, width=3)
    with pytest.raises(ShapeError):
        dense_block(x[:, :2], g, p)
    with pytest.raises(ShapeError):
        BlockParams(np.zeros((2, 3)), np.zeros(2))
