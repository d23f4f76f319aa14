import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from gsrgnn import tensor as T
from gsrgnn.errors import ConfigError, ShapeError
from gsrgnn.verify import EXAMPLE_GROUP, EXAMPLE_GROUP_TOP1


def topk_oracle(x, k):
    """Row-by-row sort on (-|v|, column): the literal definition of the selection."""
    vals, idx = [], []
    for row in np.asarray(x):
        order = sorted(range(len(row)), key=lambda j: (-abs(row[j]), j))[:k]
        order.sort()
        idx.append(order)
        vals.append([row[j] for j in order])
    return np.array(vals, dtype=x.dtype).reshape(len(x), k), np.array(idx).reshape(len(x), k)


def matrices(dtype=np.float64, max_rows=40, max_cols=40, ties=False):
    elems = (st.sampled_from([-2.0, -1.0, -0.0, 0.0, 1.0, 2.0]) if ties
             else st.floats(-1e6, 1e6, allow_nan=False, width=np.dtype(dtype).itemsize * 8))
    shape = st.tuples(st.integers(1, max_rows), st.integers(1, max_cols))
    return hnp.arrays(dtype, shape, elements=elems)


def test_example_group_top1():
    s = T.gs_topk(np.array(EXAMPLE_GROUP), 1)
    vals, idx = EXAMPLE_GROUP_TOP1
    np.testing.assert_array_equal(s.values, vals)
    np.testing.assert_array_equal(s.indices, idx)
    assert s.full_width == 2


@pytest.mark.parametrize("dtype", [np.float64, np.float32])
@given(data=st.data(), ties=st.booleans())
def test_topk_matches_sort_oracle(dtype, data, ties):
    x = data.draw(matrices(dtype, ties=ties))
    k = data.draw(st.integers(1, x.shape[1]))
    s = T.gs_topk(x, k)
    vals, idx = topk_oracle(x, k)
    np.testing.assert_array_equal(s.indices, idx)
    np.testing.assert_array_equal(s.values.view(np.uint8), vals.view(np.uint8))
    s.validate()


@given(x=matrices())
def test_topk_full_width_keeps_everything(x):
    s = T.gs_topk(x, x.shape[1])
    np.testing.assert_array_equal(T.scatter(s), x)


@given(x=matrices(), data=st.data())
def test_topk_kept_magnitudes_dominate_dropped(x, data):
    k = data.draw(st.integers(1, x.shape[1]))
    s = T.gs_topk(x, k)
    dropped = np.abs(x - T.scatter(s))
    kept_min = np.abs(s.values).min(axis=1)
    assert np.all(dropped.max(axis=1) <= kept_min)


def test_topk_wide_rows_match_oracle(rng):
    x = rng.normal(size=(130, 300))
    x[:, ::7] = x[:, :1]  # repeated magnitudes across columns
    for k in (1, 8, 64, 150, 300):
        vals, idx = topk_oracle(x, k)
        s = T.gs_topk(x, k)
        np.testing.assert_array_equal(s.indices, idx)
        np.testing.assert_array_equal(s.values, vals)


def test_topk_non_contiguous_input(rng):
    x = rng.normal(size=(20, 12))[:, ::2]
    vals, idx = topk_oracle(x, 3)
    np.testing.assert_array_equal(T.gs_topk(x, 3).indices, idx)


def test_topk_rejects_bad_k():
    with pytest.raises(ConfigError):
        T.gs_topk(np.ones((2, 4)), 0)
    with pytest.raises(ConfigError):
        T.gs_topk(np.ones((2, 4)), 5)
    with pytest.raises(ShapeError):
        T.gs_topk(np.ones(4), 1)


@given(x=matrices(), data=st.data())
def test_scatter_gather_roundtrip(x, data):
    k = data.draw(st.integers(1, x.shape[1]))
    s = T.gs_topk(x, k)
    dense = T.scatter(s)
    back = T.gather(dense, s.indices)
    np.testing.assert_array_equal(back.values, s.values)
    target = np.ones_like(x)
    T.scatter_add(s, target)
    np.testing.assert_array_equal(target, 1.0 + dense)


def test_scatter_overwrites_stale_output():
    s = T.SparseActivation(np.array([[5.0]]), np.array([[1]], T.INDEX_DTYPE), 3)
    out = np.full((1, 3), 9.0)
    np.testing.assert_array_equal(T.scatter(s, out=out), [[0.0, 5.0, 0.0]])


def test_sparse_activation_invariants():
    with pytest.raises(ShapeError):
        T.SparseActivation(np.zeros((2, 2)), np.zeros((2, 3), T.INDEX_DTYPE), 4)
    with pytest.raises(ShapeError):
        T.SparseActivation(np.zeros((2, 3)), np.zeros((2, 3), T.INDEX_DTYPE), 2)
    bad = T.SparseActivation(np.zeros((1, 2)), np.array([[1, 1]], T.INDEX_DTYPE), 3)
    with pytest.raises(ShapeError):
        bad.validate()
    with pytest.raises(ShapeError):
        T.gather(np.zeros((2, 3)), np.array([[3], [0]]))


def test_split_concat_roundtrip(rng):
    x = rng.normal(size=(5, 12))
    parts = T.split(x, 3)
    assert [p.shape for p in parts] == [(5, 4)] * 3
    assert all(p.flags.c_contiguous for p in parts)
    np.testing.assert_array_equal(T.concat(parts), x)
    with pytest.raises(ConfigError):
        T.split(x, 5)
    with pytest.raises(ShapeError):
        T.concat([x, x[:2]])


def test_gemm_counts_work_and_accumulates(rng):
    a, b, c = rng.normal(size=(3, 4)), rng.normal(size=(4, 5)), rng.normal(size=(3, 5))
    with T.counting() as counter:
        np.testing.assert_allclose(T.gemm(a, b, accumulate_into=c), a @ b + c)
    assert counter.stages == {"transform": 60}
    with pytest.raises(ShapeError):
        T.gemm(a, a)


def test_precision_context():
    assert T.get_dtype() is np.float64
    with T.precision("f32") as dt:
        assert dt is np.float32 and T.get_precision() == "f32"
    assert T.get_precision() == "f64"
    with pytest.raises(ConfigError):
        T.set_precision("f16")


def test_elementwise_helpers_check_shapes():
    a = np.arange(4.0).reshape(2, 2)
    np.testing.assert_array_equal(T.axpy(2.0, a, a), 3 * a)
    np.testing.assert_array_equal(T.relu(a - 1), np.maximum(a - 1, 0))
    with pytest.raises(ShapeError):
        T.add(a, np.ones((2, 3)))
