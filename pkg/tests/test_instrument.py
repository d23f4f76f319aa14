import math
import time

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from gsrgnn import instrument as I
from gsrgnn import verify as V
from gsrgnn.errors import NumericalError, ShapeError


def vectors(min_size=2, max_size=40):
    values = st.one_of(st.integers(-3, 3).map(float),
                       st.floats(-100, 100, allow_nan=False, allow_subnormal=False))
    return st.integers(min_size, max_size).flatmap(
        lambda m: st.tuples(st.lists(values, min_size=m, max_size=m),
                            st.lists(values, min_size=m, max_size=m)))


def same(x, y, tol):
    if math.isnan(y):
        return math.isnan(x)
    return abs(x - y) <= tol


@given(ab=vectors())
def test_kendall_fast_counts_equal_pair_counting(ab):
    a, b = ab
    assert I.kendall_counts(a, b) == V.kendall_pair_counts(a, b)


@given(ab=vectors())
def test_rank_metrics_match_definitions(ab):
    a, b = ab
    assert same(I.spearman(a, b), V.spearman_oracle(a, b), 1e-12)
    assert same(I.kendall(a, b), V.kendall_oracle(a, b), 1e-12)


@given(ab=vectors())
def test_pearson_and_r2_match_definitions(ab):
    a, b = (np.round(v, 3) for v in map(np.array, ab))
    assert same(I.pearson(a, b), V.pearson_oracle(list(a), list(b)), 1e-12)
    assert same(I.r2(a, b), V.r2_oracle(list(a), list(b)), 1e-9 * max(1.0, abs(V.r2_oracle(list(a), list(b)))))


@given(ab=vectors())
def test_correlations_bounded_and_symmetric(ab):
    a, b = ab
    for f in (I.pearson, I.spearman, I.kendall):
        r = f(a, b)
        assert math.isnan(r) or -1.0 <= r <= 1.0
        assert same(f(b, a), r, 1e-12)


def test_known_values():
    a = [1, 2, 3, 4, 5]
    assert I.pearson(a, [2, 4, 6, 8, 10]) == 1.0
    assert I.spearman(a, [5, 4, 3, 2, 1]) == -1.0
    assert I.kendall([1, 2, 2, 3], [1, 2, 3, 3]) == pytest.approx(0.8)
    assert I.r2([1, 2, 3], [1, 2, 3]) == 1.0


def test_constant_input_is_undefined_not_an_error():
    rep = I.CorrelationReport.compute([1.0, 1.0, 1.0], [1.0, 2.0, 3.0])
    d = rep.as_dict()
    assert d["pearson"] is None and d["spearman"] is None and d["kendall"] is None
    assert rep.undefined == ["kendall", "pearson", "spearman"]
    assert d["r2"] is not None


def test_invalid_metric_inputs():
    with pytest.raises(ShapeError):
        I.pearson([1.0], [1.0])
    with pytest.raises(ShapeError):
        I.pearson([1.0, 2.0], [1.0, 2.0, 3.0])
    with pytest.raises(NumericalError):
        I.kendall([1.0, float("nan")], [1.0, 2.0])


def test_kendall_large_input_matches_scipy():
    from scipy.stats import kendalltau
    rng = np.random.default_rng(0)
    a = np.round(rng.normal(size=5000), 1)
    b = np.round(a + rng.normal(size=5000), 1)
    assert I.kendall(a, b) == pytest.approx(kendalltau(a, b).statistic, abs=1e-12)


def test_timer_exclusive_time_subtracts_nested_regions():
    t = I.Timer()
    with t.region("backward"):
        time.sleep(0.01)
        with t.region("copy"):
            time.sleep(0.02)
    assert t.inclusive["backward"] >= t.inclusive["copy"] >= 0.02
    assert t.exclusive["backward"] == pytest.approx(t.inclusive["backward"] - t.inclusive["copy"])


def test_timing_breakdown_partitions_total():
    t = I.Timer()
    t0 = time.perf_counter()
    with t.region("forward"):
        time.sleep(0.01)
        with t.region("copy"):
            time.sleep(0.01)
    with t.region("backward"):
        time.sleep(0.01)
    tb = I.TimingBreakdown.from_timer(0, t, time.perf_counter() - t0)
    assert tb.accounted <= tb.t_total
    assert tb.accounted_fraction > 0.95
    assert set(tb.as_dict()) == {"epoch", "t_forward", "t_backward", "t_copy", "t_total",
                                 "accounted_fraction"}


def test_timed_region_returns_elapsed():
    assert I.timed_region("x", lambda: time.sleep(0.005)) >= 0.005
