import math

import numpy as np
import pytest
from hypothesis import assume, given
from hypothesis import strategies as st

from reference_values import (CITED_LEVEL_GAIN_SEGMENT_2, CITED_REFERENCES, DOUBLING_0078,
                              GROWTH_0088, GROWTH_M1310, PUBLICATIONS_AT_24,
                              PUBLICATIONS_LEVEL, PUBLICATIONS_SLOPE)
from segrowth.model import (ExtrapolationError, SegmentedModel, branch_value, design_matrix,
                            doubling_time, growth_rate, jacobian_row, predict_count,
                            predict_log, segment_index, summarize)


def test_single_segment_without_intercept():
    m = SegmentedModel((0.005,))
    assert predict_log(m, 1700) == pytest.approx(8.5, abs=1e-12)


def test_two_segments_meet_at_breakpoint():
    m = SegmentedModel((0.01, 0.03), (1800.0,), 0.0)
    left, right = branch_value(m, 1800, 1), branch_value(m, 1800, 2)
    assert left == right == pytest.approx(18.0)
    assert predict_log(m, 1800) == left


def test_cited_reference_level_gain():
    m = CITED_REFERENCES
    gain = predict_log(m, 1926.1) - predict_log(m, 1753.3)
    assert gain == pytest.approx(CITED_LEVEL_GAIN_SEGMENT_2, abs=1e-9)


def test_predict_count_at_zero_log():
    assert predict_count(SegmentedModel((0.0,), (), 0.0), 5.0) == 1.0


@pytest.mark.parametrize("years_after, expected, rel", [
    (0, PUBLICATIONS_LEVEL, 1e-12),
    (24, PUBLICATIONS_AT_24, 1e-12),
])
def test_publication_model_counts(years_after, expected, rel):
    m = SegmentedModel((PUBLICATIONS_SLOPE,), (), math.log(PUBLICATIONS_LEVEL), origin=1980)
    assert predict_count(m, 1980 + years_after) == pytest.approx(expected, rel=rel)


def test_doubling_within_one_percent_after_24_years():
    m = SegmentedModel((PUBLICATIONS_SLOPE,), (), math.log(PUBLICATIONS_LEVEL), origin=1980)
    assert predict_count(m, 2004) == pytest.approx(1_409_000, rel=0.01)


def test_tie_goes_left():
    assert segment_index([1800.0, 1900.0], [1800.0, 1800.5, 1900.0, 1900.1]).tolist() == [0, 1, 1, 2]


def test_extrapolation_guard():
    m = SegmentedModel((0.01, 0.02), (1800,), None, (1700, 1900))
    with pytest.raises(ExtrapolationError):
        predict_log(m, 1950)
    assert predict_log(m, 1950, extrapolate=True) == pytest.approx(0.01 * 1800 + 0.02 * 150)


@pytest.mark.parametrize("kwargs", [
    dict(slopes=(), breakpoints=()),
    dict(slopes=(0.1, 0.2), breakpoints=()),
    dict(slopes=(0.1, 0.2, 0.3), breakpoints=(1900, 1800)),
    dict(slopes=(0.1, 0.2), breakpoints=(1650,), domain=(1700, 2000)),
])
def test_invalid_models(kwargs):
    with pytest.raises(ValueError):
        SegmentedModel(**kwargs)


def test_dict_round_trip():
    m = SegmentedModel((0.01, -0.02), (1990.5,), 1.5, (1950, 2020), 1900)
    assert SegmentedModel.from_dict(m.to_dict()) == m
    assert m.param_names() == ["b0", "b1", "b2", "a1"]
    assert m.with_params(m.params()) == m


def test_jacobian_breakpoint_partials():
    m = SegmentedModel((0.01, 0.03), (1800.0,), None)
    assert jacobian_row(m, 1850)[-1] == pytest.approx(0.01 - 0.03)
    assert jacobian_row(m, 1750)[-1] == 0.0


@pytest.mark.parametrize("slope, expected, tol", [
    (0.088, GROWTH_0088, 1e-9),
    (0.0, 0.0, 0.0),
    (-1.310, GROWTH_M1310, 1e-9),
])
def test_growth_rate_values(slope, expected, tol):
    assert growth_rate(slope) == pytest.approx(expected, abs=tol)


@pytest.mark.parametrize("slope, printed, tol", [(0.088, 9.20, 0.01), (-1.310, -73.01, 0.02)])
def test_growth_rate_matches_printed(slope, printed, tol):
    assert abs(growth_rate(slope) - printed) <= tol


def test_doubling_time_values():
    assert doubling_time(0.078) == pytest.approx(DOUBLING_0078, abs=1e-12)
    assert abs(doubling_time(0.078) - 8.9) <= 0.05
    assert doubling_time(math.log(2)) == 1.0
    assert doubling_time(-0.22) is None
    assert doubling_time(0.0) is None


def test_summarize_spans():
    rows = summarize(CITED_REFERENCES)
    assert [r.span for r in rows] == [(1650, 1753.3), (1753.3, 1926.1),
                                      (1926.1, 2000.6), (2000.6, 2012)]
    assert rows[3].doubling_time_years is None
    assert rows[0].to_dict()["index"] == 1


# ---- properties ---------------------------------------------------------

@st.composite
def models(draw, max_segments=5, intercept=None):
    s = draw(st.integers(1, max_segments))
    slopes = draw(st.lists(st.floats(-0.5, 0.5), min_size=s, max_size=s))
    gaps = draw(st.lists(st.floats(1.0, 80.0), min_size=s, max_size=s))
    lo = draw(st.floats(1500.0, 1900.0))
    edges = lo + np.cumsum(gaps)
    if intercept is None:
        intercept = draw(st.one_of(st.none(), st.floats(-5, 5)))
    hi = float(edges[-1]) + 1.0
    origin = draw(st.sampled_from([0.0, lo]))
    return SegmentedModel(tuple(slopes), tuple(edges[:-1].tolist()), intercept, (lo, hi), origin)


@given(models())
def test_continuity_at_every_breakpoint(m):
    for k, a in enumerate(m.breakpoints, start=1):
        left, right = branch_value(m, a, k), branch_value(m, a, k + 1)
        assert left == right
        assert predict_log(m, a) == left


@given(models(), st.floats(0, 1), st.floats(0, 1), st.integers(0, 4))
def test_affine_inside_a_segment(m, u, v, k):
    edges = (m.domain[0],) + m.breakpoints + (m.domain[1],)
    k = min(k, m.n_segments - 1)
    lo, hi = edges[k], edges[k + 1]
    y1, y2 = sorted((lo + 1e-6 + u * (hi - lo - 2e-6), lo + 1e-6 + v * (hi - lo - 2e-6)))
    mid = predict_log(m, (y1 + y2) / 2)
    assert mid == pytest.approx((predict_log(m, y1) + predict_log(m, y2)) / 2, abs=1e-12)


@given(models(), st.floats(0, 1))
def test_jacobian_matches_central_differences(m, u):
    lo, hi = m.domain
    year = lo + u * (hi - lo)
    assume(all(abs(year - a) > 1e-3 for a in m.breakpoints))
    row = jacobian_row(m, year)
    theta = m.params()
    n_lin = len(theta) - len(m.breakpoints)
    fd = np.empty_like(theta)
    for i in range(len(theta)):
        h = 1e-6 if i < n_lin else 1e-4
        up, dn = theta.copy(), theta.copy()
        up[i] += h
        dn[i] -= h
        fd[i] = (predict_log(m.with_params(up), year, extrapolate=True)
                 - predict_log(m.with_params(dn), year, extrapolate=True)) / (2 * h)
    np.testing.assert_allclose(row, fd, atol=1e-6, rtol=0)


@given(models(), st.lists(st.floats(0, 1), min_size=1, max_size=30))
def test_design_matrix_reproduces_prediction(m, us):
    lo, hi = m.domain
    years = lo + np.array(us) * (hi - lo)
    X = design_matrix(years, m.breakpoints, m.origin)
    pred = X @ np.array(m.slopes) + (m.intercept or 0.0)
    np.testing.assert_allclose(pred, predict_log(m, years), rtol=1e-12, atol=1e-9)


@given(st.floats(1e-6, 3.0))
def test_growth_and_doubling_consistent(b):
    g = growth_rate(b)
    assert math.log(2) / math.log1p(g / 100) == pytest.approx(doubling_time(b), rel=1e-9)


@given(st.floats(-3, 3), st.floats(-3, 3))
def test_growth_rate_strictly_increasing(b1, b2):
    assume(b2 - b1 > 1e-12)
    assert growth_rate(b1) < growth_rate(b2)
