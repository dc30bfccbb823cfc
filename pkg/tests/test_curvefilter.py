from datetime import date, timedelta
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sector_congest.curvefilter import (
    DEFAULT_WINDOW,
    DailyCurve,
    filter_training_curves,
    fit_reference_trend,
    group_curves,
    reject_outliers,
    score_curve,
)
from sector_congest.errors import EmptyWindow, TooFewCurves

WED = date(2018, 3, 14)


def weekly(n, start=WED):
    return [start + timedelta(weeks=i) for i in range(n)]


def flat_curve(day, level, sector="S1"):
    return DailyCurve(sector, day, np.full(1440, level, dtype=np.int64))


def test_constant_means_give_flat_trend():
    curves = [flat_curve(d, 7) for d in weekly(4)]
    trend = fit_reference_trend(curves)
    assert trend.slope == 0
    assert trend.intercept == 7


def test_exact_line_is_recovered():
    curves = [flat_curve(d, v) for d, v in zip(weekly(3), [1, 2, 3])]
    trend = fit_reference_trend(curves)
    assert (trend.slope, trend.intercept) == (1, 1)


def test_single_curve_is_too_few():
    with pytest.raises(TooFewCurves):
        fit_reference_trend([flat_curve(WED, 1)])
    with pytest.raises(TooFewCurves):
        reject_outliers([flat_curve(WED, 1)])


def test_empty_window_is_rejected():
    curves = [flat_curve(d, 1) for d in weekly(2)]
    with pytest.raises(EmptyWindow):
        fit_reference_trend(curves, window=(720, 720))


def test_window_mean_trend_matches_numpy_polyfit():
    rng = np.random.default_rng(3)
    curves = [DailyCurve("S1", d, rng.integers(0, 30, 1440)) for d in weekly(9)]
    trend = fit_reference_trend(curves)
    means = [c.values[720:735].mean() for c in curves]
    slope, intercept = np.polyfit(np.arange(9), means, 1)
    assert float(trend.slope) == pytest.approx(slope, abs=1e-9)
    assert float(trend.intercept) == pytest.approx(intercept, abs=1e-9)


def test_score_on_and_off_trend():
    curves = [flat_curve(d, 5) for d in weekly(3)]
    trend = fit_reference_trend(curves)
    assert score_curve(curves[0], trend) == 0
    shifted = flat_curve(WED, 7)
    assert score_curve(shifted, trend) == 30


def test_score_equals_brute_force_resum():
    rng = np.random.default_rng(5)
    curves = [DailyCurve("S1", d, rng.integers(0, 40, 1440)) for d in weekly(6)]
    trend = fit_reference_trend(curves)
    for i, c in enumerate(curves):
        level = trend.intercept + trend.slope * i
        expected = sum(abs(Fraction(int(v)) - level) for v in c.values[720:735])
        assert score_curve(c, trend) == pytest.approx(float(expected), rel=1e-12)


def test_identical_curves_reject_nothing():
    curves = [flat_curve(d, 9) for d in weekly(20)]
    res = reject_outliers(curves)
    assert res.rejected == set()
    assert len(set(res.scores)) == 1


def test_single_shifted_curve_is_rejected():
    # 19 curves at 10, one at 60.  Least-squares residuals sum to zero and all
    # base curves sit below the line, so their scores add up to the shifted
    # curve's score: normalised scores sum to 2 and the threshold is 2/20.
    days = weekly(20)
    curves = [flat_curve(d, 60 if i == 11 else 10) for i, d in enumerate(days)]
    res = reject_outliers(curves)
    assert res.rejected == {curves[11].curve_id}
    assert res.threshold == pytest.approx(0.1)
    assert max(res.scores) == 1.0


def test_threshold_is_the_mean_and_rejection_is_strict():
    curves = [flat_curve(d, v) for d, v in zip(weekly(4), [0, 2, 2, 0])]
    res = reject_outliers(curves)
    assert res.threshold == pytest.approx(np.mean(res.scores))
    # every score equals the threshold: nothing strictly exceeds it
    assert res.rejected == set()


curve_sets = st.lists(
    st.lists(st.integers(0, 40), min_size=15, max_size=15), min_size=2, max_size=12,
)


def _from_windows(rows, scale=1):
    curves = []
    for d, row in zip(weekly(len(rows)), rows):
        values = np.zeros(1440, dtype=np.int64)
        values[720:735] = np.asarray(row) * scale
        curves.append(DailyCurve("S1", d, values))
    return curves


@settings(max_examples=150, deadline=None)
@given(curve_sets, st.integers(2, 9))
def test_decision_is_scale_free(rows, scale):
    base = reject_outliers(_from_windows(rows)).rejected
    scaled = reject_outliers(_from_windows(rows, scale)).rejected
    assert base == scaled


@settings(max_examples=150, deadline=None)
@given(curve_sets)
def test_never_rejects_everything(rows):
    res = reject_outliers(_from_windows(rows))
    assert len(res.rejected) < len(res.ids)
    assert res.rejected == {i for i, s in zip(res.ids, res.scores) if s > res.threshold}


@settings(max_examples=100, deadline=None)
@given(curve_sets, st.randoms(use_true_random=False))
def test_permutation_keeps_rejected_membership(rows, rnd):
    curves = _from_windows(rows)
    shuffled = list(curves)
    rnd.shuffle(shuffled)
    assert reject_outliers(curves).rejected == reject_outliers(shuffled).rejected


def test_training_filter_groups_by_sector_and_weekday():
    curves = []
    for sector in ("A", "B"):
        for i, d in enumerate(weekly(6)):
            curves.append(flat_curve(d, 50 if (sector == "A" and i == 2) else 4, sector))
    curves.append(flat_curve(WED + timedelta(days=1), 99, "A"))  # lone Thursday passes through
    groups = group_curves(curves)
    assert set(groups) == {("A", "Wed"), ("B", "Wed"), ("A", "Thu")}
    accepted, results = filter_training_curves(curves)
    assert set(results) == {("A", "Wed"), ("B", "Wed")}
    assert results[("A", "Wed")].rejected == {f"A/{weekly(6)[2].isoformat()}"}
    assert results[("B", "Wed")].rejected == set()
    assert len(accepted) == len(curves) - 1


def test_curve_values_must_be_non_negative_integers():
    with pytest.raises(ValueError):
        DailyCurve("S1", WED, np.full(1440, -1))
    with pytest.raises(ValueError):
        DailyCurve("S1", WED, np.full(1440, 0.5))
    assert DailyCurve("S1", WED, np.full(1440, 2.0)).values.dtype == np.int64
    assert DEFAULT_WINDOW == (720, 735)
