"""Rejection of anomalous whole-day sector count curves.

For one (sector, weekday) group, a least-squares line is fitted through the
per-curve mean count inside a short reference window (12:00-12:15 UTC by
default) against the curve's position in date order.  Each curve is scored
by its summed absolute deviation from that line over the window; scores are
normalised by their maximum and every curve scoring strictly above the mean
normalised score is rejected.

Counts are integers, so the fit and the scores are computed exactly with
:class:`fractions.Fraction`; the accept/reject decision is then free of
rounding effects (identical curves score exactly zero, scaling all curves by
a constant cannot flip a decision).
"""

from __future__ import annotations

from dataclasses import dataclass
from datetime import date
from fractions import Fraction
from typing import Optional, Sequence

import numpy as np

from .errors import EmptyWindow, TooFewCurves

DEFAULT_WINDOW = (720, 735)  # minutes of day, [start, end)
WEEKDAYS = ("Mon", "Tue", "Wed", "Thu", "Fri", "Sat", "Sun")


@dataclass
class DailyCurve:
    sector: str
    day: date
    values: np.ndarray  # 1440 non-negative integer counts

    def __post_init__(self):
        self.values = np.asarray(self.values)
        if self.values.ndim != 1 or (self.values < 0).any():
            raise ValueError("curve values must be a 1-D array of non-negative counts")
        if not np.issubdtype(self.values.dtype, np.integer):
            if not np.all(self.values == np.round(self.values)):
                raise ValueError("curve values must be integers")
            self.values = self.values.astype(np.int64)

    @property
    def weekday(self) -> str:
        return WEEKDAYS[self.day.weekday()]

    @property
    def curve_id(self) -> str:
        return f"{self.sector}/{self.day.isoformat()}"


@dataclass
class LinearTrend:
    slope: Fraction
    intercept: Fraction
    day_index: dict  # date -> position in date order

    def at(self, day: date) -> Fraction:
        return self.intercept + self.slope * self.day_index[day]


@dataclass
class RejectionResult:
    ids: list  # curve ids, input order
    scores: list  # normalised to max 1 (all zero when every raw score is zero)
    threshold: float
    rejected: set
    raw_scores: list

    @property
    def accepted(self) -> list:
        return [i for i in self.ids if i not in self.rejected]


def _window_slice(window) -> slice:
    start, end = window
    if not 0 <= start < end:
        raise EmptyWindow(f"window {window} is empty")
    return slice(start, end)


def window_mean(curve: DailyCurve, window=DEFAULT_WINDOW) -> Fraction:
    w = curve.values[_window_slice(window)]
    if len(w) == 0:
        raise EmptyWindow(f"window {window} lies outside the curve")
    return Fraction(int(w.sum()), len(w))


def fit_reference_trend(curves: Sequence[DailyCurve], window=DEFAULT_WINDOW) -> LinearTrend:
    """Least-squares line of window means against date-order index."""
    _window_slice(window)
    if len(curves) < 2:
        raise TooFewCurves("a reference trend needs at least two curves")
    days = sorted({c.day for c in curves})
    index = {d: i for i, d in enumerate(days)}
    xs = [Fraction(index[c.day]) for c in curves]
    ys = [window_mean(c, window) for c in curves]
    n = len(xs)
    x_bar = sum(xs) / n
    y_bar = sum(ys) / n
    sxx = sum((x - x_bar) ** 2 for x in xs)
    if sxx == 0:
        slope = Fraction(0)
    else:
        slope = sum((x - x_bar) * (y - y_bar) for x, y in zip(xs, ys)) / sxx
    return LinearTrend(slope, y_bar - slope * x_bar, index)


def score_curve_exact(curve: DailyCurve, trend: LinearTrend, window=DEFAULT_WINDOW) -> Fraction:
    level = trend.at(curve.day)
    return sum((abs(int(v) - level) for v in curve.values[_window_slice(window)]), Fraction(0))


def score_curve(curve: DailyCurve, trend: LinearTrend, window=DEFAULT_WINDOW) -> float:
    """Sum over the window of |count - trend value for the curve's day|."""
    return float(score_curve_exact(curve, trend, window))


def reject_outliers(curves: Sequence[DailyCurve], window=DEFAULT_WINDOW,
                    trend: Optional[LinearTrend] = None) -> RejectionResult:
    if len(curves) < 2:
        raise TooFewCurves("outlier rejection needs at least two curves")
    trend = trend or fit_reference_trend(curves, window)
    raw = [score_curve_exact(c, trend, window) for c in curves]
    top = max(raw)
    norm = [r / top if top else Fraction(0) for r in raw]
    threshold = sum(norm) / len(norm)
    ids = [c.curve_id for c in curves]
    rejected = {i for i, s in zip(ids, norm) if s > threshold}
    return RejectionResult(ids, [float(s) for s in norm], float(threshold), rejected, [float(r) for r in raw])


def group_curves(curves: Sequence[DailyCurve]) -> dict:
    """(sector, weekday) -> curves in date order."""
    groups = {}
    for c in sorted(curves, key=lambda c: (c.sector, c.day)):
        groups.setdefault((c.sector, c.weekday), []).append(c)
    return groups


def filter_training_curves(curves: Sequence[DailyCurve], window=DEFAULT_WINDOW):
    """Apply rejection per (sector, weekday) group.

    Groups with fewer than two curves pass through untouched.  Returns
    ``(accepted curves, {group: RejectionResult})``.
    """
    accepted, results = [], {}
    for key, group in group_curves(curves).items():
        if len(group) < 2:
            accepted.extend(group)
            continue
        res = reject_outliers(group, window)
        results[key] = res
        accepted.extend(c for c in group if c.curve_id not in res.rejected)
    accepted.sort(key=lambda c: (c.sector, c.day))
    return accepted, results
