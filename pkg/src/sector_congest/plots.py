"""Figure and table artifacts: each plot writes a PNG and a CSV with the same data.

The CSV is the deterministic record (same inputs give the same bytes); the PNG
is for people.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .curvefilter import DailyCurve, RejectionResult  # noqa: E402
from .errors import MissingData  # noqa: E402
from .gbm import BoostedModel  # noqa: E402

PLOT_KINDS = ("sectorCurve", "convergence", "scoreScatter", "heatmap", "rejection", "acceptedCurves")

STYLE = {
    "font.size": 9,
    "font.family": "sans-serif",
    "axes.spines.top": False,
    "axes.spines.right": False,
    "axes.grid": True,
    "grid.alpha": 0.3,
    "legend.frameon": False,
    "figure.dpi": 110,
    "savefig.bbox": "tight",
}
GOLDEN = (5 ** 0.5 - 1) / 2


@dataclass
class PlotArtifact:
    kind: str
    csv_path: Path
    png_path: Path
    rows: int


def _paths(out) -> tuple:
    out = Path(out)
    if out.suffix.lower() in (".png", ".csv"):
        out = out.with_suffix("")
    out.parent.mkdir(parents=True, exist_ok=True)
    return out.with_suffix(".csv"), out.with_suffix(".png")


def _fmt(v) -> str:
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def _write_csv(path: Path, header: Sequence[str], rows) -> int:
    n = 0
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])
            n += 1
    return n


def _figure(width=6.4, height=None, **kwargs):
    return plt.subplots(figsize=(width, height or width * GOLDEN), **kwargs)


def _save(fig, path: Path) -> None:
    fig.savefig(path, metadata={"Software": None})
    plt.close(fig)


def plot_sector_curve(actual, predicted, out, title: str = "") -> PlotArtifact:
    """Predicted against actual counts over the minutes of one day."""
    actual = np.asarray(actual)
    predicted = np.asarray(predicted, dtype=float)
    if len(actual) == 0 or len(actual) != len(predicted):
        raise MissingData("sector curve needs equally long, non-empty actual and predicted series")
    csv_path, png_path = _paths(out)
    n = _write_csv(csv_path, ["minute", "actual", "predicted"],
                   zip(range(len(actual)), actual.tolist(), predicted.tolist()))
    with plt.rc_context(STYLE):
        fig, ax = _figure()
        hours = np.arange(len(actual)) / 60
        ax.plot(hours, actual, ".", ms=2, color="0.4", label="actual")
        ax.plot(hours, predicted, "-", lw=1.2, color="C3", label="predicted")
        ax.set_xlabel("hour of day (UTC)")
        ax.set_ylabel("aircraft count")
        ax.set_title(title)
        ax.legend()
        _save(fig, png_path)
    return PlotArtifact("sectorCurve", csv_path, png_path, n)


def plot_convergence(model: BoostedModel, out) -> PlotArtifact:
    """Training mean squared error after each boosting iteration."""
    if not model.train_loss:
        raise MissingData("model carries no training loss series")
    csv_path, png_path = _paths(out)
    n = _write_csv(csv_path, ["iteration", "trainMSE"], enumerate(model.train_loss))
    with plt.rc_context(STYLE):
        fig, ax = _figure()
        ax.plot(range(len(model.train_loss)), model.train_loss, "-", color="C0")
        ax.set_yscale("log")
        ax.set_xlabel("boosting iteration")
        ax.set_ylabel("training MSE")
        ax.set_title(f"{model.sector} convergence".strip())
        _save(fig, png_path)
    return PlotArtifact("convergence", csv_path, png_path, n)


def plot_score_scatter(rows, out) -> PlotArtifact:
    """Validation score against mean daily flights per sector.

    ``rows``: iterable of ``(sector, daily_count, score, score_with_uncertainty)``;
    the last value may be ``None``.
    """
    rows = sorted(rows, key=lambda r: r[0])
    if not rows:
        raise MissingData("no validation results to plot")
    csv_path, png_path = _paths(out)
    n = _write_csv(csv_path, ["sector", "dailyCount", "score", "scoreWithUncertainty"],
                   ([s, c, a, "" if b is None else b] for s, c, a, b in rows))
    with plt.rc_context(STYLE):
        fig, ax = _figure()
        ax.scatter([r[1] for r in rows], [r[2] for r in rows], s=14, color="C0", label="without uncertainty")
        with_u = [r for r in rows if r[3] is not None]
        if with_u:
            ax.scatter([r[1] for r in with_u], [r[3] for r in with_u], s=14, marker="^", color="C1",
                       label="with uncertainty")
        ax.set_xlabel("mean daily flights in sector")
        ax.set_ylabel("cross-validation score")
        ax.set_ylim(0, 1.02)
        ax.legend()
        _save(fig, png_path)
    return PlotArtifact("scoreScatter", csv_path, png_path, n)


def plot_heatmap(series: dict, out, day_label: str = "") -> PlotArtifact:
    """Peak count per hour, one row per occupied sector of a day."""
    occupied = sorted(name for name, s in series.items() if s is not None and s.counts.any())
    if not occupied:
        raise MissingData("no occupied sectors to plot")
    table = np.array([series[name].counts.reshape(24, 60).max(axis=1) for name in occupied])
    csv_path, png_path = _paths(out)
    n = _write_csv(csv_path, ["sector"] + [f"h{h:02d}" for h in range(24)],
                   ([name] + row.tolist() for name, row in zip(occupied, table)))
    with plt.rc_context(STYLE):
        fig, ax = _figure(height=max(2.0, 0.22 * len(occupied) + 1.0))
        ax.grid(False)
        im = ax.imshow(table, aspect="auto", cmap="viridis", interpolation="nearest")
        ax.set_yticks(range(len(occupied)))
        ax.set_yticklabels(occupied, fontsize=6)
        ax.set_xlabel("hour of day (UTC)")
        ax.set_title(day_label)
        fig.colorbar(im, ax=ax, label="peak aircraft count")
        _save(fig, png_path)
    return PlotArtifact("heatmap", csv_path, png_path, n)


def plot_rejection(result: RejectionResult, out, title: str = "") -> PlotArtifact:
    """Normalised scores with the mean threshold; rejected curves highlighted."""
    if not result.ids:
        raise MissingData("empty rejection result")
    csv_path, png_path = _paths(out)
    n = _write_csv(csv_path, ["curve", "score", "rawScore", "threshold", "rejected"],
                   ([i, s, r, result.threshold, int(i in result.rejected)]
                    for i, s, r in zip(result.ids, result.scores, result.raw_scores)))
    with plt.rc_context(STYLE):
        fig, ax = _figure()
        colors = ["C3" if i in result.rejected else "C0" for i in result.ids]
        ax.bar(range(len(result.ids)), result.scores, color=colors)
        ax.axhline(result.threshold, color="k", lw=1, ls="--", label="threshold")
        ax.set_xticks(range(len(result.ids)))
        ax.set_xticklabels([i.rsplit("/", 1)[-1] for i in result.ids], rotation=90, fontsize=6)
        ax.set_ylabel("normalised score")
        ax.set_title(title)
        ax.legend()
        _save(fig, png_path)
    return PlotArtifact("rejection", csv_path, png_path, n)


def plot_accepted_curves(curves: Sequence[DailyCurve], result: RejectionResult, out,
                         title: str = "") -> PlotArtifact:
    """All curves of a group in one panel, the accepted ones in another."""
    if not curves:
        raise MissingData("no curves to plot")
    csv_path, png_path = _paths(out)
    curves = sorted(curves, key=lambda c: c.day)
    rows = ([c.curve_id, int(c.curve_id not in result.rejected), m, int(v)]
            for c in curves for m, v in enumerate(c.values))
    n = _write_csv(csv_path, ["curve", "accepted", "minute", "count"], rows)
    with plt.rc_context(STYLE):
        fig, (top, bottom) = _figure(height=6.4, nrows=2, sharex=True)
        hours = np.arange(len(curves[0].values)) / 60
        for c in curves:
            rejected = c.curve_id in result.rejected
            top.plot(hours, c.values, lw=0.7, color="C3" if rejected else "0.5")
            if not rejected:
                bottom.plot(hours, c.values, lw=0.7)
        top.set_title(f"{title} all curves".strip())
        bottom.set_title("accepted curves")
        bottom.set_xlabel("hour of day (UTC)")
        for ax in (top, bottom):
            ax.set_ylabel("aircraft count")
        _save(fig, png_path)
    return PlotArtifact("acceptedCurves", csv_path, png_path, n)


def emit_plot(kind: str, out, **params) -> PlotArtifact:
    """Dispatch by kind name; ``params`` are the keyword arguments of the plot function."""
    funcs = {
        "sectorCurve": plot_sector_curve,
        "convergence": plot_convergence,
        "scoreScatter": plot_score_scatter,
        "heatmap": plot_heatmap,
        "rejection": plot_rejection,
        "acceptedCurves": plot_accepted_curves,
    }
    if kind not in funcs:
        raise ValueError(f"unknown plot kind {kind!r}; expected one of {', '.join(PLOT_KINDS)}")
    return funcs[kind](out=out, **params)


