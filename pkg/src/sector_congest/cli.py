"""Command line entry point: ``sector-congest <command> ...``.

Tabular output goes to stdout as tab-separated lines with a header row.  The
data root comes from ``--root`` or ``SECTOR_CONGEST_ROOT`` (default ``./data``).
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from datetime import date, timedelta
from pathlib import Path

from .curvefilter import WEEKDAYS, reject_outliers
from .errors import SectorCongestError
from .features import WeatherObservation, WeatherTable, encode_matrix
from .gbm import BoostConfig
from .messages import day_start, format_time, parse_time
from .occupancy import MINUTES_PER_DAY, CountStore
from .plots import PLOT_KINDS, emit_plot
from .prep import PrepConfig, Preparer
from .rawstore import RawStore
from .serving import (
    ModelStore, PredictionRequest, PredictionService, TrainConfig, days_in_range, load_validation_report,
    sector_curves, train_all_sectors, validate_sectors, weather_path, write_validation_report,
)
from .synth import ScenarioSpec, write_scenario

log = logging.getLogger("sector_congest")


def _root(args) -> Path:
    return Path(args.root or os.environ.get("SECTOR_CONGEST_ROOT") or "data")


def _day(text: str) -> date:
    try:
        return date.fromisoformat(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a YYYY-MM-DD date: {text!r}") from None


def _weekday(text: str) -> int:
    for i, name in enumerate(WEEKDAYS):
        if text.lower()[:3] == name.lower():
            return i
    raise argparse.ArgumentTypeError(f"not a weekday: {text!r}")


def _emit(rows, header) -> None:
    print("\t".join(header))
    for row in rows:
        print("\t".join("" if v is None else str(v) for v in row))


def _open_input(path: str):
    return sys.stdin if path == "-" else open(path, encoding="utf-8")


# ---------------------------------------------------------------------------
# commands


def cmd_ingest(args) -> int:
    root = _root(args)
    with _open_input(args.input) as fh:
        report = RawStore(root, fsync=not args.no_fsync).ingest_day((line.rstrip("\n") for line in fh), args.day)
    if args.weather:
        dest = weather_path(root)
        dest.parent.mkdir(parents=True, exist_ok=True)
        with open(args.weather, encoding="utf-8") as src, open(dest, "a", encoding="utf-8") as out:
            out.writelines(line if line.endswith("\n") else line + "\n" for line in src if line.strip())
    _emit([("day", report.day), ("accepted", report.accepted), ("rejected", report.rejected),
           ("bytesStored", report.bytes_stored)], ("key", "value"))
    for lineno, reason in report.rejections[: args.show_rejections]:
        print(f"rejected\t{lineno}\t{reason}", file=sys.stderr)
    return 0


def cmd_prepare(args) -> int:
    cfg = PrepConfig(args.lookback, args.lookahead, args.partitions, args.dwell)
    report = Preparer(_root(args), cfg).run_preparation(args.day)
    rows = [("day", report.day), ("flightsSeen", report.flights_seen), ("documentsBuilt", report.documents_built),
            ("documentsCorrelated", report.documents_correlated), ("sectorsCounted", report.sectors_counted),
            ("failures", len(report.failures))]
    rows += [(f"seconds.{k}", f"{v:.3f}") for k, v in report.elapsed.items()]
    _emit(rows, ("key", "value"))
    return 0


def _group_curves(args) -> list:
    counts = CountStore(_root(args))
    days = [d for d in days_in_range(counts, args.day_from, args.day_to) if d.weekday() == args.weekday]
    return sector_curves(counts, args.sector, days)


def cmd_filter(args) -> int:
    curves = _group_curves(args)
    window = (args.window_start, args.window_end)
    result = reject_outliers(curves, window)
    rows = [(i, f"{s:.6f}", f"{r:.6f}", int(i in result.rejected))
            for i, s, r in zip(result.ids, result.scores, result.raw_scores)]
    header = ("curve", "score", "rawScore", "rejected")
    _emit(rows, header)
    print(f"threshold\t{result.threshold:.6f}")
    report = Path(args.report or _root(args) / "reports" / f"filter-{args.sector}-{WEEKDAYS[args.weekday]}.tsv")
    report.parent.mkdir(parents=True, exist_ok=True)
    with open(report, "w", encoding="utf-8") as fh:
        fh.write("\t".join(header) + "\n")
        fh.writelines("\t".join(map(str, r)) + "\n" for r in rows)
        fh.write(f"# threshold\t{result.threshold:.6f}\n")
    if args.plot:
        title = f"{args.sector} {WEEKDAYS[args.weekday]}"
        emit_plot("rejection", f"{args.plot}-scores", result=result, title=title)
        emit_plot("acceptedCurves", f"{args.plot}-curves", curves=curves, result=result, title=title)
    return 0


def _boost(args) -> BoostConfig:
    return BoostConfig(args.learners, args.shrinkage, args.max_depth, args.min_leaf, args.line_search)


def _train_config(args) -> TrainConfig:
    return TrainConfig(
        boost=_boost(args), with_uncertainty=args.with_uncertainty, use_weather=not args.no_weather,
        filter_curves=not args.no_filter, sectors=args.sector or None,
    )


def cmd_train(args) -> int:
    config = _train_config(args)
    config.cv_k = args.cv
    report = train_all_sectors(_root(args), args.day_from, args.day_to, config)
    _emit(
        [(r.sector, r.model_id, r.samples, r.curves, len(r.rejected), f"{r.duration:.3f}",
          "" if r.cv_mean_score is None else f"{r.cv_mean_score:.6f}", r.error)
         for r in report.sectors],
        ("sector", "modelId", "samples", "curves", "rejectedCurves", "seconds", "cvMeanScore", "error"),
    )
    print(f"total\t{len(report.days)} days\t{len(report.trained)} models\t{report.total_duration:.3f}s")
    return 0 if all(r.error is None for r in report.sectors) else 1


def cmd_validate(args) -> int:
    root = _root(args)
    rows = validate_sectors(root, args.day_from, args.day_to, args.k, args.seed, _train_config(args),
                            args.compare_uncertainty)
    _emit(
        [(r.sector, f"{r.daily_count:.2f}", r.samples, f"{r.score:.6f}",
          None if r.score_with_uncertainty is None else f"{r.score_with_uncertainty:.6f}") for r in rows],
        ("sector", "dailyCount", "samples", "score", "scoreWithUncertainty"),
    )
    write_validation_report(rows, args.report or root / "reports" / "validation.json")
    return 0


def cmd_predict(args) -> int:
    req = PredictionRequest(
        args.sector, parse_time(args.start, "start"), parse_time(args.end, "end"), args.step,
        WeatherObservation.from_dict(json.loads(args.weather)) if args.weather else None,
        args.uncertainty,
    )
    resp = PredictionService(_root(args)).handle_predict_request(req)
    if args.json:
        print(json.dumps(resp.to_dict(), sort_keys=True))
    else:
        _emit(((format_time(t), f"{c:.4f}") for t, c in resp.buckets), ("time", "predictedCount"))
        print(f"# model {resp.model_id}, {resp.elapsed_millis:.1f} ms", file=sys.stderr)
    return 0


def cmd_serve(args) -> int:
    from .server import serve

    serve(_root(args), args.host, args.port)
    return 0


def cmd_gen(args) -> int:
    spec = ScenarioSpec.load(args.spec) if args.spec else ScenarioSpec()
    if args.seed is not None:
        spec.seed = args.seed
    spec.validate()
    per_day = write_scenario(spec, args.out)
    _emit(sorted(per_day.items()), ("day", "messages"))
    return 0


def _sector_curve_params(args) -> dict:
    root = _root(args)
    if not args.sector or not args.day:
        raise SectorCongestError("sectorCurve needs --sector and --day")
    counts = CountStore(root)
    series = counts.load_series(args.sector, args.day)
    actual = [0] * MINUTES_PER_DAY if series is None else series.counts.tolist()
    stored = ModelStore(root).load_model(args.sector)
    times = [day_start(args.day) + timedelta(minutes=m) for m in range(MINUTES_PER_DAY)]
    table = WeatherTable.load(weather_path(root))
    weather = [table.lookup(args.sector, t) for t in times]
    unc = None
    if stored.model.schema.with_uncertainty and series is not None:
        unc = series.uncertainty.tolist()
    X = encode_matrix(times, weather, unc, stored.model.schema)
    return {"actual": actual, "predicted": stored.model.predict_counts(X),
            "title": f"{args.sector} {args.day.isoformat()}"}


def cmd_plot(args) -> int:
    root = _root(args)
    kind = args.kind
    if kind == "sectorCurve":
        params = _sector_curve_params(args)
    elif kind == "convergence":
        models = ModelStore(root)
        if args.model_id:
            stored = models.load_by_id(args.model_id)
        elif args.sector:
            stored = models.load_model(args.sector)
        else:
            raise SectorCongestError("convergence needs --sector or --model-id")
        params = {"model": stored.model}
    elif kind == "scoreScatter":
        rows = load_validation_report(args.report or root / "reports" / "validation.json")
        params = {"rows": [(r.sector, r.daily_count, r.score, r.score_with_uncertainty) for r in rows]}
    elif kind == "heatmap":
        if not args.day:
            raise SectorCongestError("heatmap needs --day")
        params = {"series": CountStore(root).load_day(args.day), "day_label": args.day.isoformat()}
    else:
        if not args.sector or args.weekday is None:
            raise SectorCongestError(f"{kind} needs --sector and --weekday")
        curves = _group_curves(args)
        params = {"result": reject_outliers(curves, (args.window_start, args.window_end)),
                  "title": f"{args.sector} {WEEKDAYS[args.weekday]}"}
        if kind == "acceptedCurves":
            params["curves"] = curves
    art = emit_plot(kind, args.out, **params)
    _emit([(art.kind, art.csv_path, art.png_path, art.rows)], ("kind", "csv", "png", "rows"))
    return 0


def cmd_prune(args) -> int:
    removed = RawStore(_root(args)).prune(args.day)
    print(f"pruned\t{args.day}\t{int(removed)}")
    return 0


def cmd_query(args) -> int:
    count, level = CountStore(_root(args)).query_count(args.sector, parse_time(args.minute, "minute"))
    _emit([(args.sector, args.minute, count, level)], ("sector", "minute", "count", "uncertainty"))
    return 0


# ---------------------------------------------------------------------------
# parser


def _add_boost_args(p) -> None:
    p.add_argument("--from", dest="day_from", type=_day, help="first day (default: first prepared day)")
    p.add_argument("--to", dest="day_to", type=_day, help="last day (default: last prepared day)")
    p.add_argument("--with-uncertainty", action="store_true", help="add the uncertainty level as a feature")
    p.add_argument("--shrinkage", type=float, default=0.1)
    p.add_argument("--learners", type=int, default=400)
    p.add_argument("--max-depth", type=int, default=4)
    p.add_argument("--min-leaf", type=int, default=5)
    p.add_argument("--line-search", action="store_true", help="scale each tree by a fitted step length")
    p.add_argument("--no-weather", action="store_true")
    p.add_argument("--no-filter", action="store_true", help="skip outlier curve rejection")
    p.add_argument("--sector", action="append", help="restrict to a sector (repeatable)")


def _add_window_args(p) -> None:
    p.add_argument("--window-start", type=int, default=720, help="reference window start, minute of day")
    p.add_argument("--window-end", type=int, default=735, help="reference window end (exclusive)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="sector-congest", description="Sector congestion pipeline")
    parser.add_argument("--root", help="data root (default: $SECTOR_CONGEST_ROOT or ./data)")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="append one day of raw message lines")
    p.add_argument("--day", type=_day, required=True)
    p.add_argument("--input", required=True, help="message file, one JSON message per line ('-' for stdin)")
    p.add_argument("--weather", help="weather observations (JSON lines) to add to the data root")
    p.add_argument("--no-fsync", action="store_true")
    p.add_argument("--show-rejections", type=int, default=20)
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("prepare", help="build flight documents and sector counts for a day")
    p.add_argument("--day", type=_day, required=True)
    p.add_argument("--lookback", type=int, default=5)
    p.add_argument("--lookahead", type=int, default=1)
    p.add_argument("--partitions", type=int, default=16)
    p.add_argument("--dwell", type=int, default=20, help="default dwell minutes in the last sector")
    p.set_defaults(func=cmd_prepare)

    p = sub.add_parser("filter", help="score and reject outlier curves of a sector/weekday")
    p.add_argument("--sector", required=True)
    p.add_argument("--weekday", type=_weekday, required=True)
    p.add_argument("--from", dest="day_from", type=_day)
    p.add_argument("--to", dest="day_to", type=_day)
    p.add_argument("--report", help="report file (default: <root>/reports/filter-<sector>-<weekday>.tsv)")
    p.add_argument("--plot", help="path prefix for rejection and accepted-curve figures")
    _add_window_args(p)
    p.set_defaults(func=cmd_filter)

    p = sub.add_parser("train", help="train and activate one model per sector")
    _add_boost_args(p)
    p.add_argument("--cv", type=int, help="also record a k-fold score per sector")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("validate", help="k-fold cross-validation per sector")
    _add_boost_args(p)
    p.add_argument("--k", type=int, default=5)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--compare-uncertainty", action="store_true", help="also score with the uncertainty feature")
    p.add_argument("--report", help="JSON report (default: <root>/reports/validation.json)")
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("predict", help="predict counts for a sector over a horizon")
    p.add_argument("--sector", required=True)
    p.add_argument("--start", required=True, help="UTC time, e.g. 2018-03-05T12:00:00Z")
    p.add_argument("--end", required=True)
    p.add_argument("--step", type=int, default=1, help="minutes per bucket")
    p.add_argument("--weather", help='forecast JSON, e.g. \'{"temperature": 12}\'')
    p.add_argument("--uncertainty", type=int, choices=(1, 2, 3))
    p.add_argument("--json", action="store_true", help="print the response object")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("serve", help="run the HTTP prediction service")
    p.add_argument("--port", type=int, default=8080)
    p.add_argument("--host", default="127.0.0.1")
    p.set_defaults(func=cmd_serve)

    p = sub.add_parser("gen", help="generate a synthetic scenario")
    p.add_argument("--spec", help="scenario spec JSON (default: built-in spec)")
    p.add_argument("--seed", type=int, help="overrides the spec's seed")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("plot", help="write a figure (PNG) and its data (CSV)")
    p.add_argument("--kind", required=True, choices=PLOT_KINDS)
    p.add_argument("--out", required=True, help="output path prefix")
    p.add_argument("--sector")
    p.add_argument("--day", type=_day)
    p.add_argument("--weekday", type=_weekday)
    p.add_argument("--from", dest="day_from", type=_day)
    p.add_argument("--to", dest="day_to", type=_day)
    p.add_argument("--model-id")
    p.add_argument("--report", help="validation report for scoreScatter")
    _add_window_args(p)
    p.set_defaults(func=cmd_plot)

    p = sub.add_parser("prune", help="drop one day of raw messages")
    p.add_argument("--day", type=_day, required=True)
    p.set_defaults(func=cmd_prune)

    p = sub.add_parser("query", help="count and uncertainty of one sector-minute")
    p.add_argument("--sector", required=True)
    p.add_argument("--minute", required=True)
    p.set_defaults(func=cmd_query)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except SectorCongestError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
