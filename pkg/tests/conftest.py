"""Shared builders and small prepared corpora."""

from __future__ import annotations

import json
from datetime import date, datetime, timedelta

import pytest

from sector_congest.messages import (
    UTC, ArrivalPayload, DeparturePayload, MsgType, Qualifier, RawMessage, SectorsPayload, TrackPayload,
)
from sector_congest.prep import Preparer
from sector_congest.rawstore import RawStore
from sector_congest.synth import ScenarioSpec, generate_scenario, generate_weather, lines_by_day

DAY = date(2018, 3, 14)


def at(hh: int, mm: int = 0, ss: int = 0, day: date = DAY) -> datetime:
    return datetime(day.year, day.month, day.day, hh, mm, ss, tzinfo=UTC)


def departure(ref, msg_time, dep_time, qualifier=Qualifier.ACTUAL, seq=None):
    return RawMessage(MsgType.DEPARTURE, ref, msg_time, DeparturePayload(dep_time, qualifier), seq)


def arrival(ref, msg_time, arr_time, dep_time=None, seq=None):
    dep_q = Qualifier.ACTUAL if dep_time is not None else None
    return RawMessage(MsgType.ARRIVAL, ref, msg_time, ArrivalPayload(arr_time, Qualifier.ACTUAL, dep_time, dep_q), seq)


def sectors(ref, msg_time, milestones, seq=None):
    return RawMessage(MsgType.SECTORS, ref, msg_time, SectorsPayload(tuple(milestones)), seq)


def track(ref, msg_time, seq=None, lat=40.0, lon=-75.0):
    return RawMessage(MsgType.TRACK, ref, msg_time, TrackPayload(lat, lon, 35000.0, 450.0, 90.0), seq)


def clean_flight(ref="F1", dep=None, milestones=(("S1", 0), ("S2", 17)), arr_offset=40):
    """Desirable order: departure, track, sectors, arrival."""
    dep = dep or at(12)
    arr = dep + timedelta(minutes=arr_offset)
    return [
        departure(ref, dep, dep),
        track(ref, dep + timedelta(seconds=30)),
        sectors(ref, dep + timedelta(seconds=60), milestones),
        arrival(ref, arr, arr, dep),
    ]


def prepare_scenario(root, spec: ScenarioSpec, days=None):
    """Ingest a generated scenario and prepare the requested days (default: all spec days)."""
    lines, truth = generate_scenario(spec)
    store = RawStore(root, fsync=False)
    for d, day_lines in sorted(lines_by_day(lines).items()):
        store.ingest_day(day_lines, d)
    prep = Preparer(root, store=store)
    reports = {d: prep.run_preparation(d) for d in (days or spec.days)}
    return lines, truth, reports


@pytest.fixture(scope="session")
def small_corpus(tmp_path_factory):
    """Three prepared days, 250 flights/day, some anomalies, weather for one sector."""
    root = tmp_path_factory.mktemp("corpus")
    spec = ScenarioSpec(
        sectors=[f"ZSC{i:02d}" for i in range(1, 6)], flights_per_day=250, n_days=3, seed=11,
        anomaly_rates={1: 0.05, 2: 0.03, 3: 0.05, 4: 0.05}, weather_sectors=["ZSC01"],
    )
    lines, truth, reports = prepare_scenario(root, spec)
    wpath = root / "weather" / "observations.jsonl"
    wpath.parent.mkdir(parents=True, exist_ok=True)
    wpath.write_text("".join(json.dumps(w, sort_keys=True) + "\n" for w in generate_weather(spec)))
    return {"root": root, "spec": spec, "lines": lines, "truth": truth, "reports": reports}


# -- acceptance verdicts ------------------------------------------------------------

ACCEPTANCE = {}  # criterion number -> (passed, title, note)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        passed, title, note = ACCEPTANCE[n]
        line = f"criterion {n:2d} {'PASS' if passed else 'FAIL'}  {title}"
        terminalreporter.write_line(f"{line}  ({note})" if note else line)
