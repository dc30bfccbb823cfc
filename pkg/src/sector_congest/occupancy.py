"""Sector entry/exit correlation (DMS-A), per-minute sector counts (DMS-B),
and the message-order uncertainty measure.

Minute convention: an interval ``[entry, exit)`` occupies every minute ``m``
with ``floor(entry) <= m < exit``.  When two consecutive intervals of the same
flight both claim a minute (sub-minute sector boundary), the later sector
keeps it, so every airborne flight-minute is counted in exactly one sector.
"""

from __future__ import annotations

import json
import os
import shutil
from dataclasses import dataclass, field
from datetime import date, datetime, timedelta
from pathlib import Path
from typing import Iterable, Optional
from urllib.parse import quote, unquote

import numpy as np

from .documents import BucketEntry, FlightDocument
from .errors import DayNotPrepared
from .messages import DESIRABLE_ORDER, MsgType, Qualifier, day_start, floor_minute, format_time, parse_time

MINUTES_PER_DAY = 1440
DMS_FORMAT_VERSION = 1

LEVEL_CONSISTENT = 1
LEVEL_RECOVERABLE = 2
LEVEL_SEVERE = 3


@dataclass(frozen=True)
class SectorInterval:
    sector: str
    entry: datetime
    exit: datetime

    def __post_init__(self):
        if not self.entry < self.exit:
            raise ValueError(f"interval for {self.sector} has entry >= exit")


# ---------------------------------------------------------------------------
# correlation


def actual_departure(doc: FlightDocument) -> Optional[datetime]:
    """ACTUAL departure time from departureInformation, else from the
    departure field carried by arrivalInformation."""
    dep = doc.departure
    if dep is not None and dep.payload.qualifier is Qualifier.ACTUAL:
        return dep.payload.departure_time
    arr = doc.arrival
    if arr is not None and arr.payload.departure_qualifier is Qualifier.ACTUAL:
        return arr.payload.departure_time
    return None


def arrival_time(doc: FlightDocument) -> Optional[datetime]:
    arr = doc.arrival
    return None if arr is None else arr.payload.arrival_time


def inconsistent_times(doc: FlightDocument) -> bool:
    """Arrival at or before the (ACTUAL) departure."""
    dep, arr = actual_departure(doc), arrival_time(doc)
    return dep is not None and arr is not None and arr <= dep


def correlate_flight(doc: FlightDocument, default_dwell_min: int = 20) -> list:
    """Absolute sector intervals for one flight; empty when it cannot be counted."""
    if doc.sectors is None:
        return []
    dep = actual_departure(doc)
    if dep is None or inconsistent_times(doc):
        return []
    arr = arrival_time(doc)
    milestones = doc.sectors.payload.milestones
    entries = [dep + timedelta(minutes=off) for _, off in milestones]
    out = []
    for k, (name, _) in enumerate(milestones):
        if k + 1 < len(entries):
            exit_ = entries[k + 1]
        elif arr is not None and arr > entries[k]:
            exit_ = arr
        else:
            exit_ = entries[k] + timedelta(minutes=default_dwell_min)
        out.append(SectorInterval(name, entries[k], exit_))
    return out


def bucketize_intervals(intervals: Iterable[SectorInterval], tracks: Optional[dict] = None) -> list:
    """One BucketEntry per occupied minute, ordered by time.

    ``tracks`` maps minute-aligned times to TrackPayload.
    """
    tracks = tracks or {}
    claimed = {}
    one = timedelta(minutes=1)
    for iv in intervals:
        m = floor_minute(iv.entry)
        while m < iv.exit:
            claimed[m] = iv.sector
            m += one
    out = []
    for m in sorted(claimed):
        track = tracks.get(m)
        out.append(BucketEntry(m, claimed[m], track is not None, track))
    return out


# ---------------------------------------------------------------------------
# uncertainty measure


def message_order_findings(messages: list):
    """Inspect a flight's full message window (ordered by msgTime, seq).

    Returns ``(cases, order_anomaly)`` where ``cases`` is the subset of
    confusion cases {1, 3, 4} present:

    1. an ESTIMATED departure was issued while an ACTUAL one is also known
    3. a departure message was issued after an arrival message
    4. the same event (departure or arrival) reported with different times
    """
    cases = set()
    deps = [m for m in messages if m.msg_type is MsgType.DEPARTURE]
    arrs = [m for m in messages if m.msg_type is MsgType.ARRIVAL]

    actual_deps = {m.payload.departure_time for m in deps if m.payload.qualifier is Qualifier.ACTUAL}
    actual_deps |= {
        m.payload.departure_time for m in arrs if m.payload.departure_qualifier is Qualifier.ACTUAL
    }
    actual_arrs = {m.payload.arrival_time for m in arrs if m.payload.arrival_qualifier is Qualifier.ACTUAL}

    if any(m.payload.qualifier is Qualifier.ESTIMATED for m in deps) and actual_deps:
        cases.add(1)
    if deps and arrs and max(m.order_key for m in deps) > min(m.order_key for m in arrs):
        cases.add(3)
    if len(actual_deps) > 1 or len(actual_arrs) > 1:
        cases.add(4)

    first_seen = []
    for m in messages:
        if m.msg_type not in first_seen:
            first_seen.append(m.msg_type)
    ranks = [DESIRABLE_ORDER.index(t) for t in first_seen]
    order_anomaly = ranks != sorted(ranks)
    return frozenset(cases), order_anomaly


def flight_uncertainty(doc: FlightDocument) -> int:
    if inconsistent_times(doc):
        return LEVEL_SEVERE
    if doc.confusion_cases or doc.order_anomaly:
        return LEVEL_RECOVERABLE
    return LEVEL_CONSISTENT


def compute_uncertainty(doc: FlightDocument) -> dict:
    """Uncertainty level for each of the flight's buckets (minute -> level)."""
    level = flight_uncertainty(doc)
    return {b.time: level for b in doc.dms_buckets}


# ---------------------------------------------------------------------------
# DMS-A records and the per-minute reduce


@dataclass
class FlightOccupancy:
    """One DMS-A record."""

    flight_ref: str
    intervals: list
    buckets: list
    level: int

    def to_dict(self) -> dict:
        return {
            "flightRef": self.flight_ref,
            "intervals": [[iv.sector, format_time(iv.entry), format_time(iv.exit)] for iv in self.intervals],
            "uncertainty": self.level,
        }


def occupancy_from_document(doc: FlightDocument, default_dwell_min: int = 20) -> FlightOccupancy:
    intervals = correlate_flight(doc, default_dwell_min)
    buckets = bucketize_intervals(intervals, doc.track_history)
    doc.dms_buckets = buckets
    return FlightOccupancy(doc.flight_ref, intervals, buckets, flight_uncertainty(doc))


@dataclass
class SectorCountSeries:
    sector: str
    day: date
    counts: np.ndarray = None  # int32[1440]
    uncertainty: np.ndarray = None  # int8[1440]
    flights: list = None  # 1440 sorted tuples of flightRef

    def __post_init__(self):
        if self.counts is None:
            self.counts = np.zeros(MINUTES_PER_DAY, dtype=np.int32)
        if self.uncertainty is None:
            self.uncertainty = np.ones(MINUTES_PER_DAY, dtype=np.int8)
        if self.flights is None:
            self.flights = [()] * MINUTES_PER_DAY

    def __eq__(self, other):
        if not isinstance(other, SectorCountSeries):
            return NotImplemented
        return self.to_dict() == other.to_dict()

    def to_dict(self) -> dict:
        rows = [
            [m, int(self.counts[m]), int(self.uncertainty[m]), list(self.flights[m])]
            for m in np.flatnonzero(self.counts).tolist()
        ]
        return {
            "formatVersion": DMS_FORMAT_VERSION,
            "sector": self.sector,
            "day": self.day.isoformat(),
            "buckets": rows,
        }

    @classmethod
    def from_dict(cls, obj: dict) -> "SectorCountSeries":
        s = cls(obj["sector"], date.fromisoformat(obj["day"]))
        s.flights = list(s.flights)
        for m, count, level, flights in obj["buckets"]:
            s.counts[m] = count
            s.uncertainty[m] = level
            s.flights[m] = tuple(flights)
        return s


def map_occupancy(records: Iterable[FlightOccupancy], day: date) -> dict:
    """Partial sector map: sector -> minute -> [flight set, max level]."""
    start = day_start(day)
    partial = {}
    for rec in records:
        for b in rec.buckets:
            m = int((b.time - start).total_seconds()) // 60
            if not 0 <= m < MINUTES_PER_DAY:
                continue
            cell = partial.setdefault(b.sector, {}).setdefault(m, [set(), LEVEL_CONSISTENT])
            cell[0].add(rec.flight_ref)
            cell[1] = max(cell[1], rec.level)
    return partial


def merge_partials(a: dict, b: dict) -> dict:
    """Associative, commutative merge of two partial sector maps (new object)."""
    out = {}
    for part in (a, b):
        for sector, minutes_ in part.items():
            dst = out.setdefault(sector, {})
            for m, (flights, level) in minutes_.items():
                cell = dst.setdefault(m, [set(), LEVEL_CONSISTENT])
                cell[0] |= flights
                cell[1] = max(cell[1], level)
    return out


def finalize_partial(partial: dict, day: date) -> dict:
    out = {}
    for sector, minutes_ in partial.items():
        s = SectorCountSeries(sector, day)
        s.flights = list(s.flights)
        for m, (flights, level) in minutes_.items():
            s.counts[m] = len(flights)
            s.uncertainty[m] = level
            s.flights[m] = tuple(sorted(flights))
        out[sector] = s
    return out


def reduce_sector_counts(records: Iterable[FlightOccupancy], day: date) -> dict:
    """Sector -> SectorCountSeries for every sector occupied during ``day``."""
    return finalize_partial(map_occupancy(records, day), day)


# ---------------------------------------------------------------------------
# PI persistence and read path


def _sector_file(sector: str) -> str:
    return quote(sector, safe="") + ".doc"


def _canonical(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


class CountStore:
    """Reads and writes the daily DMS-A / DMS-B collections under ``<root>/pi``."""

    def __init__(self, root):
        self.root = Path(root)
        self.base = self.root / "pi"

    def dms_a_dir(self, day: date) -> Path:
        return self.base / f"dms-a-{day.isoformat()}"

    def dms_b_dir(self, day: date) -> Path:
        return self.base / f"dms-b-{day.isoformat()}"

    def _swap_in(self, target: Path, files: dict) -> None:
        tmp = target.with_name(target.name + ".tmp")
        if tmp.exists():
            shutil.rmtree(tmp)
        tmp.mkdir(parents=True)
        for name, text in files.items():
            (tmp / name).write_text(text, encoding="utf-8")
        old = target.with_name(target.name + ".old")
        if target.exists():
            if old.exists():
                shutil.rmtree(old)
            os.rename(target, old)
        os.rename(tmp, target)
        if old.exists():
            shutil.rmtree(old)

    def write_dms_a(self, day: date, records: Iterable[FlightOccupancy]) -> None:
        lines = "".join(_canonical(r.to_dict()) + "\n" for r in sorted(records, key=lambda r: r.flight_ref))
        self._swap_in(self.dms_a_dir(day), {"flights.jsonl": lines})

    def write_dms_b(self, day: date, series: dict) -> None:
        files = {_sector_file(name): _canonical(s.to_dict()) + "\n" for name, s in series.items()}
        files["_manifest.json"] = _canonical({"day": day.isoformat(), "sectors": sorted(series)}) + "\n"
        self._swap_in(self.dms_b_dir(day), files)

    def is_prepared(self, day: date) -> bool:
        return (self.dms_b_dir(day) / "_manifest.json").exists()

    def prepared_days(self) -> list:
        if not self.base.is_dir():
            return []
        days = []
        for p in self.base.glob("dms-b-*"):
            if p.is_dir() and (p / "_manifest.json").exists():
                days.append(date.fromisoformat(p.name[len("dms-b-"):]))
        return sorted(days)

    def sectors(self, day: date) -> list:
        if not self.is_prepared(day):
            raise DayNotPrepared(f"{day.isoformat()} has not been prepared")
        with open(self.dms_b_dir(day) / "_manifest.json", encoding="utf-8") as fh:
            return json.load(fh)["sectors"]

    def load_series(self, sector: str, day: date) -> Optional[SectorCountSeries]:
        if not self.is_prepared(day):
            raise DayNotPrepared(f"{day.isoformat()} has not been prepared")
        path = self.dms_b_dir(day) / _sector_file(sector)
        if not path.exists():
            return None
        with open(path, encoding="utf-8") as fh:
            return SectorCountSeries.from_dict(json.load(fh))

    def load_day(self, day: date) -> dict:
        return {name: self.load_series(name, day) for name in self.sectors(day)}

    def load_dms_a(self, day: date) -> list:
        path = self.dms_a_dir(day) / "flights.jsonl"
        if not path.exists():
            raise DayNotPrepared(f"{day.isoformat()} has no DMS-A collection")
        out = []
        with open(path, encoding="utf-8") as fh:
            for line in fh:
                obj = json.loads(line)
                intervals = [SectorInterval(s, parse_time(a), parse_time(b)) for s, a, b in obj["intervals"]]
                out.append(FlightOccupancy(obj["flightRef"], intervals, bucketize_intervals(intervals), obj["uncertainty"]))
        return out

    def query_count(self, sector: str, minute: datetime) -> tuple:
        """(count, uncertainty) for one sector-minute; unoccupied -> (0, 1)."""
        day = minute.date()
        series = self.load_series(sector, day)
        if series is None:
            return 0, LEVEL_CONSISTENT
        m = int((floor_minute(minute) - day_start(day)).total_seconds()) // 60
        return int(series.counts[m]), int(series.uncertainty[m])


def sector_file_name(sector: str) -> str:
    return _sector_file(sector)


def sector_from_file_name(name: str) -> str:
    return unquote(name[: -len(".doc")])
