"""Daily preparation pipeline: raw collections -> flight documents -> sector counts.

The five steps run in order, each finishing before the next starts:

1. ensure flightRef/msgType indices on the raw collections in the window
2. scan the day's distinct flight references, plus next-day references whose
   occupancy reaches back into the day, and assign FI partitions
3. build one consolidated document per flight (most recent message per type)
4. correlate each document into sector intervals and minute buckets (DMS-A)
5. reduce all buckets of the day to per-sector minute counts (DMS-B)
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
import time
from dataclasses import dataclass, field
from datetime import date, timedelta
from pathlib import Path

from .documents import FlightDocument, document_from_dict, document_line
from .errors import LedgerCorrupt, NoMessages, NotAssigned, SectorCongestError
from .messages import MsgType, floor_minute
from .occupancy import (
    CountStore,
    map_occupancy,
    message_order_findings,
    occupancy_from_document,
    reduce_sector_counts,
)
from .rawstore import RawStore

log = logging.getLogger(__name__)


@dataclass
class PrepConfig:
    lookback_days: int = 5
    lookahead_days: int = 1  # lets a flight crossing midnight see its arrival message
    partitions: int = 16
    default_dwell_min: int = 20


@dataclass
class PrepReport:
    day: date
    flights_seen: int = 0
    documents_built: int = 0
    documents_correlated: int = 0
    sectors_counted: int = 0
    elapsed: dict = field(default_factory=dict)  # step name -> seconds
    failures: list = field(default_factory=list)  # [(flightRef, reason)]


def build_flight_document(
    store: RawStore, flight_ref: str, end_day: date, lookback_days: int = 5, lookahead_days: int = 0
) -> FlightDocument:
    messages = store.fetch_flight_messages(
        flight_ref, end_day, lookback_days=lookback_days, lookahead_days=lookahead_days
    )
    if not messages:
        raise NoMessages(f"no messages for {flight_ref} in window ending {end_day}")
    return document_from_messages(flight_ref, messages)


def document_from_messages(flight_ref: str, messages: list) -> FlightDocument:
    """Consolidate one flight's messages (already ordered by msgTime, seq)."""
    doc = FlightDocument(flight_ref)
    for msg in messages:
        current = doc.slots.get(msg.msg_type)
        if current is None or msg.order_key >= current.order_key:
            doc.slots[msg.msg_type] = msg
        if msg.msg_type is MsgType.TRACK:
            doc.track_history[floor_minute(msg.msg_time)] = msg.payload
    doc.confusion_cases, doc.order_anomaly = message_order_findings(messages)
    return doc


# ---------------------------------------------------------------------------
# ST / SA bookkeeping


def partition_candidates(flight_ref: str, partitions: int) -> tuple:
    """Two partitions derived from a stable hash of the reference."""
    digest = hashlib.blake2b(flight_ref.encode("utf-8"), digest_size=16).digest()
    return int.from_bytes(digest[:8], "big") % partitions, int.from_bytes(digest[8:], "big") % partitions


class PartitionLedger:
    """Partition status (ST) and flight -> partition assignments (SA)."""

    VERSION = 1

    def __init__(self, path, partitions: int = 16):
        self.path = Path(path)
        self.partitions = partitions
        self.assignments = {}
        self.sizes = {}
        if self.path.exists():
            self._load()
        self._counts = [0] * self.partitions
        for pid in self.assignments.values():
            self._counts[pid] += 1

    def _load(self) -> None:
        try:
            with open(self.path, encoding="utf-8") as fh:
                obj = json.load(fh)
            parts = obj["partitions"]
            assignments = obj["assignments"]
            sizes = obj.get("sizes", {})
        except (OSError, ValueError, KeyError, TypeError) as exc:
            raise LedgerCorrupt(f"{self.path}: {exc}") from exc
        ids = {p["partitionId"] for p in parts}
        if ids != set(range(len(parts))):
            raise LedgerCorrupt(f"{self.path}: partition ids are not contiguous")
        counts = {pid: 0 for pid in ids}
        for ref, pid in assignments.items():
            if pid not in counts:
                raise LedgerCorrupt(f"{self.path}: {ref} assigned to unknown partition {pid}")
            counts[pid] += 1
        for p in parts:
            if p["documentCount"] != counts[p["partitionId"]]:
                raise LedgerCorrupt(f"{self.path}: document count mismatch in partition {p['partitionId']}")
        self.partitions = len(parts)
        self.assignments = dict(assignments)
        self.sizes = dict(sizes)

    def partition_table(self) -> list:
        counts = [0] * self.partitions
        sizes = [0] * self.partitions
        for ref, pid in self.assignments.items():
            counts[pid] += 1
            sizes[pid] += self.sizes.get(ref, 0)
        return [
            {"partitionId": pid, "documentCount": counts[pid], "byteEstimate": sizes[pid]}
            for pid in range(self.partitions)
        ]

    def assign_partition(self, flight_ref: str) -> int:
        """Record and return the partition of a new reference.

        Of the reference's two hash candidates the one holding fewer documents
        wins (the first on a tie), which keeps partitions close to even.  The
        choice depends on load, so it is stored and never recomputed.
        """
        pid = self.assignments.get(flight_ref)
        if pid is None:
            a, b = partition_candidates(flight_ref, self.partitions)
            pid = b if self._counts[b] < self._counts[a] else a
            self.assignments[flight_ref] = pid
            self._counts[pid] += 1
        return pid

    def lookup_partition(self, flight_ref: str) -> int:
        try:
            return self.assignments[flight_ref]
        except KeyError:
            raise NotAssigned(f"{flight_ref} has no partition assignment") from None

    def record_size(self, flight_ref: str, nbytes: int) -> None:
        self.sizes[flight_ref] = nbytes

    def save(self) -> None:
        self.path.parent.mkdir(parents=True, exist_ok=True)
        doc = {
            "version": self.VERSION,
            "partitions": self.partition_table(),
            "assignments": self.assignments,
            "sizes": self.sizes,
        }
        tmp = self.path.with_suffix(".tmp")
        with open(tmp, "w", encoding="utf-8") as fh:
            fh.write(json.dumps(doc, sort_keys=True, separators=(",", ":")))
        os.replace(tmp, self.path)


class FIStore:
    """FI partitions: ``<root>/fi/p<NN>/<YYYY-MM-DD>.jsonl``, one document per line."""

    def __init__(self, root):
        self.base = Path(root) / "fi"

    def partition_file(self, pid: int, day: date) -> Path:
        return self.base / f"p{pid:02d}" / f"{day.isoformat()}.jsonl"

    def write_day(self, day: date, docs_by_partition: dict) -> int:
        total = 0
        for pid in sorted(docs_by_partition):
            path = self.partition_file(pid, day)
            path.parent.mkdir(parents=True, exist_ok=True)
            text = "".join(line + "\n" for _, line in sorted(docs_by_partition[pid]))
            tmp = path.with_suffix(".tmp")
            tmp.write_text(text, encoding="utf-8")
            os.replace(tmp, path)
            total += len(text.encode("utf-8"))
        return total

    def day_bytes(self, day: date) -> int:
        return sum(p.stat().st_size for p in self.base.glob(f"p*/{day.isoformat()}.jsonl"))

    def load(self, pid: int, day: date, flight_ref: str) -> FlightDocument:
        path = self.partition_file(pid, day)
        if path.exists():
            with open(path, encoding="utf-8") as fh:
                for line in fh:
                    obj = json.loads(line)
                    if obj["flightRef"] == flight_ref:
                        return document_from_dict(obj)
        raise NoMessages(f"no FI document for {flight_ref} on {day}")


# ---------------------------------------------------------------------------


def _touches_day(doc: FlightDocument, day: date, default_dwell_min: int) -> bool:
    try:
        rec = occupancy_from_document(doc, default_dwell_min)
    except (SectorCongestError, ValueError):
        return False
    return bool(map_occupancy([rec], day))


class Preparer:
    def __init__(self, root, config: PrepConfig = None, store: RawStore = None):
        self.root = Path(root)
        self.config = config or PrepConfig()
        self.store = store or RawStore(self.root)
        self.counts = CountStore(self.root)
        self.fi = FIStore(self.root)
        self.ledger_path = self.root / "fi" / "ledger.json"

    def window_days(self, day: date) -> list:
        cfg = self.config
        return [day + timedelta(days=d) for d in range(-(cfg.lookback_days - 1), cfg.lookahead_days + 1)]

    def run_preparation(self, day: date) -> PrepReport:
        cfg = self.config
        report = PrepReport(day)
        clock = time.perf_counter

        t = clock()
        for d in self.window_days(day):
            if self.store.has_day(d):
                self.store.ensure_indices(d, {"flightRef", "msgType"})
        report.elapsed["indices"] = clock() - t

        t = clock()
        own = self.store.scan_flight_refs(day) if self.store.has_day(day) else set()
        # a flight departing just before midnight may report only on the next day
        later = set()
        for d in self.window_days(day):
            if d > day and self.store.has_day(d):
                later |= self.store.scan_flight_refs(d)
        later -= own
        refs = sorted(own)
        report.elapsed["scan"] = clock() - t

        t = clock()
        docs = []
        for ref in refs:
            try:
                docs.append(
                    build_flight_document(self.store, ref, day, cfg.lookback_days, cfg.lookahead_days)
                )
            except SectorCongestError as exc:
                report.failures.append((ref, f"{type(exc).__name__}: {exc}"))
        for ref in sorted(later):
            try:
                doc = build_flight_document(self.store, ref, day, cfg.lookback_days, cfg.lookahead_days)
            except SectorCongestError:
                continue  # belongs to a later day's preparation
            if _touches_day(doc, day, cfg.default_dwell_min):
                docs.append(doc)
        docs.sort(key=lambda doc: doc.flight_ref)
        report.flights_seen = len(docs) + len(report.failures)
        ledger = PartitionLedger(self.ledger_path, cfg.partitions)
        for doc in docs:
            ledger.assign_partition(doc.flight_ref)
        report.documents_built = len(docs)
        report.elapsed["populate"] = clock() - t

        t = clock()
        records = []
        by_partition = {}
        for doc in docs:
            try:
                rec = occupancy_from_document(doc, cfg.default_dwell_min)
            except (SectorCongestError, ValueError) as exc:
                report.failures.append((doc.flight_ref, f"{type(exc).__name__}: {exc}"))
                continue
            records.append(rec)
            if rec.intervals:
                report.documents_correlated += 1
            line = document_line(doc)
            ledger.record_size(doc.flight_ref, len(line) + 1)
            by_partition.setdefault(ledger.lookup_partition(doc.flight_ref), []).append((doc.flight_ref, line))
        self.fi.write_day(day, by_partition)
        ledger.save()
        self.counts.write_dms_a(day, records)
        report.elapsed["correlate"] = clock() - t

        t = clock()
        series = reduce_sector_counts(records, day)
        self.counts.write_dms_b(day, series)
        report.sectors_counted = len(series)
        report.elapsed["reduce"] = clock() - t
        log.info(
            "prepared %s: %d flights, %d documents, %d sectors",
            day, report.flights_seen, report.documents_built, report.sectors_counted,
        )
        return report


def run_preparation(root, day: date, config: PrepConfig = None) -> PrepReport:
    return Preparer(root, config).run_preparation(day)
