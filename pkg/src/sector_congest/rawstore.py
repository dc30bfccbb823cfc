"""Append-only daily collections of raw messages with on-demand secondary indices.

Layout under ``<root>/raw/<YYYY-MM-DD>/``::

    segment-<n>.log      one record per line: ``<seq>\\t<canonical message line>``
    index-<field>.idx    JSON sidecar: field value -> [[segment, byte offset], ...]

Records are never rewritten.  A day is written by one writer at a time
(``.writer.lock``); readers only ever consume newline-terminated lines, so
they observe a consistent prefix of the log.
"""

from __future__ import annotations

import enum
import fcntl
import json
import logging
import os
import shutil
from dataclasses import dataclass, field
from datetime import date, timedelta
from pathlib import Path
from typing import Iterable, Optional

from .errors import MissingCollection, StorageFailure, UnknownField
from .messages import MsgType, RawMessage, parse_message, serialize_message, try_parse

log = logging.getLogger(__name__)

INDEXABLE = ("flightRef", "msgType")


class IndexState(str, enum.Enum):
    ABSENT = "Absent"
    BUILT = "Built"


@dataclass(frozen=True)
class IndexDescriptor:
    field: str
    state: IndexState


@dataclass
class IngestReport:
    day: date
    accepted: int = 0
    rejected: int = 0
    bytes_stored: int = 0
    rejections: list = field(default_factory=list)  # [(line_number, reason)]


def _field_value(msg: RawMessage, name: str) -> str:
    return msg.flight_ref if name == "flightRef" else msg.msg_type.value


def _indexed_fields(line: str) -> dict:
    # stored records were validated on ingest; indexing needs only the raw keys
    return json.loads(line.partition("\t")[2])


def _decode_log_line(line: str) -> RawMessage:
    seq, _, body = line.partition("\t")
    return parse_message(body).with_seq(int(seq))


class RawStore:
    def __init__(self, root, max_segment_bytes: int = 8 << 20, fsync: bool = True):
        self.root = Path(root)
        self.base = self.root / "raw"
        self.max_segment_bytes = max_segment_bytes
        self.fsync = fsync
        self.records_scanned = 0
        self._index_cache = {}

    # -- paths -------------------------------------------------------------

    def collection_dir(self, day: date) -> Path:
        return self.base / day.isoformat()

    def has_day(self, day: date) -> bool:
        return self.collection_dir(day).is_dir()

    def days(self) -> list:
        if not self.base.is_dir():
            return []
        return sorted(date.fromisoformat(p.name) for p in self.base.iterdir() if p.is_dir())

    def _segments(self, day: date) -> list:
        d = self.collection_dir(day)
        segs = []
        for p in d.glob("segment-*.log"):
            segs.append((int(p.stem.split("-", 1)[1]), p))
        return [p for _, p in sorted(segs)]

    def _require(self, day: date) -> Path:
        d = self.collection_dir(day)
        if not d.is_dir():
            raise MissingCollection(f"no raw collection for {day.isoformat()}")
        return d

    # -- reading -----------------------------------------------------------

    def _iter_records(self, day: date):
        """Yield ``(segment_no, offset, line)`` for every complete record."""
        for path in self._segments(day):
            seg_no = int(path.stem.split("-", 1)[1])
            with open(path, "rb") as fh:
                offset = 0
                for raw in fh:
                    if not raw.endswith(b"\n"):
                        break  # torn tail from an in-flight write
                    yield seg_no, offset, raw.decode("utf-8").rstrip("\n")
                    offset += len(raw)

    def read_day(self, day: date) -> list:
        """All records of a day in ingestion (seq) order."""
        self._require(day)
        out = []
        for _, _, line in self._iter_records(day):
            self.records_scanned += 1
            out.append(_decode_log_line(line))
        return out

    def record_count(self, day: date) -> int:
        self._require(day)
        return sum(1 for _ in self._iter_records(day))

    def _read_at(self, day: date, locations) -> list:
        d = self.collection_dir(day)
        out = []
        by_seg = {}
        for seg, off in locations:
            by_seg.setdefault(seg, []).append(off)
        for seg, offs in sorted(by_seg.items()):
            with open(d / f"segment-{seg}.log", "rb") as fh:
                for off in sorted(offs):
                    fh.seek(off)
                    self.records_scanned += 1
                    out.append(_decode_log_line(fh.readline().decode("utf-8").rstrip("\n")))
        return out

    # -- indices -----------------------------------------------------------

    def _index_path(self, day: date, name: str) -> Path:
        return self.collection_dir(day) / f"index-{name}.idx"

    def _load_index(self, day: date, name: str) -> Optional[dict]:
        path = self._index_path(day, name)
        try:
            st = path.stat()
        except FileNotFoundError:
            return None
        key = (str(path), st.st_mtime_ns, st.st_size)
        cached = self._index_cache.get(key)
        if cached is None:
            with open(path, encoding="utf-8") as fh:
                cached = json.load(fh)["entries"]
            self._index_cache = {k: v for k, v in self._index_cache.items() if k[0] != str(path)}
            self._index_cache[key] = cached
        return cached

    def _write_index(self, day: date, name: str, entries: dict) -> None:
        path = self._index_path(day, name)
        tmp = path.with_suffix(".idx.tmp")
        doc = {"field": name, "version": 1, "entries": entries}
        with open(tmp, "w", encoding="utf-8") as fh:
            fh.write(json.dumps(doc, sort_keys=True, separators=(",", ":")))
            fh.flush()
            if self.fsync:
                os.fsync(fh.fileno())
        os.replace(tmp, path)

    def indices(self, day: date) -> set:
        self._require(day)
        return {
            IndexDescriptor(name, IndexState.BUILT if self._index_path(day, name).exists() else IndexState.ABSENT)
            for name in INDEXABLE
        }

    def ensure_indices(self, day: date, fields: Iterable[str]) -> set:
        """Build the requested indices that are not yet present; idempotent."""
        fields = set(fields)
        for name in fields:
            if name not in INDEXABLE:
                raise UnknownField(f"cannot index field {name!r}")
        if not fields:
            return set()
        self._require(day)
        missing = [name for name in sorted(fields) if not self._index_path(day, name).exists()]
        if missing:
            entries = {name: {} for name in missing}
            for seg, off, line in self._iter_records(day):
                self.records_scanned += 1
                obj = _indexed_fields(line)
                for name in missing:
                    entries[name].setdefault(obj[name], []).append([seg, off])
            for name in missing:
                self._write_index(day, name, entries[name])
                log.info("built %s index for %s (%d keys)", name, day, len(entries[name]))
        return {IndexDescriptor(name, IndexState.BUILT) for name in fields}

    def query(self, day: date, name: str, value: str) -> list:
        """Records of ``day`` whose ``name`` field equals ``value``, in seq order."""
        if name not in INDEXABLE:
            raise UnknownField(f"cannot query field {name!r}")
        self._require(day)
        entries = self._load_index(day, name)
        if entries is not None:
            return self._read_at(day, entries.get(value, []))
        out = []
        for _, _, line in self._iter_records(day):
            self.records_scanned += 1
            msg = _decode_log_line(line)
            if _field_value(msg, name) == value:
                out.append(msg)
        return out

    # -- operations --------------------------------------------------------

    def scan_flight_refs(self, day: date) -> set:
        self._require(day)
        entries = self._load_index(day, "flightRef")
        if entries is not None:
            return set(entries)
        refs = set()
        for _, _, line in self._iter_records(day):
            self.records_scanned += 1
            refs.add(_decode_log_line(line).flight_ref)
        return refs

    def fetch_flight_messages(
        self,
        flight_ref: str,
        end_day: date,
        lookback_days: int = 5,
        types=None,
        lookahead_days: int = 0,
    ) -> list:
        """Messages of one flight from the days ``end_day - lookback_days + 1``
        through ``end_day + lookahead_days``, ordered by (msgTime, seq).

        Days that were never ingested contribute nothing.
        """
        if lookback_days < 1:
            raise ValueError("lookback_days must be >= 1")
        wanted = None if types is None else {MsgType(t) for t in types}
        found = []
        for delta in range(-(lookback_days - 1), lookahead_days + 1):
            day = end_day + timedelta(days=delta)
            if not self.has_day(day):
                continue
            for msg in self.query(day, "flightRef", flight_ref):
                if wanted is None or msg.msg_type in wanted:
                    found.append((day, msg))
        # seq is per-collection, so the day orders equal-time records across collections
        found.sort(key=lambda dm: (dm[1].msg_time, dm[0], dm[1].seq))
        return [m for _, m in found]

    def ingest_day(self, lines: Iterable[str], day: date) -> IngestReport:
        """Append every parseable record dated ``day``; reject everything else."""
        report = IngestReport(day)
        batch = []
        for lineno, line in enumerate(lines, start=1):
            line = line.rstrip("\r\n")
            msg, err = try_parse(line)
            if err is not None:
                report.rejected += 1
                report.rejections.append((lineno, f"{type(err).__name__}: {err}"))
            elif msg.msg_time.date() != day:
                report.rejected += 1
                report.rejections.append((lineno, f"WrongDay: msgTime {msg.msg_time.date()} != {day}"))
            else:
                batch.append(msg)
        if not batch and self.has_day(day):
            return report
        d = self.collection_dir(day)
        try:
            d.mkdir(parents=True, exist_ok=True)
            with open(d / ".writer.lock", "w") as lock:
                fcntl.flock(lock, fcntl.LOCK_EX)
                try:
                    self._append(day, batch, report)
                finally:
                    fcntl.flock(lock, fcntl.LOCK_UN)
        except OSError as exc:
            raise StorageFailure(f"ingest of {day} failed: {exc}", report) from exc
        return report

    def _tail(self, day: date):
        """Return (segment_no, size, next_seq), truncating any torn last line."""
        segs = self._segments(day)
        if not segs:
            return 0, 0, 0
        path = segs[-1]
        seg_no = int(path.stem.split("-", 1)[1])
        with open(path, "rb+") as fh:
            data = fh.read()
            good = data.rfind(b"\n") + 1
            if good != len(data):
                fh.truncate(good)
            data = data[:good]
        if data:
            last = data[:-1].rsplit(b"\n", 1)[-1]
            next_seq = int(last.split(b"\t", 1)[0]) + 1
        else:
            # empty trailing segment: fall back to previous segments
            next_seq = 0
            for p in reversed(segs[:-1]):
                content = p.read_bytes().rstrip(b"\n")
                if content:
                    next_seq = int(content.rsplit(b"\n", 1)[-1].split(b"\t", 1)[0]) + 1
                    break
        return seg_no, len(data), next_seq

    def _append(self, day: date, batch: list, report: IngestReport) -> None:
        seg_no, size, seq = self._tail(day)
        built = {name: self._load_index(day, name) for name in INDEXABLE}
        built = {k: v for k, v in built.items() if v is not None}
        fh = open(self.collection_dir(day) / f"segment-{seg_no}.log", "ab")
        try:
            for msg in batch:
                data = f"{seq}\t{serialize_message(msg, include_seq=False)}\n".encode("utf-8")
                if size and size + len(data) > self.max_segment_bytes:
                    self._close(fh)
                    seg_no, size = seg_no + 1, 0
                    fh = open(self.collection_dir(day) / f"segment-{seg_no}.log", "ab")
                fh.write(data)
                for name, entries in built.items():
                    entries.setdefault(_field_value(msg, name), []).append([seg_no, size])
                size += len(data)
                seq += 1
                report.accepted += 1
                report.bytes_stored += len(data)
        finally:
            self._close(fh)
        for name, entries in built.items():
            self._write_index(day, name, entries)

    def _close(self, fh) -> None:
        fh.flush()
        if self.fsync:
            os.fsync(fh.fileno())
        fh.close()

    def prune(self, day: date) -> bool:
        """Delete one day's collection.  Never done implicitly."""
        d = self.collection_dir(day)
        if not d.is_dir():
            return False
        shutil.rmtree(d)
        return True
