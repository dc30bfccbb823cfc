"""Consolidated per-flight documents (the FI collection) and their codec."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from datetime import datetime, timedelta
from typing import Optional

from .messages import (
    UTC,
    ArrivalPayload,
    DeparturePayload,
    MsgType,
    Qualifier,
    RawMessage,
    SectorsPayload,
    TrackPayload,
    format_time,
    parse_time,
    payload_from_dict,
    payload_to_dict,
)

BUILD_VERSION = 1

SLOT_KEYS = {
    MsgType.DEPARTURE: "departureInformation",
    MsgType.ARRIVAL: "arrivalInformation",
    MsgType.SECTORS: "flightSectors",
    MsgType.TRACK: "trackInformation",
}


@dataclass(frozen=True)
class BucketEntry:
    time: datetime  # minute-aligned
    sector: str
    has_track: bool = False
    track: Optional[TrackPayload] = None


@dataclass
class FlightDocument:
    flight_ref: str
    slots: dict = field(default_factory=dict)  # MsgType -> most recent RawMessage
    track_history: dict = field(default_factory=dict)  # minute -> TrackPayload (latest in that minute)
    confusion_cases: frozenset = frozenset()  # subset of {1, 3, 4} seen in the message window
    order_anomaly: bool = False
    dms_buckets: list = field(default_factory=list)
    build_version: int = BUILD_VERSION

    @property
    def departure(self) -> Optional[RawMessage]:
        return self.slots.get(MsgType.DEPARTURE)

    @property
    def arrival(self) -> Optional[RawMessage]:
        return self.slots.get(MsgType.ARRIVAL)

    @property
    def sectors(self) -> Optional[RawMessage]:
        return self.slots.get(MsgType.SECTORS)

    @property
    def track(self) -> Optional[RawMessage]:
        return self.slots.get(MsgType.TRACK)


# ---------------------------------------------------------------------------
# codec: raw payload kept verbatim next to a compact parsed companion


def _epoch(t: datetime) -> int:
    return int(t.timestamp())


def _from_epoch(s: int) -> datetime:
    return datetime.fromtimestamp(s, tz=UTC)


def _parsed(payload) -> list:
    if isinstance(payload, DeparturePayload):
        return [_epoch(payload.departure_time), payload.qualifier.value]
    if isinstance(payload, ArrivalPayload):
        out = [_epoch(payload.arrival_time), payload.arrival_qualifier.value]
        if payload.departure_time is not None:
            out += [_epoch(payload.departure_time), payload.departure_qualifier.value]
        return out
    if isinstance(payload, TrackPayload):
        return [payload.latitude, payload.longitude, payload.altitude, payload.ground_speed, payload.heading]
    return [[name, off] for name, off in payload.milestones]


def _from_parsed(msg_type: MsgType, values):
    if msg_type is MsgType.DEPARTURE:
        return DeparturePayload(_from_epoch(values[0]), Qualifier(values[1]))
    if msg_type is MsgType.ARRIVAL:
        if len(values) > 2:
            return ArrivalPayload(
                _from_epoch(values[0]), Qualifier(values[1]), _from_epoch(values[2]), Qualifier(values[3])
            )
        return ArrivalPayload(_from_epoch(values[0]), Qualifier(values[1]))
    if msg_type is MsgType.TRACK:
        return TrackPayload(*values)
    return SectorsPayload(tuple((name, off) for name, off in values))


def _bucket_runs(buckets: list) -> list:
    runs = []
    for b in buckets:
        if runs:
            last = runs[-1]
            end = last[1] + timedelta(minutes=last[2])
            if last[0] == b.sector and end == b.time:
                last[2] += 1
                continue
        runs.append([b.sector, b.time, 1])
    return [[sector, format_time(start), n] for sector, start, n in runs]


def document_to_dict(doc: FlightDocument) -> dict:
    out = {"flightRef": doc.flight_ref, "buildVersion": doc.build_version}
    for msg_type, key in SLOT_KEYS.items():
        msg = doc.slots.get(msg_type)
        if msg is None:
            continue
        out[key] = {"msgTime": format_time(msg.msg_time), "seq": msg.seq, "payload": payload_to_dict(msg.payload)}
        out[key + "Parsed"] = _parsed(msg.payload)
    if doc.track_history:
        out["trackHistory"] = [[_epoch(t)] + _parsed(p) for t, p in sorted(doc.track_history.items())]
    if doc.confusion_cases:
        out["confusionCases"] = sorted(doc.confusion_cases)
    if doc.order_anomaly:
        out["orderAnomaly"] = True
    out["dms:buckets"] = _bucket_runs(doc.dms_buckets)
    return out


def document_from_dict(obj: dict) -> FlightDocument:
    ref = obj["flightRef"]
    doc = FlightDocument(ref, build_version=obj.get("buildVersion", BUILD_VERSION))
    for msg_type, key in SLOT_KEYS.items():
        if key not in obj:
            continue
        slot = obj[key]
        payload = payload_from_dict(msg_type, slot["payload"])
        parsed = obj.get(key + "Parsed")
        if parsed is not None and _from_parsed(msg_type, parsed) != payload:
            raise ValueError(f"{ref}: {key}Parsed disagrees with raw payload")
        doc.slots[msg_type] = RawMessage(msg_type, ref, parse_time(slot["msgTime"]), payload, slot["seq"])
    for row in obj.get("trackHistory", []):
        doc.track_history[_from_epoch(row[0])] = TrackPayload(*row[1:])
    doc.confusion_cases = frozenset(obj.get("confusionCases", ()))
    doc.order_anomaly = bool(obj.get("orderAnomaly", False))
    buckets = []
    for sector, start, n in obj.get("dms:buckets", []):
        t0 = parse_time(start)
        for i in range(n):
            t = t0 + timedelta(minutes=i)
            track = doc.track_history.get(t)
            buckets.append(BucketEntry(t, sector, track is not None, track))
    doc.dms_buckets = buckets
    return doc


def document_line(doc: FlightDocument) -> str:
    return json.dumps(document_to_dict(doc), sort_keys=True, separators=(",", ":"))
