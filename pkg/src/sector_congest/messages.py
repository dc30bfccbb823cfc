"""Canonical flight-lifecycle message schema and its line-oriented text codec.

One record per line, a JSON object with the keys ``msgType``, ``flightRef``,
``msgTime`` (RFC 3339 UTC, ``2018-03-14T12:00:00Z``) and ``payload``.  An
optional integer ``seq`` is carried when the message has been ingested.
Unknown keys are ignored on input.  Output is canonical: sorted keys, no
whitespace, optional fields omitted.
"""

from __future__ import annotations

import enum
import json
import math
from collections import Counter
from dataclasses import dataclass, field
from datetime import date, datetime, timedelta, timezone
from typing import Iterable, Optional, Union

from .errors import InvariantViolation, MalformedRecord, RecordError, UnknownMessageType

UTC = timezone.utc

EPOCH_RANGE = (datetime(1970, 1, 1, tzinfo=UTC), datetime(2100, 1, 1, tzinfo=UTC))


class MsgType(str, enum.Enum):
    DEPARTURE = "DepartureInformation"
    ARRIVAL = "ArrivalInformation"
    TRACK = "TrackInformation"
    SECTORS = "FlightSectors"


class Qualifier(str, enum.Enum):
    ACTUAL = "ACTUAL"
    ESTIMATED = "ESTIMATED"


# Ideal emission order of a flight's messages.
DESIRABLE_ORDER = (MsgType.DEPARTURE, MsgType.TRACK, MsgType.SECTORS, MsgType.ARRIVAL)


def format_time(t: datetime) -> str:
    return t.astimezone(UTC).strftime("%Y-%m-%dT%H:%M:%SZ")


def parse_time(text, field_name="msgTime") -> datetime:
    """Parse an RFC 3339 UTC timestamp with second resolution."""
    if not isinstance(text, str):
        raise MalformedRecord(f"{field_name}: expected timestamp string", field_name)
    if text.endswith("Z"):
        body = text[:-1]
    elif text.endswith("+00:00"):
        body = text[:-6]
    else:
        raise InvariantViolation(f"{field_name}: timestamp must be UTC", field_name)
    if len(body) != 19 or body[10] != "T":
        raise MalformedRecord(f"{field_name}: not an RFC 3339 timestamp: {text!r}", field_name)
    try:
        t = datetime.fromisoformat(body)
    except ValueError:
        raise MalformedRecord(f"{field_name}: not an RFC 3339 timestamp: {text!r}", field_name) from None
    return t.replace(tzinfo=UTC)


def floor_minute(t: datetime) -> datetime:
    return t.replace(second=0, microsecond=0)


def day_start(day: date) -> datetime:
    return datetime(day.year, day.month, day.day, tzinfo=UTC)


def _check_time(t, name):
    if not isinstance(t, datetime) or t.tzinfo is None:
        raise InvariantViolation(f"{name}: expected timezone-aware datetime", name)
    if t.microsecond:
        raise InvariantViolation(f"{name}: second resolution only", name)


def _check_qualifier(q, name):
    if not isinstance(q, Qualifier):
        raise InvariantViolation(f"{name}: must be ACTUAL or ESTIMATED", name)


def _is_number(x):
    return isinstance(x, (int, float)) and not isinstance(x, bool) and math.isfinite(x)


@dataclass(frozen=True)
class DeparturePayload:
    departure_time: datetime
    qualifier: Qualifier

    def __post_init__(self):
        _check_time(self.departure_time, "departureTime")
        _check_qualifier(self.qualifier, "qualifier")


@dataclass(frozen=True)
class ArrivalPayload:
    arrival_time: datetime
    arrival_qualifier: Qualifier
    departure_time: Optional[datetime] = None
    departure_qualifier: Optional[Qualifier] = None

    def __post_init__(self):
        _check_time(self.arrival_time, "arrivalTime")
        _check_qualifier(self.arrival_qualifier, "arrivalQualifier")
        if self.departure_time is not None:
            _check_time(self.departure_time, "departureTime")
            if self.departure_qualifier is None:
                raise InvariantViolation(
                    "departureQualifier: required when departureTime is present", "departureQualifier"
                )
        if self.departure_qualifier is not None:
            _check_qualifier(self.departure_qualifier, "departureQualifier")
            if self.departure_time is None:
                raise InvariantViolation(
                    "departureTime: required when departureQualifier is present", "departureTime"
                )


@dataclass(frozen=True)
class TrackPayload:
    latitude: float
    longitude: float
    altitude: float
    ground_speed: float
    heading: float

    def __post_init__(self):
        checks = (
            ("latitude", self.latitude, -90.0, 90.0, True),
            ("longitude", self.longitude, -180.0, 180.0, True),
            ("altitude", self.altitude, 0.0, math.inf, True),
            ("groundSpeed", self.ground_speed, 0.0, math.inf, True),
            ("heading", self.heading, 0.0, 360.0, False),
        )
        for name, value, lo, hi, hi_inclusive in checks:
            if not _is_number(value):
                raise InvariantViolation(f"{name}: expected finite number", name)
            if value < lo or value > hi or (not hi_inclusive and value == hi):
                raise InvariantViolation(f"{name}: {value} out of range", name)


@dataclass(frozen=True)
class SectorsPayload:
    milestones: tuple  # ((sectorName, entryOffsetMinutes), ...)

    def __post_init__(self):
        if not self.milestones:
            raise InvariantViolation("milestones: list must be non-empty", "milestones")
        prev = None
        for name, offset in self.milestones:
            if not isinstance(name, str) or not name:
                raise InvariantViolation("sectorName: must be a non-empty string", "sectorName")
            if not isinstance(offset, int) or isinstance(offset, bool) or offset < 0:
                raise InvariantViolation(
                    "entryOffsetMinutes: must be a non-negative integer", "entryOffsetMinutes"
                )
            if prev is not None and offset <= prev:
                raise InvariantViolation(
                    "entryOffsetMinutes: offsets must be strictly increasing", "entryOffsetMinutes"
                )
            prev = offset


Payload = Union[DeparturePayload, ArrivalPayload, TrackPayload, SectorsPayload]

PAYLOAD_TYPES = {
    MsgType.DEPARTURE: DeparturePayload,
    MsgType.ARRIVAL: ArrivalPayload,
    MsgType.TRACK: TrackPayload,
    MsgType.SECTORS: SectorsPayload,
}


@dataclass(frozen=True)
class RawMessage:
    msg_type: MsgType
    flight_ref: str
    msg_time: datetime
    payload: Payload
    seq: Optional[int] = field(default=None, compare=True)

    def __post_init__(self):
        if not isinstance(self.msg_type, MsgType):
            raise UnknownMessageType(f"msgType: unknown value {self.msg_type!r}", "msgType")
        if not isinstance(self.flight_ref, str) or not self.flight_ref:
            raise InvariantViolation("flightRef: must be a non-empty string", "flightRef")
        _check_time(self.msg_time, "msgTime")
        if not isinstance(self.payload, PAYLOAD_TYPES[self.msg_type]):
            raise InvariantViolation(f"payload: does not match msgType {self.msg_type.value}", "payload")
        if self.seq is not None and (not isinstance(self.seq, int) or self.seq < 0):
            raise InvariantViolation("seq: must be a non-negative integer", "seq")

    @property
    def order_key(self):
        return (self.msg_time, -1 if self.seq is None else self.seq)

    def with_seq(self, seq: int) -> "RawMessage":
        return RawMessage(self.msg_type, self.flight_ref, self.msg_time, self.payload, seq)


# ---------------------------------------------------------------------------
# payload <-> plain dict


def payload_to_dict(payload: Payload) -> dict:
    if isinstance(payload, DeparturePayload):
        return {"departureTime": format_time(payload.departure_time), "qualifier": payload.qualifier.value}
    if isinstance(payload, ArrivalPayload):
        out = {
            "arrivalTime": format_time(payload.arrival_time),
            "arrivalQualifier": payload.arrival_qualifier.value,
        }
        if payload.departure_time is not None:
            out["departureTime"] = format_time(payload.departure_time)
            out["departureQualifier"] = payload.departure_qualifier.value
        return out
    if isinstance(payload, TrackPayload):
        return {
            "latitude": payload.latitude,
            "longitude": payload.longitude,
            "altitude": payload.altitude,
            "groundSpeed": payload.ground_speed,
            "heading": payload.heading,
        }
    return {
        "milestones": [
            {"sectorName": name, "entryOffsetMinutes": offset} for name, offset in payload.milestones
        ]
    }


def _qualifier(value, name):
    try:
        return Qualifier(value)
    except ValueError:
        raise InvariantViolation(f"{name}: {value!r} is not ACTUAL or ESTIMATED", name) from None


def _require(obj, key):
    if key not in obj:
        raise MalformedRecord(f"{key}: missing", key)
    return obj[key]


def _number(obj, key):
    value = _require(obj, key)
    if not _is_number(value):
        raise InvariantViolation(f"{key}: expected finite number", key)
    return value


def payload_from_dict(msg_type: MsgType, obj) -> Payload:
    if not isinstance(obj, dict):
        raise MalformedRecord("payload: expected object", "payload")
    if msg_type is MsgType.DEPARTURE:
        return DeparturePayload(
            parse_time(_require(obj, "departureTime"), "departureTime"),
            _qualifier(_require(obj, "qualifier"), "qualifier"),
        )
    if msg_type is MsgType.ARRIVAL:
        dep_time = obj.get("departureTime")
        dep_qual = obj.get("departureQualifier")
        return ArrivalPayload(
            parse_time(_require(obj, "arrivalTime"), "arrivalTime"),
            _qualifier(_require(obj, "arrivalQualifier"), "arrivalQualifier"),
            None if dep_time is None else parse_time(dep_time, "departureTime"),
            None if dep_qual is None else _qualifier(dep_qual, "departureQualifier"),
        )
    if msg_type is MsgType.TRACK:
        return TrackPayload(
            _number(obj, "latitude"),
            _number(obj, "longitude"),
            _number(obj, "altitude"),
            _number(obj, "groundSpeed"),
            _number(obj, "heading"),
        )
    raw = _require(obj, "milestones")
    if not isinstance(raw, list):
        raise MalformedRecord("milestones: expected list", "milestones")
    milestones = []
    for item in raw:
        if not isinstance(item, dict):
            raise MalformedRecord("milestones: entries must be objects", "milestones")
        milestones.append((_require(item, "sectorName"), _require(item, "entryOffsetMinutes")))
    return SectorsPayload(tuple(milestones))


# ---------------------------------------------------------------------------
# line codec


def message_to_dict(msg: RawMessage, include_seq: bool = True) -> dict:
    out = {
        "msgType": msg.msg_type.value,
        "flightRef": msg.flight_ref,
        "msgTime": format_time(msg.msg_time),
        "payload": payload_to_dict(msg.payload),
    }
    if include_seq and msg.seq is not None:
        out["seq"] = msg.seq
    return out


def serialize_message(msg: RawMessage, include_seq: bool = True) -> str:
    return json.dumps(
        message_to_dict(msg, include_seq), sort_keys=True, separators=(",", ":"), ensure_ascii=False
    )


def parse_message(line: str, epoch_range=EPOCH_RANGE) -> RawMessage:
    """Parse one record line into a fully typed RawMessage.

    Raises MalformedRecord, UnknownMessageType or InvariantViolation; the
    exception's ``field`` attribute names the offending key.
    """
    try:
        obj = json.loads(line)
    except (ValueError, TypeError, RecursionError):
        raise MalformedRecord("line is not a JSON object") from None
    if not isinstance(obj, dict):
        raise MalformedRecord("line is not a JSON object")
    raw_type = _require(obj, "msgType")
    try:
        msg_type = MsgType(raw_type)
    except (ValueError, TypeError):
        raise UnknownMessageType(f"msgType: unknown value {raw_type!r}", "msgType") from None
    flight_ref = _require(obj, "flightRef")
    if not isinstance(flight_ref, str) or not flight_ref:
        raise InvariantViolation("flightRef: must be a non-empty string", "flightRef")
    msg_time = parse_time(_require(obj, "msgTime"), "msgTime")
    lo, hi = epoch_range
    if not lo <= msg_time < hi:
        raise InvariantViolation(f"msgTime: {format_time(msg_time)} outside accepted epoch range", "msgTime")
    seq = obj.get("seq")
    if seq is not None and (not isinstance(seq, int) or isinstance(seq, bool) or seq < 0):
        raise InvariantViolation("seq: must be a non-negative integer", "seq")
    payload = payload_from_dict(msg_type, _require(obj, "payload"))
    return RawMessage(msg_type, flight_ref, msg_time, payload, seq)


def try_parse(line: str, epoch_range=EPOCH_RANGE):
    """Return ``(message, None)`` or ``(None, error)``; never raises on bad input."""
    try:
        return parse_message(line, epoch_range), None
    except RecordError as exc:
        return None, exc


@dataclass
class StreamSummary:
    counts: Counter
    errors: list  # [(line_number, RecordError)], 1-based line numbers

    @property
    def parsed(self) -> int:
        return sum(self.counts.values())


def classify_stream(lines: Iterable[str], epoch_range=EPOCH_RANGE) -> StreamSummary:
    counts = Counter({t: 0 for t in MsgType})
    errors = []
    for lineno, line in enumerate(lines, start=1):
        msg, err = try_parse(line, epoch_range)
        if err is not None:
            errors.append((lineno, err))
        else:
            counts[msg.msg_type] += 1
    return StreamSummary(counts, errors)


def minutes(n: int) -> timedelta:
    return timedelta(minutes=n)
