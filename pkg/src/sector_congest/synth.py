"""Deterministic synthetic traffic scenarios and a brute-force counting oracle.

A scenario is a set of days of flights routed through a synthetic sector
catalog.  Each flight emits departureInformation, trackInformation,
flightSectors and arrivalInformation messages in that order; selected flights
are perturbed by one of the four confusion cases.  The ground truth records the
true sector intervals, so every pipeline stage can be checked against it.

The oracle below deliberately shares no interval or bucket code with
:mod:`sector_congest.occupancy`.
"""

from __future__ import annotations

import json
from collections import Counter
from dataclasses import dataclass, field
from datetime import date, datetime, timedelta
from pathlib import Path
from typing import Optional

import numpy as np

from .errors import InvalidSpec, UnknownCase
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
    serialize_message,
)

# Relative hourly demand, UTC; quiet nights, morning and evening banks.
DEFAULT_PROFILE = [
    0.2, 0.1, 0.1, 0.1, 0.2, 0.4, 0.8, 1.2, 1.5, 1.5, 1.4, 1.3,
    1.3, 1.4, 1.5, 1.5, 1.6, 1.7, 1.6, 1.3, 1.0, 0.7, 0.5, 0.3,
]

MIN_DWELL, MAX_DWELL = 3, 45
MAX_ROUTE = 6
TRACK_PERIOD_MIN = 10


@dataclass
class ScenarioSpec:
    sectors: list = field(default_factory=lambda: [f"ZSC{i:02d}" for i in range(1, 11)])
    flights_per_day: int = 500
    start_day: date = date(2018, 3, 5)
    n_days: int = 1
    daily_profile: list = field(default_factory=lambda: list(DEFAULT_PROFILE))
    anomaly_rates: dict = field(default_factory=lambda: {1: 0.0, 2: 0.0, 3: 0.0, 4: 0.0})
    seed: int = 0
    # fraction of each day's flights repeated from a fixed daily schedule
    template_fraction: float = 0.0
    jitter_minutes: int = 0
    weather_sectors: list = field(default_factory=list)
    whole_minute_departures: bool = False

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if not self.sectors or any(not isinstance(s, str) or not s for s in self.sectors):
            raise InvalidSpec("sectors must be a non-empty list of names")
        if len(set(self.sectors)) != len(self.sectors):
            raise InvalidSpec("sector names must be unique")
        if not isinstance(self.flights_per_day, int) or self.flights_per_day < 0:
            raise InvalidSpec("flights_per_day must be a non-negative integer")
        if self.n_days < 0:
            raise InvalidSpec("n_days must be >= 0")
        if len(self.daily_profile) != 24 or any(p < 0 for p in self.daily_profile) or sum(self.daily_profile) <= 0:
            raise InvalidSpec("daily_profile must hold 24 non-negative weights with a positive sum")
        if set(self.anomaly_rates) - {1, 2, 3, 4}:
            raise InvalidSpec("anomaly_rates keys must be confusion cases 1..4")
        if any(not 0.0 <= p <= 1.0 for p in self.anomaly_rates.values()):
            raise InvalidSpec("anomaly probabilities must lie in [0, 1]")
        if not 0.0 <= self.template_fraction <= 1.0:
            raise InvalidSpec("template_fraction must lie in [0, 1]")
        if self.jitter_minutes < 0:
            raise InvalidSpec("jitter_minutes must be >= 0")
        if set(self.weather_sectors) - set(self.sectors):
            raise InvalidSpec("weather_sectors must be members of sectors")

    @property
    def days(self) -> list:
        return [self.start_day + timedelta(days=i) for i in range(self.n_days)]

    def to_dict(self) -> dict:
        return {
            "sectors": list(self.sectors),
            "flightsPerDay": self.flights_per_day,
            "startDay": self.start_day.isoformat(),
            "nDays": self.n_days,
            "dailyProfile": list(self.daily_profile),
            "anomalyRates": {str(k): v for k, v in sorted(self.anomaly_rates.items())},
            "seed": self.seed,
            "templateFraction": self.template_fraction,
            "jitterMinutes": self.jitter_minutes,
            "weatherSectors": list(self.weather_sectors),
            "wholeMinuteDepartures": self.whole_minute_departures,
        }

    @classmethod
    def from_dict(cls, obj: dict) -> "ScenarioSpec":
        kwargs = {}
        mapping = {
            "flightsPerDay": "flights_per_day",
            "nDays": "n_days",
            "dailyProfile": "daily_profile",
            "seed": "seed",
            "templateFraction": "template_fraction",
            "jitterMinutes": "jitter_minutes",
            "weatherSectors": "weather_sectors",
            "wholeMinuteDepartures": "whole_minute_departures",
        }
        try:
            if "sectors" in obj:
                sectors = obj["sectors"]
                kwargs["sectors"] = [f"ZSC{i:02d}" for i in range(1, sectors + 1)] if isinstance(sectors, int) else list(sectors)
            if "startDay" in obj:
                kwargs["start_day"] = date.fromisoformat(obj["startDay"])
            if "anomalyRates" in obj:
                rates = {1: 0.0, 2: 0.0, 3: 0.0, 4: 0.0}
                rates.update({int(k): float(v) for k, v in obj["anomalyRates"].items()})
                kwargs["anomaly_rates"] = rates
            for key, attr in mapping.items():
                if key in obj:
                    kwargs[attr] = obj[key]
        except (TypeError, ValueError) as exc:
            raise InvalidSpec(str(exc)) from exc
        unknown = set(obj) - set(mapping) - {"sectors", "startDay", "anomalyRates"}
        if unknown:
            raise InvalidSpec(f"unknown scenario keys: {sorted(unknown)}")
        return cls(**kwargs)

    @classmethod
    def load(cls, path) -> "ScenarioSpec":
        with open(path, encoding="utf-8") as fh:
            try:
                return cls.from_dict(json.load(fh))
            except ValueError as exc:
                raise InvalidSpec(f"{path}: {exc}") from exc


@dataclass
class FlightTruth:
    flight_ref: str
    departure: datetime
    arrival: datetime
    intervals: list  # [(sector, entry, exit)]
    cases: tuple = ()

    @property
    def countable(self) -> bool:
        return 2 not in self.cases

    @property
    def level(self) -> int:
        if 2 in self.cases:
            return 3
        return 2 if self.cases else 1

    def to_dict(self) -> dict:
        return {
            "flightRef": self.flight_ref,
            "departure": format_time(self.departure),
            "arrival": format_time(self.arrival),
            "intervals": [[s, format_time(a), format_time(b)] for s, a, b in self.intervals],
            "cases": list(self.cases),
        }

    @classmethod
    def from_dict(cls, obj: dict) -> "FlightTruth":
        return cls(
            obj["flightRef"],
            parse_time(obj["departure"]),
            parse_time(obj["arrival"]),
            [(s, parse_time(a), parse_time(b)) for s, a, b in obj["intervals"]],
            tuple(obj["cases"]),
        )


@dataclass
class GroundTruth:
    flights: dict = field(default_factory=dict)  # flightRef -> FlightTruth
    manifest: dict = field(default_factory=dict)  # day -> set of flightRef with a message that day
    tally: dict = field(default_factory=dict)  # day -> Counter(MsgType -> n)

    def to_dict(self) -> dict:
        return {
            "flights": [self.flights[k].to_dict() for k in sorted(self.flights)],
            "manifest": {d.isoformat(): sorted(refs) for d, refs in sorted(self.manifest.items())},
            "tally": {
                d.isoformat(): {t.value: c[t] for t in MsgType} for d, c in sorted(self.tally.items())
            },
        }

    @classmethod
    def from_dict(cls, obj: dict) -> "GroundTruth":
        truth = cls()
        for f in obj["flights"]:
            ft = FlightTruth.from_dict(f)
            truth.flights[ft.flight_ref] = ft
        truth.manifest = {date.fromisoformat(d): set(refs) for d, refs in obj["manifest"].items()}
        truth.tally = {
            date.fromisoformat(d): Counter({MsgType(k): v for k, v in c.items()}) for d, c in obj["tally"].items()
        }
        return truth


# ---------------------------------------------------------------------------
# generation


def _rng(seed) -> np.random.Generator:
    return seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)


def _route(rng, sectors) -> tuple:
    k = int(rng.integers(1, MAX_ROUTE + 1))
    names = []
    for _ in range(k):
        choices = [s for s in sectors if not names or s != names[-1]] or list(sectors)
        names.append(choices[int(rng.integers(len(choices)))])
    dwells = [int(rng.integers(MIN_DWELL, MAX_DWELL + 1)) for _ in names]
    return tuple(names), tuple(dwells)


def _departure_second_of_day(rng, profile, whole_minute) -> int:
    weights = np.asarray(profile, dtype=float)
    hour = int(rng.choice(24, p=weights / weights.sum()))
    minute = int(rng.integers(60))
    second = 0 if whole_minute else int(rng.integers(60))
    return hour * 3600 + minute * 60 + second


def clean_flight_messages(flight_ref: str, dep: datetime, route, dwells, rng) -> list:
    """Messages of a well-behaved flight, in the desirable order."""
    offsets = np.concatenate([[0], np.cumsum(dwells)[:-1]]).astype(int).tolist()
    arr = dep + timedelta(minutes=int(sum(dwells)))
    msgs = [RawMessage(MsgType.DEPARTURE, flight_ref, dep, DeparturePayload(dep, Qualifier.ACTUAL))]
    lat, lon = float(rng.uniform(26, 48)), float(rng.uniform(-122, -70))
    heading = float(rng.uniform(0, 360))
    t = dep + timedelta(seconds=30)
    while t < arr:
        track = TrackPayload(
            round(lat, 4), round(lon, 4), float(int(rng.integers(100, 400)) * 100),
            float(int(rng.integers(280, 520))), round(heading % 360.0, 1) % 360.0,
        )
        msgs.append(RawMessage(MsgType.TRACK, flight_ref, t, track))
        lat = min(max(lat + float(rng.normal(0, 0.5)), -89.0), 89.0)
        lon = min(max(lon + float(rng.normal(0, 0.5)), -179.0), 179.0)
        heading += float(rng.normal(0, 15))
        t += timedelta(minutes=TRACK_PERIOD_MIN)
        if len(msgs) == 2:
            msgs.append(
                RawMessage(
                    MsgType.SECTORS, flight_ref, dep + timedelta(seconds=60),
                    SectorsPayload(tuple(zip(route, offsets))),
                )
            )
    msgs.append(
        RawMessage(
            MsgType.ARRIVAL, flight_ref, arr,
            ArrivalPayload(arr, Qualifier.ACTUAL, dep, Qualifier.ACTUAL),
        )
    )
    return msgs


def _find(messages, msg_type, pred=lambda m: True, last=False):
    hits = [i for i, m in enumerate(messages) if m.msg_type is msg_type and pred(m)]
    if not hits:
        return None
    return hits[-1] if last else hits[0]


def inject_anomalies(messages: list, case: int, seed) -> list:
    """Apply one confusion case to a clean flight's message list (new list)."""
    if case not in (1, 2, 3, 4):
        raise UnknownCase(f"unknown confusion case {case!r}")
    rng = _rng(seed)
    out = list(messages)
    actual = lambda m: m.payload.qualifier is Qualifier.ACTUAL  # noqa: E731
    # the last emitted ACTUAL report is the genuine one, so cases compose
    i_dep = _find(out, MsgType.DEPARTURE, actual, last=True)
    i_arr = _find(out, MsgType.ARRIVAL)
    if i_dep is None or i_arr is None:
        raise ValueError("confusion cases need an ACTUAL departure and an arrival message")
    dep_msg, arr_msg = out[i_dep], out[i_arr]
    dep_time = dep_msg.payload.departure_time
    if case == 1:
        est = dep_time - timedelta(minutes=int(rng.integers(5, 16)))
        issued = dep_msg.msg_time - timedelta(minutes=int(rng.integers(20, 61)))
        out.insert(
            0,
            RawMessage(MsgType.DEPARTURE, dep_msg.flight_ref, issued, DeparturePayload(est, Qualifier.ESTIMATED)),
        )
    elif case == 2:
        p = arr_msg.payload
        # earlier than every known departure and never later than before
        known = [m.payload.departure_time for m in out if m.msg_type is MsgType.DEPARTURE and actual(m)]
        floor_ = min(known + [p.arrival_time])
        if p.departure_time is not None:
            floor_ = min(floor_, p.departure_time)
        bad = floor_ - timedelta(minutes=int(rng.integers(1, 31)))
        out[i_arr] = RawMessage(
            MsgType.ARRIVAL, arr_msg.flight_ref, arr_msg.msg_time,
            ArrivalPayload(bad, p.arrival_qualifier, p.departure_time, p.departure_qualifier),
        )
    elif case == 3:
        late = arr_msg.msg_time + timedelta(minutes=int(rng.integers(1, 31)))
        moved = RawMessage(MsgType.DEPARTURE, dep_msg.flight_ref, late, dep_msg.payload)
        del out[i_dep]
        out.append(moved)
    else:
        shift = int(rng.integers(2, 11)) * (1 if rng.random() < 0.5 else -1)
        dup = RawMessage(
            MsgType.DEPARTURE, dep_msg.flight_ref, dep_msg.msg_time,
            DeparturePayload(dep_time + timedelta(minutes=shift), Qualifier.ACTUAL),
        )
        out.insert(i_dep, dup)  # emitted first, so the genuine report stays most recent
    return out


def _day_start(day: date) -> datetime:
    return datetime(day.year, day.month, day.day, tzinfo=UTC)


def _day_flights(spec: ScenarioSpec, day: date, template: list):
    rng = np.random.default_rng([spec.seed, day.toordinal()])
    start = _day_start(day)
    plans = []
    for dep_sec, route, dwells in template:
        jitter = int(rng.integers(-spec.jitter_minutes, spec.jitter_minutes + 1)) if spec.jitter_minutes else 0
        plans.append((start + timedelta(seconds=dep_sec, minutes=jitter), route, dwells))
    for _ in range(spec.flights_per_day - len(template)):
        dep_sec = _departure_second_of_day(rng, spec.daily_profile, spec.whole_minute_departures)
        route, dwells = _route(rng, spec.sectors)
        plans.append((start + timedelta(seconds=dep_sec), route, dwells))
    plans.sort(key=lambda p: p[0])
    return rng, plans


def _template(spec: ScenarioSpec) -> list:
    rng = np.random.default_rng([spec.seed, 7])
    n = int(round(spec.template_fraction * spec.flights_per_day))
    return [
        (_departure_second_of_day(rng, spec.daily_profile, spec.whole_minute_departures), *_route(rng, spec.sectors))
        for _ in range(n)
    ]


def generate_scenario(spec: ScenarioSpec):
    """Return ``(lines, truth)``: time-ordered canonical message lines and the ground truth."""
    spec.validate()
    template = _template(spec)
    truth = GroundTruth()
    emitted = []  # (msgTime, flight_no, msg_no, message)
    flight_no = 0
    for day in spec.days:
        rng, plans = _day_flights(spec, day, template)
        for i, (dep, route, dwells) in enumerate(plans):
            ref = f"F{day:%Y%m%d}{i:05d}"
            msgs = clean_flight_messages(ref, dep, route, dwells, rng)
            cases = []
            for case in (1, 2, 3, 4):
                if rng.random() < spec.anomaly_rates.get(case, 0.0):
                    msgs = inject_anomalies(msgs, case, rng)
                    cases.append(case)
            entries = [dep + timedelta(minutes=int(o)) for o in np.concatenate([[0], np.cumsum(dwells)])]
            intervals = [(s, entries[k], entries[k + 1]) for k, s in enumerate(route)]
            truth.flights[ref] = FlightTruth(ref, dep, entries[-1], intervals, tuple(cases))
            for j, m in enumerate(msgs):
                emitted.append((m.msg_time, flight_no, j, m))
            flight_no += 1
    emitted.sort(key=lambda e: e[:3])
    lines = []
    for _, _, _, m in emitted:
        d = m.msg_time.date()
        truth.manifest.setdefault(d, set()).add(m.flight_ref)
        truth.tally.setdefault(d, Counter({t: 0 for t in MsgType}))[m.msg_type] += 1
        lines.append(serialize_message(m))
    return lines, truth


def lines_by_day(lines: list) -> dict:
    """Split time-ordered message lines into per-day lists (by msgTime)."""
    out = {}
    for line in lines:
        # msgTime is a fixed-width field in canonical form
        i = line.index('"msgTime":"') + len('"msgTime":"')
        out.setdefault(date.fromisoformat(line[i:i + 10]), []).append(line)
    return out


def generate_weather(spec: ScenarioSpec) -> list:
    """Hourly terminal weather observations for the spec's weather sectors."""
    out = []
    for day in spec.days:
        rng = np.random.default_rng([spec.seed, day.toordinal(), 11])
        for sector in spec.weather_sectors:
            base_t = float(rng.uniform(-5, 25))
            for hour in range(24):
                t = _day_start(day) + timedelta(hours=hour)
                out.append({
                    "sector": sector,
                    "time": format_time(t),
                    "temperature": round(base_t + 6 * np.sin((hour - 9) / 24 * 2 * np.pi) + float(rng.normal(0, 1)), 1),
                    "windSpeed": round(abs(float(rng.normal(10, 5))), 1),
                    "windDirection": round(float(rng.uniform(0, 360))) % 360.0,
                    "humidity": round(float(rng.uniform(30, 95)), 0),
                    "pressure": round(float(rng.normal(1013, 6)), 1),
                })
    return out


def write_scenario(spec: ScenarioSpec, out_dir) -> dict:
    """Write ``messages/<day>.msgs``, ``truth.json``, ``weather.jsonl`` and ``spec.json``."""
    out = Path(out_dir)
    (out / "messages").mkdir(parents=True, exist_ok=True)
    lines, truth = generate_scenario(spec)
    per_day = lines_by_day(lines)
    for day, day_lines in sorted(per_day.items()):
        (out / "messages" / f"{day.isoformat()}.msgs").write_text("".join(l + "\n" for l in day_lines), encoding="utf-8")
    (out / "truth.json").write_text(json.dumps(truth.to_dict(), sort_keys=True) + "\n", encoding="utf-8")
    weather = generate_weather(spec)
    (out / "weather.jsonl").write_text(
        "".join(json.dumps(w, sort_keys=True) + "\n" for w in weather), encoding="utf-8"
    )
    (out / "spec.json").write_text(json.dumps(spec.to_dict(), sort_keys=True, indent=2) + "\n", encoding="utf-8")
    return {d.isoformat(): len(v) for d, v in sorted(per_day.items())}


# ---------------------------------------------------------------------------
# oracle


def oracle_sector_counts(truth: GroundTruth, day: date, countable_only: bool = True) -> dict:
    """Brute-force sector counts for ``day`` straight from the true intervals.

    A flight occupies minute ``[m, m+60s)`` of sector ``s`` when that minute
    overlaps one of its ``s`` intervals; if two of its intervals overlap the
    same minute, the one entered later holds it.
    """
    from .occupancy import MINUTES_PER_DAY, SectorCountSeries  # container type only

    t0 = int(_day_start(day).timestamp())
    starts = t0 + 60 * np.arange(MINUTES_PER_DAY, dtype=np.int64)
    per_sector = {}
    for ref in sorted(truth.flights):
        ft = truth.flights[ref]
        if countable_only and not ft.countable:
            continue
        if int(ft.arrival.timestamp()) <= t0 - 60 or int(ft.departure.timestamp()) >= t0 + 86400:
            continue
        holder = np.full(MINUTES_PER_DAY, -1, dtype=np.int64)
        for k, (_, entry, exit_) in enumerate(ft.intervals):
            overlaps = (starts < int(exit_.timestamp())) & (starts + 60 > int(entry.timestamp()))
            holder[overlaps] = k
        for m in np.flatnonzero(holder >= 0).tolist():
            sector = ft.intervals[holder[m]][0]
            per_sector.setdefault(sector, {}).setdefault(m, []).append((ref, ft.level))
    out = {}
    for sector, cells in per_sector.items():
        s = SectorCountSeries(sector, day)
        s.flights = list(s.flights)
        for m, entries in cells.items():
            s.counts[m] = len(entries)
            s.uncertainty[m] = max(level for _, level in entries)
            s.flights[m] = tuple(sorted(ref for ref, _ in entries))
        out[sector] = s
    return out
