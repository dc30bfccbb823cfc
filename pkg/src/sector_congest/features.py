"""Feature encoding for the sector count regressors.

A sample is ``[x_t, x_w, mask]`` (+ the uncertainty level when the schema
asks for it):

* x_t: minute of day, one-hot weekday (Mon..Sun), day of year
* x_w: temperature (degC), wind speed (kt), wind direction as (sin, cos),
  humidity (%), pressure (hPa); missing values are encoded as 0
* mask: presence flags for the five weather variables
"""

from __future__ import annotations

import bisect
import json
import math
from dataclasses import dataclass
from datetime import datetime, timedelta
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .messages import UTC, format_time, parse_time

WEEKDAY_NAMES = ("Mon", "Tue", "Wed", "Thu", "Fri", "Sat", "Sun")
TIME_FEATURES = ("minuteOfDay",) + tuple(f"weekday{d}" for d in WEEKDAY_NAMES) + ("dayOfYear",)
WEATHER_FEATURES = ("temperature", "windSpeed", "windDirSin", "windDirCos", "humidity", "pressure")
WEATHER_VARIABLES = ("temperature", "windSpeed", "windDirection", "humidity", "pressure")
MASK_FEATURES = tuple(f"has{v[0].upper()}{v[1:]}" for v in WEATHER_VARIABLES)
UNCERTAINTY_FEATURE = "uncertainty"


@dataclass(frozen=True)
class FeatureSchema:
    with_uncertainty: bool = False
    version: int = 1

    @property
    def names(self) -> tuple:
        names = TIME_FEATURES + WEATHER_FEATURES + MASK_FEATURES
        return names + (UNCERTAINTY_FEATURE,) if self.with_uncertainty else names

    @property
    def width(self) -> int:
        return len(self.names)

    def to_dict(self) -> dict:
        return {"version": self.version, "names": list(self.names)}

    @classmethod
    def from_dict(cls, obj: dict) -> "FeatureSchema":
        schema = cls(with_uncertainty=UNCERTAINTY_FEATURE in obj["names"], version=obj.get("version", 1))
        if list(schema.names) != list(obj["names"]):
            raise ValueError(f"unsupported feature list {obj['names']}")
        return schema


@dataclass(frozen=True)
class WeatherObservation:
    temperature: Optional[float] = None
    wind_speed: Optional[float] = None
    wind_direction: Optional[float] = None  # degrees
    humidity: Optional[float] = None
    pressure: Optional[float] = None

    @classmethod
    def from_dict(cls, obj: dict) -> "WeatherObservation":
        return cls(
            obj.get("temperature"), obj.get("windSpeed"), obj.get("windDirection"),
            obj.get("humidity"), obj.get("pressure"),
        )

    def to_dict(self) -> dict:
        out = {
            "temperature": self.temperature, "windSpeed": self.wind_speed,
            "windDirection": self.wind_direction, "humidity": self.humidity, "pressure": self.pressure,
        }
        return {k: v for k, v in out.items() if v is not None}


@dataclass(frozen=True)
class FeatureVector:
    x_t: tuple
    x_w: tuple
    mask: tuple
    uncertainty: Optional[int] = None

    def to_array(self, schema: FeatureSchema) -> np.ndarray:
        parts = list(self.x_t) + list(self.x_w) + list(self.mask)
        if schema.with_uncertainty:
            parts.append(float(self.uncertainty if self.uncertainty is not None else 1))
        return np.asarray(parts, dtype=float)


def _weather_values(obs: Optional[WeatherObservation]):
    if obs is None:
        return (0.0,) * 6, (0.0,) * 5
    vals = [obs.temperature, obs.wind_speed, obs.wind_direction, obs.humidity, obs.pressure]
    mask = tuple(0.0 if v is None else 1.0 for v in vals)
    if obs.wind_direction is None:
        s = c = 0.0
    else:
        rad = math.radians(obs.wind_direction)
        s, c = math.sin(rad), math.cos(rad)
    x_w = (
        float(obs.temperature or 0.0), float(obs.wind_speed or 0.0), s, c,
        float(obs.humidity or 0.0), float(obs.pressure or 0.0),
    )
    return x_w, mask


def encode_features(bucket_time: datetime, weather: Optional[WeatherObservation] = None,
                    uncertainty: Optional[int] = None) -> FeatureVector:
    if bucket_time.second or bucket_time.microsecond:
        raise ValueError("bucket time must be minute-aligned")
    t = bucket_time.astimezone(UTC)
    onehot = [0.0] * 7
    onehot[t.weekday()] = 1.0
    x_t = (float(t.hour * 60 + t.minute), *onehot, float(t.timetuple().tm_yday))
    x_w, mask = _weather_values(weather)
    return FeatureVector(x_t, x_w, mask, uncertainty)


def encode_matrix(times: Sequence[datetime], weather: Sequence[Optional[WeatherObservation]] = None,
                  uncertainty: Sequence[int] = None, schema: FeatureSchema = FeatureSchema()) -> np.ndarray:
    """Row-wise ``encode_features(...).to_array(schema)`` for many buckets."""
    n = len(times)
    X = np.zeros((n, schema.width), dtype=float)
    if n == 0:
        return X
    secs = np.array([int(t.timestamp()) for t in times], dtype=np.int64)
    if (secs % 60).any():
        raise ValueError("bucket times must be minute-aligned")
    days = secs // 86400
    X[:, 0] = (secs % 86400) // 60
    weekday = (days + 3) % 7  # 1970-01-01 was a Thursday
    X[np.arange(n), 1 + weekday] = 1.0
    # day of year via numpy datetime arithmetic
    d64 = days.astype("datetime64[D]")
    X[:, 8] = (d64 - d64.astype("datetime64[Y]")).astype(np.int64) + 1
    if weather is not None:
        cache = {}
        for i, obs in enumerate(weather):
            if obs is None:
                continue
            row = cache.get(obs)
            if row is None:
                x_w, mask = _weather_values(obs)
                row = cache[obs] = np.asarray(x_w + mask)
            X[i, 9:20] = row
    if schema.with_uncertainty:
        X[:, 20] = 1.0 if uncertainty is None else np.asarray(uncertainty, dtype=float)
    return X


class WeatherTable:
    """Terminal weather observations per sector with an as-of lookup.

    A bucket uses the latest observation at or before it, provided it is no
    older than ``max_age``.
    """

    def __init__(self, max_age=timedelta(minutes=90)):
        self.max_age = max_age
        self._obs = {}  # sector -> (sorted times, observations)

    def add(self, sector: str, time: datetime, obs: WeatherObservation) -> None:
        times, values = self._obs.setdefault(sector, ([], []))
        i = bisect.bisect_right(times, time)
        times.insert(i, time)
        values.insert(i, obs)

    def sectors(self) -> list:
        return sorted(self._obs)

    def lookup(self, sector: str, time: datetime) -> Optional[WeatherObservation]:
        entry = self._obs.get(sector)
        if entry is None:
            return None
        times, values = entry
        i = bisect.bisect_right(times, time) - 1
        if i < 0 or time - times[i] > self.max_age:
            return None
        return values[i]

    @classmethod
    def from_records(cls, records, **kwargs) -> "WeatherTable":
        table = cls(**kwargs)
        for r in records:
            table.add(r["sector"], parse_time(r["time"], "time"), WeatherObservation.from_dict(r))
        return table

    @classmethod
    def load(cls, path, **kwargs) -> "WeatherTable":
        path = Path(path)
        if not path.exists():
            return cls(**kwargs)
        with open(path, encoding="utf-8") as fh:
            return cls.from_records((json.loads(line) for line in fh if line.strip()), **kwargs)


def weather_record(sector: str, time: datetime, obs: WeatherObservation) -> dict:
    return {"sector": sector, "time": format_time(time), **obs.to_dict()}
