"""Model store (ML collection), per-sector training, and prediction requests."""

from __future__ import annotations

import fcntl
import json
import logging
import math
import os
import threading
import time
from contextlib import contextmanager
from dataclasses import dataclass, field
from datetime import date, datetime, timedelta
from pathlib import Path
from typing import Optional
from urllib.parse import quote, unquote

import numpy as np

from .curvefilter import DEFAULT_WINDOW, DailyCurve, filter_training_curves
from .errors import BadRequest, NotFound, RecordError, SectorCongestError, StorageFailure
from .features import FeatureSchema, WeatherObservation, WeatherTable, encode_matrix
from .gbm import BoostConfig, BoostedModel, cross_validate, train_boosted
from .messages import UTC, day_start, format_time, parse_time
from .occupancy import MINUTES_PER_DAY, CountStore

log = logging.getLogger(__name__)

MAX_BUCKETS = 7 * MINUTES_PER_DAY


def weather_path(root) -> Path:
    return Path(root) / "weather" / "observations.jsonl"


# ---------------------------------------------------------------------------
# model store


@dataclass
class StoredModel:
    sector: str
    model: BoostedModel
    trained_through: date
    training_duration: float
    cv_mean_score: Optional[float] = None
    created_at: datetime = field(default_factory=lambda: datetime.now(UTC).replace(microsecond=0))
    model_id: Optional[str] = None

    def to_dict(self) -> dict:
        return {
            "modelId": self.model_id,
            "sector": self.sector,
            "trainedThrough": self.trained_through.isoformat(),
            "trainingDuration": self.training_duration,
            "cvMeanScore": self.cv_mean_score,
            "createdAt": format_time(self.created_at),
            "model": self.model.to_dict(),
        }

    @classmethod
    def from_dict(cls, obj: dict) -> "StoredModel":
        return cls(
            sector=obj["sector"],
            model=BoostedModel.from_dict(obj["model"]),
            trained_through=date.fromisoformat(obj["trainedThrough"]),
            training_duration=obj["trainingDuration"],
            cv_mean_score=obj.get("cvMeanScore"),
            created_at=parse_time(obj["createdAt"], "createdAt"),
            model_id=obj.get("modelId"),
        )


class ModelStore:
    """``<root>/ml/<sector>/v<NNNN>.model`` plus an ``ACTIVE`` pointer per sector.

    Activation replaces the pointer with ``os.replace``, so a reader sees
    either the previous or the new model, never a partial one.
    """

    def __init__(self, root):
        self.base = Path(root) / "ml"
        self._cache = {}
        self._cache_lock = threading.Lock()

    def _sector_dir(self, sector: str) -> Path:
        return self.base / quote(sector, safe="")

    def sectors(self) -> list:
        if not self.base.is_dir():
            return []
        return sorted(unquote(p.name) for p in self.base.iterdir() if (p / "ACTIVE").exists())

    def versions(self, sector: str) -> list:
        d = self._sector_dir(sector)
        return sorted(p.stem for p in d.glob("v*.model")) if d.is_dir() else []

    def save_model(self, stored: StoredModel) -> str:
        d = self._sector_dir(stored.sector)
        try:
            d.mkdir(parents=True, exist_ok=True)
            with open(d / ".lock", "w") as lock:
                fcntl.flock(lock, fcntl.LOCK_EX)
                versions = self.versions(stored.sector)
                n = int(versions[-1][1:]) + 1 if versions else 1
                version = f"v{n:04d}"
                stored.model_id = f"{stored.sector}@{version}"
                body = json.dumps(stored.to_dict(), sort_keys=True, separators=(",", ":"))
                tmp = d / f".{version}.tmp"
                with open(tmp, "w", encoding="utf-8") as fh:
                    fh.write(body)
                    fh.flush()
                    os.fsync(fh.fileno())
                os.replace(tmp, d / f"{version}.model")
                ptr = d / ".ACTIVE.tmp"
                ptr.write_text(version + "\n", encoding="utf-8")
                os.replace(ptr, d / "ACTIVE")
        except OSError as exc:
            raise StorageFailure(f"could not save model for {stored.sector}: {exc}") from exc
        return stored.model_id

    def _read(self, sector: str, version: str) -> StoredModel:
        key = (sector, version)
        with self._cache_lock:
            hit = self._cache.get(key)
        if hit is not None:
            return hit
        path = self._sector_dir(sector) / f"{version}.model"
        try:
            with open(path, encoding="utf-8") as fh:
                stored = StoredModel.from_dict(json.load(fh))
        except FileNotFoundError:
            raise NotFound(f"no model {sector}@{version}") from None
        with self._cache_lock:
            self._cache[key] = stored
        return stored

    def load_model(self, sector: str) -> StoredModel:
        """The active model of a sector."""
        try:
            version = (self._sector_dir(sector) / "ACTIVE").read_text(encoding="utf-8").strip()
        except FileNotFoundError:
            raise NotFound(f"no model for sector {sector!r}") from None
        return self._read(sector, version)

    def load_by_id(self, model_id: str) -> StoredModel:
        sector, _, version = model_id.rpartition("@")
        if not sector or not version:
            raise NotFound(f"malformed model id {model_id!r}")
        return self._read(sector, version)


# ---------------------------------------------------------------------------
# training datasets


@dataclass
class SectorDataset:
    sector: str
    X: np.ndarray
    y: np.ndarray
    days: list
    curves_total: int = 0
    rejected: list = field(default_factory=list)
    schema: FeatureSchema = field(default_factory=FeatureSchema)


def sector_curves(counts: CountStore, sector: str, days: list) -> list:
    """Whole-day curves of one sector; a prepared day without the sector is all zeros."""
    curves = []
    for day in days:
        series = counts.load_series(sector, day)
        values = np.zeros(MINUTES_PER_DAY, dtype=np.int64) if series is None else series.counts.astype(np.int64)
        curves.append(DailyCurve(sector, day, values))
    return curves


def build_sector_dataset(
    counts: CountStore,
    sector: str,
    days: list,
    with_uncertainty: bool = False,
    weather: Optional[WeatherTable] = None,
    filter_curves: bool = True,
    window=DEFAULT_WINDOW,
) -> SectorDataset:
    """One sample per (day, minute) of the accepted curves; target = count."""
    curves = sector_curves(counts, sector, days)
    if filter_curves:
        accepted, results = filter_training_curves(curves, window)
        rejected = sorted(i for r in results.values() for i in r.rejected)
    else:
        accepted, rejected = curves, []
    schema = FeatureSchema(with_uncertainty=with_uncertainty)
    times, wx, unc, ys = [], [], [], []
    for curve in accepted:
        start = day_start(curve.day)
        day_times = [start + timedelta(minutes=m) for m in range(MINUTES_PER_DAY)]
        times.extend(day_times)
        ys.append(curve.values)
        if weather is not None:
            wx.extend(weather.lookup(sector, t) for t in day_times)
        if with_uncertainty:
            series = counts.load_series(sector, curve.day)
            unc.append(np.ones(MINUTES_PER_DAY, dtype=np.int64) if series is None else series.uncertainty)
    X = encode_matrix(
        times,
        wx if weather is not None else None,
        np.concatenate(unc) if with_uncertainty and unc else None,
        schema,
    )
    y = np.concatenate(ys).astype(float) if ys else np.zeros(0)
    return SectorDataset(sector, X, y, [c.day for c in accepted], len(curves), rejected, schema)


def days_in_range(counts: CountStore, day_from: Optional[date], day_to: Optional[date]) -> list:
    return [
        d for d in counts.prepared_days()
        if (day_from is None or d >= day_from) and (day_to is None or d <= day_to)
    ]


def sectors_in_days(counts: CountStore, days: list) -> list:
    found = set()
    for d in days:
        found.update(counts.sectors(d))
    return sorted(found)


# ---------------------------------------------------------------------------
# training orchestration


@dataclass
class TrainConfig:
    boost: BoostConfig = field(default_factory=BoostConfig)
    with_uncertainty: bool = False
    use_weather: bool = True
    filter_curves: bool = True
    window: tuple = DEFAULT_WINDOW
    cv_k: Optional[int] = None
    cv_seed: int = 0
    sectors: Optional[list] = None


@dataclass
class SectorTrainingResult:
    sector: str
    model_id: Optional[str] = None
    samples: int = 0
    curves: int = 0
    rejected: list = field(default_factory=list)
    duration: float = 0.0
    cv_mean_score: Optional[float] = None
    error: Optional[str] = None


@dataclass
class TrainingReport:
    days: list
    sectors: list = field(default_factory=list)  # SectorTrainingResult
    total_duration: float = 0.0

    @property
    def trained(self) -> list:
        return [r for r in self.sectors if r.model_id is not None]


@contextmanager
def training_lock(root):
    path = Path(root) / "ml" / ".train.lock"
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as fh:
        fcntl.flock(fh, fcntl.LOCK_EX)
        try:
            yield
        finally:
            fcntl.flock(fh, fcntl.LOCK_UN)


def train_all_sectors(root, day_from: Optional[date] = None, day_to: Optional[date] = None,
                      config: TrainConfig = None) -> TrainingReport:
    """Train and activate one model per sector seen in the prepared days."""
    config = config or TrainConfig()
    counts = CountStore(root)
    store = ModelStore(root)
    t_start = time.perf_counter()
    with training_lock(root):
        days = days_in_range(counts, day_from, day_to)
        report = TrainingReport(days)
        if not days:
            return report
        weather = WeatherTable.load(weather_path(root)) if config.use_weather else None
        sectors = config.sectors if config.sectors is not None else sectors_in_days(counts, days)
        for sector in sectors:
            res = SectorTrainingResult(sector)
            t0 = time.perf_counter()
            try:
                ds = build_sector_dataset(
                    counts, sector, days, config.with_uncertainty, weather, config.filter_curves, config.window
                )
                res.samples, res.curves, res.rejected = len(ds.y), ds.curves_total, ds.rejected
                if config.cv_k:
                    res.cv_mean_score = cross_validate(ds.X, ds.y, config.cv_k, config.boost, config.cv_seed, ds.schema).mean_score
                model = train_boosted(ds.X, ds.y, config.boost, ds.schema, sector)
                res.duration = time.perf_counter() - t0
                res.model_id = store.save_model(
                    StoredModel(sector, model, days[-1], res.duration, res.cv_mean_score)
                )
            except SectorCongestError as exc:
                res.error = f"{type(exc).__name__}: {exc}"
                res.duration = time.perf_counter() - t0
                log.warning("training %s failed: %s", sector, res.error)
            report.sectors.append(res)
        report.total_duration = time.perf_counter() - t_start
    return report


# ---------------------------------------------------------------------------
# prediction requests


@dataclass
class PredictionRequest:
    sector: str
    start_time: datetime
    end_time: datetime
    step_minutes: int = 1
    weather: Optional[WeatherObservation] = None
    uncertainty: Optional[int] = None

    def __post_init__(self):
        if not isinstance(self.sector, str) or not self.sector:
            raise BadRequest("sector: must be a non-empty string")
        if not isinstance(self.step_minutes, int) or isinstance(self.step_minutes, bool) or self.step_minutes < 1:
            raise BadRequest("stepMinutes: must be an integer >= 1")
        if not self.start_time < self.end_time:
            raise BadRequest("startTime must be before endTime")
        if self.start_time.second or self.start_time.microsecond:
            raise BadRequest("startTime must be minute-aligned")
        if self.uncertainty is not None and self.uncertainty not in (1, 2, 3):
            raise BadRequest("uncertainty: must be 1, 2 or 3")
        if self.n_buckets > MAX_BUCKETS:
            raise BadRequest(f"horizon too long: at most {MAX_BUCKETS} buckets per request")

    @property
    def n_buckets(self) -> int:
        span = (self.end_time - self.start_time).total_seconds() / 60
        return math.ceil(span / self.step_minutes)

    @classmethod
    def from_dict(cls, obj) -> "PredictionRequest":
        if not isinstance(obj, dict):
            raise BadRequest("request body must be an object")
        try:
            weather = obj.get("weather")
            if weather is not None and not isinstance(weather, dict):
                raise BadRequest("weather: must be an object")
            return cls(
                sector=obj["sector"],
                start_time=parse_time(obj["startTime"], "startTime"),
                end_time=parse_time(obj["endTime"], "endTime"),
                step_minutes=obj.get("stepMinutes", 1),
                weather=None if weather is None else WeatherObservation.from_dict(weather),
                uncertainty=obj.get("uncertainty"),
            )
        except KeyError as exc:
            raise BadRequest(f"missing field {exc.args[0]}") from None
        except RecordError as exc:
            raise BadRequest(str(exc)) from None

    def to_dict(self) -> dict:
        out = {
            "sector": self.sector,
            "startTime": format_time(self.start_time),
            "endTime": format_time(self.end_time),
            "stepMinutes": self.step_minutes,
        }
        if self.weather is not None:
            out["weather"] = self.weather.to_dict()
        if self.uncertainty is not None:
            out["uncertainty"] = self.uncertainty
        return out


@dataclass
class PredictionResponse:
    sector: str
    buckets: list  # [(time, predicted count)]
    model_id: str
    elapsed_millis: float

    def to_dict(self) -> dict:
        return {
            "sector": self.sector,
            "modelId": self.model_id,
            "elapsedMillis": round(self.elapsed_millis, 3),
            "buckets": [{"time": format_time(t), "predictedCount": c} for t, c in self.buckets],
        }


def error_body(exc: Exception) -> dict:
    return {"error": {"type": type(exc).__name__, "message": str(exc)}}


class PredictionService:
    """Decodes requests, predicts with the sector's active model, encodes responses."""

    def __init__(self, root):
        self.root = Path(root)
        self.models = ModelStore(root)

    def handle_predict_request(self, req: PredictionRequest) -> PredictionResponse:
        t0 = time.perf_counter()
        stored = self.models.load_model(req.sector)
        times = [req.start_time + timedelta(minutes=i * req.step_minutes) for i in range(req.n_buckets)]
        schema = stored.model.schema
        wx = [req.weather] * len(times) if req.weather is not None else None
        unc = [req.uncertainty or 1] * len(times) if schema.with_uncertainty else None
        X = encode_matrix(times, wx, unc, schema)
        counts = stored.model.predict_counts(X)
        elapsed = (time.perf_counter() - t0) * 1000.0
        return PredictionResponse(req.sector, list(zip(times, counts.tolist())), stored.model_id, elapsed)

    def handle_json(self, body) -> tuple:
        """``(http status, response object)``; failures become error bodies."""
        t0 = time.perf_counter()
        try:
            obj = json.loads(body) if isinstance(body, (str, bytes, bytearray)) else body
            req = PredictionRequest.from_dict(obj)
            resp = self.handle_predict_request(req)
            resp.elapsed_millis = (time.perf_counter() - t0) * 1000.0
            return 200, resp.to_dict()
        except ValueError as exc:
            if isinstance(exc, json.JSONDecodeError):
                return 400, error_body(BadRequest(f"body is not JSON: {exc}"))
            return 400, error_body(BadRequest(str(exc)))
        except BadRequest as exc:
            return 400, error_body(exc)
        except NotFound as exc:
            return 404, error_body(exc)
        except SectorCongestError as exc:
            return 500, error_body(exc)


# ---------------------------------------------------------------------------
# offline validation


@dataclass
class ValidationRow:
    sector: str
    daily_count: float  # mean distinct flights per day
    samples: int
    score: float
    score_with_uncertainty: Optional[float] = None

    def to_dict(self) -> dict:
        return {
            "sector": self.sector,
            "dailyCount": self.daily_count,
            "samples": self.samples,
            "score": self.score,
            "scoreWithUncertainty": self.score_with_uncertainty,
        }

    @classmethod
    def from_dict(cls, obj: dict) -> "ValidationRow":
        return cls(obj["sector"], obj["dailyCount"], obj["samples"], obj["score"], obj.get("scoreWithUncertainty"))


def daily_flight_count(counts: CountStore, sector: str, days: list) -> float:
    total = 0
    for d in days:
        series = counts.load_series(sector, d)
        if series is not None:
            total += len({ref for refs in series.flights for ref in refs})
    return total / len(days) if days else 0.0


def validate_sectors(root, day_from: Optional[date] = None, day_to: Optional[date] = None, k: int = 5,
                     seed: int = 0, config: TrainConfig = None, compare_uncertainty: bool = False) -> list:
    """k-fold score per sector; optionally also with the uncertainty feature."""
    config = config or TrainConfig()
    counts = CountStore(root)
    days = days_in_range(counts, day_from, day_to)
    weather = WeatherTable.load(weather_path(root)) if config.use_weather else None
    sectors = config.sectors if config.sectors is not None else sectors_in_days(counts, days)
    rows = []
    for sector in sectors:
        plain = build_sector_dataset(counts, sector, days, config.with_uncertainty, weather,
                                     config.filter_curves, config.window)
        score = cross_validate(plain.X, plain.y, k, config.boost, seed, plain.schema).mean_score
        with_u = None
        if compare_uncertainty and not config.with_uncertainty:
            ds = build_sector_dataset(counts, sector, days, True, weather, config.filter_curves, config.window)
            with_u = cross_validate(ds.X, ds.y, k, config.boost, seed, ds.schema).mean_score
        rows.append(ValidationRow(sector, daily_flight_count(counts, sector, days), len(plain.y), score, with_u))
    return rows


def write_validation_report(rows: list, path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps([r.to_dict() for r in rows], sort_keys=True, indent=1) + "\n", encoding="utf-8")


def load_validation_report(path) -> list:
    try:
        with open(path, encoding="utf-8") as fh:
            return [ValidationRow.from_dict(o) for o in json.load(fh)]
    except FileNotFoundError:
        raise NotFound(f"no validation report at {path}") from None
