"""Sector aircraft-count pipeline: raw message storage, flight documents,
per-minute sector occupancy, curve filtering, boosted regression and serving."""

from .curvefilter import DailyCurve, filter_training_curves, reject_outliers
from .errors import SectorCongestError
from .features import FeatureSchema, WeatherObservation, encode_features, encode_matrix
from .gbm import BoostConfig, BoostedModel, cross_validate, score_scc, train_boosted
from .messages import MsgType, Qualifier, RawMessage, parse_message, serialize_message
from .occupancy import CountStore, SectorCountSeries, correlate_flight, reduce_sector_counts
from .prep import PrepConfig, Preparer, run_preparation
from .rawstore import RawStore
from .serving import ModelStore, PredictionRequest, PredictionService, TrainConfig, train_all_sectors
from .synth import ScenarioSpec, generate_scenario, oracle_sector_counts

__version__ = "0.1.0"

__all__ = [
    "BoostConfig", "BoostedModel", "CountStore", "DailyCurve", "FeatureSchema", "ModelStore", "MsgType",
    "PrepConfig", "Preparer", "PredictionRequest", "PredictionService", "Qualifier", "RawMessage",
    "RawStore", "ScenarioSpec", "SectorCongestError", "SectorCountSeries", "TrainConfig", "WeatherObservation",
    "correlate_flight", "cross_validate", "encode_features", "encode_matrix", "filter_training_curves",
    "generate_scenario", "oracle_sector_counts", "parse_message", "reduce_sector_counts", "reject_outliers",
    "run_preparation", "score_scc", "serialize_message", "train_all_sectors", "train_boosted",
]
