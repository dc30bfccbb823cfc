"""Gradient boosting over least-squares regression trees, the exponential
accuracy score, and k-fold cross-validation.

Boosting procedure::

    F_0 = mean(y)
    for i in 1..N:
        r   = y - F_{i-1}(X)               # pseudo-residuals
        h_i = least-squares tree fit to r
        F_i = F_{i-1} + rho_i * h_i

with ``rho_i`` = shrinkage (optionally times a per-term line search factor).
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import DatasetTooSmall, EmptyArrays, EmptyDataset, LengthMismatch, SchemaMismatch, TooFewSamples
from .features import FeatureSchema, FeatureVector

log = logging.getLogger(__name__)

MODEL_FORMAT = "sector-congest-gbm"
MODEL_VERSION = 1
TIE_TOL = 1e-10


# ---------------------------------------------------------------------------
# regression trees


@dataclass
class RegressionTree:
    """Flattened binary tree; node 0 is the root.

    Internal nodes send ``x[feature] <= threshold`` to ``left``.  Leaves have
    ``feature == -1`` and carry ``value``.
    """

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray

    @property
    def n_nodes(self) -> int:
        return len(self.feature)

    @property
    def depth(self) -> int:
        def walk(i):
            if self.feature[i] < 0:
                return 0
            return 1 + max(walk(self.left[i]), walk(self.right[i]))
        return walk(0)

    def predict(self, X: np.ndarray) -> np.ndarray:
        X = np.atleast_2d(X)
        node = np.zeros(len(X), dtype=np.int64)
        rows = np.arange(len(X))
        while True:
            feat = self.feature[node]
            inner = feat >= 0
            if not inner.any():
                return self.value[node]
            idx = rows[inner]
            n = node[inner]
            go_left = X[idx, feat[inner]] <= self.threshold[n]
            node[idx] = np.where(go_left, self.left[n], self.right[n])

    def to_rows(self) -> list:
        return [
            [int(f), float(t), int(l), int(r), float(v)]
            for f, t, l, r, v in zip(self.feature, self.threshold, self.left, self.right, self.value)
        ]

    @classmethod
    def from_rows(cls, rows) -> "RegressionTree":
        a = list(zip(*rows))
        return cls(
            np.asarray(a[0], dtype=np.int64), np.asarray(a[1], dtype=float),
            np.asarray(a[2], dtype=np.int64), np.asarray(a[3], dtype=np.int64),
            np.asarray(a[4], dtype=float),
        )


class BinnedFeatures:
    """Per-feature sorted distinct values and integer codes of a design matrix.

    Computed once and shared by every tree fitted on the same rows.
    """

    def __init__(self, X: np.ndarray):
        X = np.asarray(X, dtype=float)
        self.X = X
        self.values = []
        self.codes = []
        for f in range(X.shape[1]):
            vals, codes = np.unique(X[:, f], return_inverse=True)
            self.values.append(vals)
            self.codes.append(codes.astype(np.int64).ravel())
        self.splittable = [f for f in range(X.shape[1]) if len(self.values[f]) > 1]


def _best_splits(binned: BinnedFeatures, rows: np.ndarray, local: np.ndarray, n_local: int,
                 r: np.ndarray, min_leaf: int):
    """Best (gain, feature, threshold) for each of ``n_local`` frontier nodes.

    ``rows`` are the sample indices in the frontier and ``local`` their node
    slot.  Ties go to the lowest feature index, then the lowest threshold;
    gains within ``TIE_TOL`` (relative to the node's sum of squares) are ties.
    """
    best_gain = np.full(n_local, -np.inf)
    best_feat = np.full(n_local, -1, dtype=np.int64)
    best_thr = np.zeros(n_local)
    rr = r[rows]
    tot_s = np.bincount(local, weights=rr, minlength=n_local)
    tot_n = np.bincount(local, minlength=n_local).astype(float)
    parent = np.divide(tot_s * tot_s, tot_n, out=np.zeros(n_local), where=tot_n > 0)
    tol = TIE_TOL * np.bincount(local, weights=rr * rr, minlength=n_local)
    for f in binned.splittable:
        vals = binned.values[f]
        K = len(vals)
        key = local * K + binned.codes[f][rows]
        sums = np.bincount(key, weights=rr, minlength=n_local * K).reshape(n_local, K)
        cnts = np.bincount(key, minlength=n_local * K).reshape(n_local, K).astype(float)
        sl = np.cumsum(sums, axis=1)[:, :-1]
        nl = np.cumsum(cnts, axis=1)[:, :-1]
        sr = tot_s[:, None] - sl
        nr = tot_n[:, None] - nl
        ok = (nl >= min_leaf) & (nr >= min_leaf)
        with np.errstate(divide="ignore", invalid="ignore"):
            gain = np.where(ok, sl * sl / nl + sr * sr / nr - parent[:, None], -np.inf)
        top = gain.max(axis=1)
        j = np.argmax(gain >= (top - tol)[:, None], axis=1)  # lowest near-best threshold
        g = gain[np.arange(n_local), j]
        better = np.isfinite(g) & (g > best_gain + tol)
        for node in np.flatnonzero(better):
            jj = j[node]
            nxt = jj + 1 + int(np.argmax(cnts[node, jj + 1:] > 0))
            best_gain[node] = g[node]
            best_feat[node] = f
            best_thr[node] = (vals[jj] + vals[nxt]) / 2.0
    return best_gain, best_feat, best_thr


def fit_regression_tree(X, residuals, max_depth: int = 4, min_leaf: int = 5,
                        binned: Optional[BinnedFeatures] = None) -> RegressionTree:
    """Greedy top-down least-squares tree; leaves hold mean residuals."""
    return _grow(X, residuals, max_depth, min_leaf, binned)[0]


def _grow(X, residuals, max_depth, min_leaf, binned):
    """Fit a tree and also return the leaf node id reached by every training row."""
    r = np.asarray(residuals, dtype=float)
    n = len(r)
    if min_leaf < 1:
        raise ValueError("min_leaf must be >= 1")
    if n < min_leaf or n == 0:
        raise TooFewSamples(f"{n} samples, need at least {max(min_leaf, 1)}")
    if binned is None:
        binned = BinnedFeatures(np.asarray(X, dtype=float).reshape(n, -1))
    feature, threshold, left, right, value = [-1], [0.0], [-1], [-1], [0.0]
    leaf_of = np.zeros(n, dtype=np.int64)
    # frontier: node id -> sample indices
    frontier = {0: np.arange(n)}
    for depth in range(max_depth + 1):
        ids = sorted(frontier)
        splittable = [i for i in ids if len(frontier[i]) >= 2 * min_leaf] if depth < max_depth else []
        for i in ids:
            value[i] = float(np.mean(r[frontier[i]]))
        if not splittable:
            break
        rows = np.concatenate([frontier[i] for i in splittable])
        local = np.repeat(np.arange(len(splittable)), [len(frontier[i]) for i in splittable])
        gains, feats, thrs = _best_splits(binned, rows, local, len(splittable), r, min_leaf)
        nxt = {}
        for slot, node in enumerate(splittable):
            idx = frontier[node]
            tol = 1e-12 * float(np.dot(r[idx], r[idx]))
            if feats[slot] < 0 or not gains[slot] > tol:
                continue
            f, t = int(feats[slot]), float(thrs[slot])
            goes_left = binned.X[idx, f] <= t
            l_id, r_id = len(feature), len(feature) + 1
            feature[node], threshold[node], left[node], right[node] = f, t, l_id, r_id
            for _ in range(2):
                feature.append(-1); threshold.append(0.0); left.append(-1); right.append(-1); value.append(0.0)
            nxt[l_id] = idx[goes_left]
            nxt[r_id] = idx[~goes_left]
            leaf_of[nxt[l_id]] = l_id
            leaf_of[nxt[r_id]] = r_id
        if not nxt:
            break
        frontier = nxt
    tree = RegressionTree(
        np.asarray(feature, dtype=np.int64), np.asarray(threshold, dtype=float),
        np.asarray(left, dtype=np.int64), np.asarray(right, dtype=np.int64), np.asarray(value, dtype=float),
    )
    return tree, leaf_of


# ---------------------------------------------------------------------------
# boosting


@dataclass
class BoostConfig:
    n_learners: int = 400
    shrinkage: float = 0.1
    max_depth: int = 4
    min_leaf: int = 5
    line_search: bool = False
    seed: int = 0

    def to_dict(self) -> dict:
        return {
            "nLearners": self.n_learners, "shrinkage": self.shrinkage, "maxDepth": self.max_depth,
            "minLeaf": self.min_leaf, "lineSearch": self.line_search, "seed": self.seed,
        }


@dataclass
class BoostedModel:
    f0: float
    terms: list  # [(RegressionTree, rho)]
    n_learners: int
    schema: FeatureSchema
    sector: str = ""
    shrinkage: float = 0.1
    train_loss: list = field(default_factory=list)  # mean squared error after F_0, F_1, ...

    def predict_raw(self, X: np.ndarray) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if X.shape[1] != self.schema.width:
            raise SchemaMismatch(f"expected {self.schema.width} features, got {X.shape[1]}")
        out = np.full(len(X), self.f0)
        for tree, rho in self.terms:
            out = out + rho * tree.predict(X)
        return out

    def predict_counts(self, X: np.ndarray) -> np.ndarray:
        return np.maximum(self.predict_raw(X), 0.0)

    def to_dict(self) -> dict:
        return {
            "format": MODEL_FORMAT,
            "version": MODEL_VERSION,
            "sector": self.sector,
            "featureSchema": self.schema.to_dict(),
            "f0": self.f0,
            "shrinkage": self.shrinkage,
            "nLearners": self.n_learners,
            "terms": [{"rho": rho, "nodes": tree.to_rows()} for tree, rho in self.terms],
            "trainLoss": list(self.train_loss),
        }

    @classmethod
    def from_dict(cls, obj: dict) -> "BoostedModel":
        if obj.get("format") != MODEL_FORMAT or obj.get("version") != MODEL_VERSION:
            raise ValueError(f"unsupported model document {obj.get('format')!r} v{obj.get('version')}")
        return cls(
            f0=obj["f0"],
            terms=[(RegressionTree.from_rows(t["nodes"]), t["rho"]) for t in obj["terms"]],
            n_learners=obj["nLearners"],
            schema=FeatureSchema.from_dict(obj["featureSchema"]),
            sector=obj.get("sector", ""),
            shrinkage=obj["shrinkage"],
            train_loss=list(obj.get("trainLoss", [])),
        )

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))

    @classmethod
    def loads(cls, text: str) -> "BoostedModel":
        return cls.from_dict(json.loads(text))


def train_boosted(X, y, config: BoostConfig = None, schema: FeatureSchema = None, sector: str = "") -> BoostedModel:
    config = config or BoostConfig()
    y = np.asarray(y, dtype=float)
    if len(y) == 0:
        raise EmptyDataset("cannot train on an empty dataset")
    X = np.asarray(X, dtype=float).reshape(len(y), -1)
    if schema is None:
        schema = FeatureSchema(with_uncertainty=X.shape[1] == FeatureSchema(True).width)
    if X.shape[1] != schema.width:
        raise SchemaMismatch(f"dataset has {X.shape[1]} features, schema expects {schema.width}")
    binned = BinnedFeatures(X)
    min_leaf = min(config.min_leaf, len(y))
    f0 = float(np.mean(y))
    F = np.full(len(y), f0)
    loss = [float(np.mean((y - F) ** 2))]
    terms = []
    for _ in range(config.n_learners):
        resid = y - F
        tree, leaf_of = _grow(X, resid, config.max_depth, min_leaf, binned)
        h = tree.value[leaf_of]
        rho = config.shrinkage
        if config.line_search:
            hh = float(np.dot(h, h))
            rho *= float(np.dot(resid, h)) / hh if hh > 0 else 0.0
        F = F + rho * h
        terms.append((tree, rho))
        loss.append(float(np.mean((y - F) ** 2)))
    return BoostedModel(f0, terms, config.n_learners, schema, sector, config.shrinkage, loss)


def predict(model: BoostedModel, x) -> tuple:
    """(raw additive prediction, count clamped at zero) for one sample."""
    if isinstance(x, FeatureVector):
        if model.schema.with_uncertainty and x.uncertainty is None:
            raise SchemaMismatch("model expects an uncertainty level")
        x = x.to_array(model.schema)
    x = np.asarray(x, dtype=float)
    if x.ndim != 1 or len(x) != model.schema.width:
        raise SchemaMismatch(f"expected a vector of {model.schema.width} features")
    raw = float(model.predict_raw(x[None, :])[0])
    return raw, max(raw, 0.0)


# ---------------------------------------------------------------------------
# scoring and validation


def score_scc(actual, predicted) -> float:
    """Mean of exp(-|y_k - F_k| / max(mean(y), 1)); 1.0 for a perfect prediction."""
    y = np.asarray(actual, dtype=float).ravel()
    p = np.asarray(predicted, dtype=float).ravel()
    if len(y) == 0 or len(p) == 0:
        raise EmptyArrays("score needs at least one sample")
    if len(y) != len(p):
        raise LengthMismatch(f"{len(y)} actual vs {len(p)} predicted values")
    denom = max(float(np.mean(y)), 1.0)
    return float(np.mean(np.exp(-np.abs(y - p) / denom)))


@dataclass
class CVReport:
    k: int
    per_fold_score: list
    mean_score: float
    folds: list = field(default_factory=list, repr=False)  # index arrays


def kfold_indices(n: int, k: int, seed: int) -> list:
    perm = np.random.default_rng(seed).permutation(n)
    return [np.sort(part) for part in np.array_split(perm, k)]


def cross_validate(X, y, k: int = 5, config: BoostConfig = None, seed: int = 0,
                   schema: FeatureSchema = None) -> CVReport:
    y = np.asarray(y, dtype=float)
    X = np.asarray(X, dtype=float).reshape(len(y), -1)
    if k < 2 or len(y) < k:
        raise DatasetTooSmall(f"{len(y)} samples cannot form {k} folds")
    folds = kfold_indices(len(y), k, seed)
    scores = []
    for i, test in enumerate(folds):
        train = np.concatenate([f for j, f in enumerate(folds) if j != i])
        model = train_boosted(X[train], y[train], config, schema)
        scores.append(score_scc(y[test], model.predict_counts(X[test])))
        log.debug("fold %d/%d: S=%.4f", i + 1, k, scores[-1])
    return CVReport(k, scores, float(np.mean(scores)), folds)
