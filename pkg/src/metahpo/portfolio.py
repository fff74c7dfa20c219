"""Portfolio construction and the landmarker base.

Meta-train datasets are clustered on simple standardized meta-features;
each cluster runs a tournament over a shared candidate pool of
configurations, and the winners form the portfolio. Landmarker vectors
stack each portfolio configuration's test ROC AUC on one dataset.
"""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .data import Dataset
from .gbt import GbtParams, evaluate_config
from .util import atomic_write_json, atomic_write_text

log = logging.getLogger(__name__)

META_FEATURE_NAMES = (
    "n_rows",
    "n_features",
    "categorical_fraction",
    "cell_mean",
    "cell_std",
    "positive_prevalence",
    "mean_abs_target_correlation",
)

Evaluator = Callable[[Dataset, GbtParams], float]


@dataclass(frozen=True)
class SimpleMetaFeatures:
    """Fixed-order raw meta-feature vector of one dataset (pre-standardization)."""

    values: np.ndarray
    dataset_name: str

    def __post_init__(self):
        if self.values.shape != (len(META_FEATURE_NAMES),):
            raise ValueError(f"expected {len(META_FEATURE_NAMES)} meta-features")


def compute_meta_features(ds: Dataset) -> SimpleMetaFeatures:
    """Deterministic summary statistics of the train split."""
    X, y = ds.X_train, ds.y_train
    derived = ds.provenance.categorical_derived
    cat_fraction = float(np.mean(derived)) if len(derived) == X.shape[1] else 0.0

    correlations = []
    y_std = y.std()
    for j in range(X.shape[1]):
        col = X[:, j]
        if col.std() == 0 or y_std == 0:
            correlations.append(0.0)
        else:
            correlations.append(abs(float(np.corrcoef(col, y)[0, 1])))
    values = np.array(
        [
            float(X.shape[0]),
            float(X.shape[1]),
            cat_fraction,
            float(X.mean()),
            float(X.std()),
            float(y.mean()),
            float(np.mean(correlations)),
        ]
    )
    return SimpleMetaFeatures(values, ds.name)


def standardize_meta_features(features: Sequence[SimpleMetaFeatures]) -> np.ndarray:
    """Z-score each component across the given datasets; zero-variance
    components map to 0."""
    M = np.stack([f.values for f in features])
    mean = M.mean(axis=0)
    std = M.std(axis=0)
    std = np.where(std == 0, 1.0, std)
    Z = (M - mean) / std
    return np.where(np.isfinite(Z), Z, 0.0)


# ---------------------------------------------------------------------------
# K-means
# ---------------------------------------------------------------------------


def _kmeanspp_init(points: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = len(points)
    centers = [int(rng.integers(n))]
    for _ in range(k - 1):
        d2 = np.min(
            ((points[:, None, :] - points[centers][None, :, :]) ** 2).sum(axis=2), axis=1
        )
        total = d2.sum()
        if total == 0:
            remaining = [i for i in range(n) if i not in centers]
            centers.append(remaining[0])
            continue
        centers.append(int(rng.choice(n, p=d2 / total)))
    return points[centers].copy()


def kmeans(points, k: int, seed: int, max_iter: int = 300):
    """Lloyd iterations from a k-means++ start until the assignment fixpoint.

    Empty clusters are repaired by stealing the point farthest from its
    current centroid. Returns (assignments, centroids).
    """
    points = np.asarray(points, dtype=float)
    n = len(points)
    if k < 1:
        raise ValueError("k must be >= 1")
    if k > n:
        raise ValueError(f"k={k} exceeds number of points {n}")
    rng = np.random.default_rng(seed)
    centroids = _kmeanspp_init(points, k, rng)
    assignments = np.full(n, -1)
    for _ in range(max_iter):
        dists = ((points[:, None, :] - centroids[None, :, :]) ** 2).sum(axis=2)
        new_assign = np.argmin(dists, axis=1)
        for cluster in range(k):
            if (new_assign == cluster).any():
                continue
            # Steal the point farthest from its centroid, never emptying
            # the donor cluster.
            point_dist = dists[np.arange(n), new_assign]
            sizes = np.bincount(new_assign, minlength=k)
            movable = sizes[new_assign] > 1
            candidates = np.where(movable, point_dist, -np.inf)
            new_assign[int(np.argmax(candidates))] = cluster
        if (new_assign == assignments).all():
            break
        assignments = new_assign
        for cluster in range(k):
            centroids[cluster] = points[assignments == cluster].mean(axis=0)
    return assignments, centroids


def kmeans_inertia(points, assignments, centroids) -> float:
    points = np.asarray(points, dtype=float)
    return float(((points - centroids[assignments]) ** 2).sum())


# ---------------------------------------------------------------------------
# Portfolio and landmarkers
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Portfolio:
    """Ordered configurations with (cluster id, cluster mean AUC) provenance."""

    configs: tuple[GbtParams, ...]
    provenance: tuple[tuple[int, float], ...]

    def __post_init__(self):
        if len(self.configs) != len(self.provenance):
            raise ValueError("provenance must match configs")
        if len({c.as_tuple() for c in self.configs}) != len(self.configs):
            raise ValueError("portfolio entries must be distinct")

    @property
    def size(self) -> int:
        return len(self.configs)


@dataclass(frozen=True)
class LandmarkerVector:
    """Test ROC AUC of every portfolio configuration on one dataset."""

    values: np.ndarray
    dataset_name: str

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.ndim != 1:
            raise ValueError("landmarker vector must be 1-D")
        if v.size and (v.min() < 0.0 or v.max() > 1.0):
            raise ValueError(f"{self.dataset_name}: landmarkers outside [0,1]")


@dataclass(frozen=True)
class LandmarkerBase:
    """Landmarker vectors of the meta-train datasets, aligned to one portfolio."""

    portfolio: Portfolio
    vectors: dict[str, LandmarkerVector]

    def __post_init__(self):
        p = self.portfolio.size
        for name, vec in self.vectors.items():
            if len(vec.values) != p:
                raise ValueError(f"{name}: landmarker length {len(vec.values)} != portfolio {p}")

    @property
    def names(self) -> list[str]:
        return sorted(self.vectors)

    def vector_for(self, name: str) -> np.ndarray:
        return self.vectors[name].values

    def best_index(self, name: str) -> int:
        return int(np.argmax(self.vectors[name].values))  # lowest index on ties


def compute_landmarkers(ds: Dataset, portfolio: Portfolio, evaluator: Evaluator) -> LandmarkerVector:
    """Evaluate every portfolio configuration on one dataset; failures are
    recorded as AUC 0.5 with a warning."""
    values = np.empty(portfolio.size)
    for i, config in enumerate(portfolio.configs):
        try:
            values[i] = evaluator(ds, config)
        except Exception as exc:  # noqa: BLE001 - degrade to chance level
            log.warning("evaluation failed for %s / config %d: %s", ds.name, i, exc)
            values[i] = 0.5
    return LandmarkerVector(values, ds.name)


def evaluate_candidate_grid(
    datasets: Sequence[Dataset], candidates: Sequence[GbtParams], evaluator: Evaluator
) -> np.ndarray:
    """AUC matrix (datasets x candidates); failed cells become 0.5."""
    table = np.empty((len(datasets), len(candidates)))
    for i, ds in enumerate(datasets):
        for j, config in enumerate(candidates):
            try:
                table[i, j] = evaluator(ds, config)
            except Exception as exc:  # noqa: BLE001
                log.warning("evaluation failed for %s / candidate %d: %s", ds.name, j, exc)
                table[i, j] = 0.5
    return table


def select_portfolio(
    meta_train: Sequence[Dataset],
    space,
    k: int,
    candidate_count: int,
    evaluator: Evaluator,
    seed: int,
) -> tuple[Portfolio, LandmarkerBase]:
    """Tournament selection of a k-configuration portfolio.

    Candidates are drawn uniformly from the search space and scored on every
    meta-train dataset; datasets are clustered into k groups on standardized
    meta-features; each cluster's winner is the candidate with the best mean
    AUC over the cluster's datasets (ties to the lowest index, duplicate
    winners replaced by the cluster's next-best unused candidate).
    """
    from .hpo import draw_candidates  # local import to avoid a module cycle

    if not meta_train:
        raise ValueError("meta_train must be non-empty")
    if candidate_count < k:
        raise ValueError(f"candidate_count {candidate_count} < portfolio size {k}")

    candidates = draw_candidates(space, candidate_count, seed)
    table = evaluate_candidate_grid(meta_train, candidates, evaluator)

    features = [compute_meta_features(ds) for ds in meta_train]
    Z = standardize_meta_features(features)
    assignments, _ = kmeans(Z, k, seed)

    used: set[int] = set()
    winners: list[int] = []
    provenance: list[tuple[int, float]] = []
    for cluster in range(k):
        members = np.flatnonzero(assignments == cluster)
        means = table[members].mean(axis=0)
        for idx in np.argsort(-means, kind="stable"):  # stable: ties to lowest index
            if int(idx) not in used:
                used.add(int(idx))
                winners.append(int(idx))
                provenance.append((cluster, float(means[idx])))
                break
        else:
            raise RuntimeError("candidate pool exhausted while repairing duplicates")

    portfolio = Portfolio(tuple(candidates[i] for i in winners), tuple(provenance))
    vectors = {
        ds.name: LandmarkerVector(table[i, winners].copy(), ds.name)
        for i, ds in enumerate(meta_train)
    }
    return portfolio, LandmarkerBase(portfolio, vectors)


# ---------------------------------------------------------------------------
# Replay evaluator (surrogate benchmark)
# ---------------------------------------------------------------------------


class ReplayEvaluator:
    """Evaluator backed by a stored (dataset x config) AUC table.

    With `fallback` enabled, a missing configuration resolves to the stored
    configuration nearest in the unit-cube encoding (requires `space`).
    """

    def __init__(self, table: dict[str, dict[tuple, float]], space=None, fallback: bool = False):
        if fallback and space is None:
            raise ValueError("fallback requires a search space")
        self.table = table
        self.space = space
        self.fallback = fallback
        self._units: dict[str, tuple[list[tuple], np.ndarray]] = {}

    @classmethod
    def from_grid(cls, datasets, candidates, grid: np.ndarray, space=None, fallback=False):
        table: dict[str, dict[tuple, float]] = {}
        for i, ds in enumerate(datasets):
            name = ds if isinstance(ds, str) else ds.name
            table[name] = {
                candidates[j].as_tuple(): float(grid[i, j]) for j in range(len(candidates))
            }
        return cls(table, space=space, fallback=fallback)

    def _unit_index(self, name: str):
        if name not in self._units:
            keys = sorted(self.table[name])
            units = np.stack([self.space.to_unit(GbtParams(*key)) for key in keys])
            self._units[name] = (keys, units)
        return self._units[name]

    def __call__(self, ds, config: GbtParams) -> float:
        name = ds if isinstance(ds, str) else ds.name
        if name not in self.table:
            raise KeyError(f"no stored evaluations for dataset {name!r}")
        row = self.table[name]
        key = config.as_tuple()
        if key in row:
            return row[key]
        if not self.fallback:
            raise KeyError(f"no stored value for {name!r} / {key}")
        keys, units = self._unit_index(name)
        q = self.space.to_unit(config)
        nearest = int(np.argmin(((units - q) ** 2).sum(axis=1)))
        return row[keys[nearest]]


def replay_evaluator(table, space=None, fallback: bool = False) -> ReplayEvaluator:
    return ReplayEvaluator(table, space=space, fallback=fallback)


def gbt_evaluator(ds: Dataset, config: GbtParams) -> float:
    """Train-and-score evaluator: test ROC AUC of the boosted-trees learner."""
    return evaluate_config(ds, config)


# ---------------------------------------------------------------------------
# Persistence
# ---------------------------------------------------------------------------


def save_portfolio(portfolio: Portfolio, path: str | Path) -> None:
    payload = {
        "version": 1,
        "configs": [c.to_dict() for c in portfolio.configs],
        "provenance": [
            {"cluster": int(c), "mean_auc": float(s)} for c, s in portfolio.provenance
        ],
    }
    atomic_write_json(path, payload)


def load_portfolio(path: str | Path) -> Portfolio:
    with open(path) as fh:
        payload = json.load(fh)
    configs = tuple(GbtParams.from_dict(d) for d in payload["configs"])
    provenance = tuple((int(p["cluster"]), float(p["mean_auc"])) for p in payload["provenance"])
    return Portfolio(configs, provenance)


def save_landmarker_csv(vectors: dict[str, LandmarkerVector], path: str | Path) -> None:
    """Rows = datasets (sorted), columns = config ids."""
    names = sorted(vectors)
    p = len(next(iter(vectors.values())).values) if vectors else 0
    lines = [",".join(["dataset"] + [f"c{j:03d}" for j in range(p)])]
    for name in names:
        vals = vectors[name].values
        lines.append(",".join([name] + [repr(float(v)) for v in vals]))
    atomic_write_text(path, "\n".join(lines) + "\n")


def load_landmarker_csv(path: str | Path) -> dict[str, LandmarkerVector]:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    out = {}
    for row in rows[1:]:
        name = row[0]
        out[name] = LandmarkerVector(np.array([float(v) for v in row[1:]]), name)
    return out


def save_grid(datasets, candidates, grid: np.ndarray, csv_path, configs_path) -> None:
    names = [ds if isinstance(ds, str) else ds.name for ds in datasets]
    lines = [",".join(["dataset"] + [f"c{j:03d}" for j in range(len(candidates))])]
    for i, name in enumerate(names):
        lines.append(",".join([name] + [repr(float(v)) for v in grid[i]]))
    atomic_write_text(csv_path, "\n".join(lines) + "\n")
    atomic_write_json(configs_path, {"version": 1, "configs": [c.to_dict() for c in candidates]})


def load_grid(csv_path, configs_path):
    """Returns (names, candidates, grid matrix)."""
    with open(configs_path) as fh:
        payload = json.load(fh)
    candidates = [GbtParams.from_dict(d) for d in payload["configs"]]
    with open(csv_path, newline="") as fh:
        rows = list(csv.reader(fh))
    names = [row[0] for row in rows[1:]]
    grid = np.array([[float(v) for v in row[1:]] for row in rows[1:]])
    return names, candidates, grid
