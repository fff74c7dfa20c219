"""Tabular dataset ingestion, preprocessing, meta-splits, and synthetic corpora.

The preprocessing pipeline takes raw CSV-backed tables through ID-column
removal, target binarization, one-hot encoding, and per-column min-max
scaling into [0, 1], producing train/test splits ready for the boosted-tree
learner and the dataset encoders.
"""

from __future__ import annotations

import csv
import itertools
import json
import math
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .util import atomic_write_json, stable_child_seed

NUMERIC = "numeric"
CATEGORICAL = "categorical"

_ID_NAMES = {"id", "index", "row_id"}
_MISSING_LEVEL = "missing"


class DataError(ValueError):
    """Raised for malformed inputs or contract violations in this module."""


@dataclass(frozen=True)
class RawColumn:
    name: str
    kind: str  # NUMERIC or CATEGORICAL
    values: tuple

    def __post_init__(self):
        if self.kind not in (NUMERIC, CATEGORICAL):
            raise DataError(f"unknown column kind {self.kind!r}")


@dataclass(frozen=True)
class RawDataset:
    """A parsed table before preprocessing.

    Numeric cells are floats (NaN marks missing); categorical cells are
    strings. The target column is included in `columns`.
    """

    name: str
    columns: tuple[RawColumn, ...]
    target: str
    class_labels: tuple

    def __post_init__(self):
        names = [c.name for c in self.columns]
        if len(set(names)) != len(names):
            raise DataError(f"{self.name}: duplicate column names")
        if self.target not in names:
            raise DataError(f"{self.name}: target column absent")
        lengths = {len(c.values) for c in self.columns}
        if len(lengths) != 1:
            raise DataError(f"{self.name}: ragged columns")
        if lengths.pop() < 2:
            raise DataError(f"{self.name}: fewer than 2 rows")

    @property
    def n_rows(self) -> int:
        return len(self.columns[0].values)

    def column(self, name: str) -> RawColumn:
        for c in self.columns:
            if c.name == name:
                return c
        raise DataError(f"{self.name}: no column {name!r}")

    @property
    def feature_columns(self) -> tuple[RawColumn, ...]:
        return tuple(c for c in self.columns if c.name != self.target)


@dataclass(frozen=True)
class PreprocessLog:
    """Provenance of a preprocessed dataset."""

    steps: tuple[str, ...] = ()
    categorical_derived: tuple[bool, ...] = ()

    def extended(self, *steps: str) -> "PreprocessLog":
        return PreprocessLog(self.steps + tuple(steps), self.categorical_derived)


@dataclass(frozen=True)
class Dataset:
    """A preprocessed dataset: X in [0,1], binary y, fixed train/test split."""

    name: str
    X_train: np.ndarray
    y_train: np.ndarray
    X_test: np.ndarray
    y_test: np.ndarray
    provenance: PreprocessLog = field(default_factory=PreprocessLog)

    def __post_init__(self):
        for X, y, part in ((self.X_train, self.y_train, "train"), (self.X_test, self.y_test, "test")):
            if X.ndim != 2 or X.shape[0] != y.shape[0]:
                raise DataError(f"{self.name}: {part} shape mismatch")
            if X.shape[0] < 1:
                raise DataError(f"{self.name}: empty {part} split")
            if X.size and (X.min() < -1e-12 or X.max() > 1 + 1e-12):
                raise DataError(f"{self.name}: {part} matrix outside [0,1]")
            if not np.isin(y, (0, 1)).all():
                raise DataError(f"{self.name}: {part} target not binary")
        if self.X_train.shape[1] != self.X_test.shape[1]:
            raise DataError(f"{self.name}: train/test column count differs")

    @property
    def d(self) -> int:
        return self.X_train.shape[1]


@dataclass(frozen=True)
class MetaDataset:
    meta_train: tuple[Dataset, ...]
    meta_valid: tuple[Dataset, ...]
    seed: int

    def __post_init__(self):
        if not self.meta_train or not self.meta_valid:
            raise DataError("meta-train and meta-validation must both be non-empty")
        train_names = {d.name for d in self.meta_train}
        valid_names = {d.name for d in self.meta_valid}
        if train_names & valid_names:
            raise DataError(f"meta split not disjoint: {sorted(train_names & valid_names)}")

    @property
    def all_datasets(self) -> tuple[Dataset, ...]:
        return self.meta_train + self.meta_valid


@dataclass(frozen=True)
class Batch:
    """A row/column subsample of one dataset's train split."""

    dataset_name: str
    row_indices: np.ndarray
    col_indices: np.ndarray
    X: np.ndarray
    y: np.ndarray

    def __post_init__(self):
        if len(np.unique(self.row_indices)) != len(self.row_indices):
            raise DataError("duplicate row indices in batch")
        if len(np.unique(self.col_indices)) != len(self.col_indices):
            raise DataError("duplicate column indices in batch")
        for idx in (self.row_indices, self.col_indices):
            if len(idx) and (idx.min() < 0):
                raise DataError("negative batch index")
        if self.X.shape != (len(self.row_indices), len(self.col_indices)):
            raise DataError("batch matrix shape does not match index sets")


# ---------------------------------------------------------------------------
# Loading
# ---------------------------------------------------------------------------


def _parse_float(cell: str) -> float:
    cell = cell.strip()
    if cell == "" or cell.lower() in ("na", "nan", "null", "?"):
        return math.nan
    try:
        return float(cell)
    except ValueError:
        return math.nan


def load_dataset(path: str | Path, manifest: dict) -> RawDataset:
    """Parse a CSV with header into a RawDataset.

    The manifest names the dataset, its target column, and which columns are
    categorical. Rows with a missing target are dropped. Missing numeric
    cells are imputed with the column median; missing categorical cells get
    a dedicated "missing" level.
    """
    path = Path(path)
    target = manifest["target"]
    categorical = set(manifest.get("categorical", ()))
    name = manifest.get("name", path.stem)

    try:
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            rows = [r for r in reader if r]
    except OSError as exc:
        raise DataError(f"unreadable file {path}: {exc}") from exc
    if not rows:
        raise DataError(f"{name}: empty file")
    header, body = rows[0], rows[1:]
    if target not in header:
        raise DataError(f"{name}: target column absent")

    t_idx = header.index(target)
    body = [r for r in body if len(r) == len(header) and r[t_idx].strip() != ""]
    if not body:
        raise DataError(f"{name}: zero usable rows")

    columns = []
    for j, col_name in enumerate(header):
        raw = [r[j] for r in body]
        if col_name == target or col_name in categorical:
            vals = tuple(v.strip() if v.strip() != "" else _MISSING_LEVEL for v in raw)
            columns.append(RawColumn(col_name, CATEGORICAL, vals))
        else:
            floats = np.array([_parse_float(v) for v in raw])
            if np.isnan(floats).any():
                finite = floats[~np.isnan(floats)]
                fill = float(np.median(finite)) if finite.size else 0.0
                floats = np.where(np.isnan(floats), fill, floats)
            columns.append(RawColumn(col_name, NUMERIC, tuple(float(v) for v in floats)))

    labels = tuple(sorted({r[t_idx].strip() for r in body}))
    return RawDataset(name=name, columns=tuple(columns), target=target, class_labels=labels)


# ---------------------------------------------------------------------------
# ID removal and binarization
# ---------------------------------------------------------------------------


def _is_integer_valued(col: RawColumn) -> bool:
    vals = np.asarray(col.values, dtype=float)
    return bool(np.isfinite(vals).all() and (vals == np.round(vals)).all())


def drop_id_columns(raw: RawDataset) -> RawDataset:
    """Drop columns that look like row identifiers.

    A column is an ID when its name (case-insensitive) is one of
    {id, index, row_id}, or when all its values are unique and it is either
    integer-valued numeric or categorical.
    """
    kept = []
    for col in raw.columns:
        if col.name == raw.target:
            kept.append(col)
            continue
        if col.name.lower() in _ID_NAMES:
            continue
        all_unique = len(set(col.values)) == len(col.values)
        if all_unique and (col.kind == CATEGORICAL or _is_integer_valued(col)):
            continue
        kept.append(col)
    if len(kept) <= 1:  # only the target survived
        raise DataError(f"{raw.name}: no features remain after ID removal")
    return RawDataset(raw.name, tuple(kept), raw.target, raw.class_labels)


def _best_binary_partition(counts: dict) -> tuple[tuple, tuple]:
    """Positive/negative label groups with the most balanced totals.

    Scans every nontrivial subset as a candidate positive group and picks
    the minimum of (|share - 0.5|, group count, sorted label names), so the
    positive side of the winning partition is the smaller half, with
    lexicographic tie-breaking.
    """
    labels = sorted(counts)
    total = sum(counts.values())
    best = None
    for r in range(1, len(labels)):
        for subset in itertools.combinations(labels, r):
            c = sum(counts[l] for l in subset)
            # |c/total - 1/2| compared exactly via the integer |2c - total|
            key = (abs(2 * c - total), c, subset)
            if best is None or key < best:
                best = key
    positive = best[2]
    negative = tuple(l for l in labels if l not in positive)
    return positive, negative


def binarize_target(raw: RawDataset) -> RawDataset:
    """Map a 2..10-class target onto {0, 1} as balanced as possible.

    Already-binary targets keep their identity (sorted labels -> 0, 1).
    Multi-class targets are partitioned by exhaustive search over all
    nontrivial label subsets.
    """
    col = raw.column(raw.target)
    values = [str(v) for v in col.values]
    counts: dict = {}
    for v in values:
        counts[v] = counts.get(v, 0) + 1
    c = len(counts)
    if c < 2:
        raise DataError(f"{raw.name}: single-class target")
    if c > 10:
        raise DataError(f"{raw.name}: target has {c} classes, at most 10 supported")

    if c == 2:
        lo, hi = sorted(counts)
        mapping = {lo: 0, hi: 1}
    else:
        positive, _ = _best_binary_partition(counts)
        mapping = {l: (1 if l in positive else 0) for l in counts}

    new_vals = tuple(mapping[v] for v in values)
    new_cols = tuple(
        RawColumn(raw.target, CATEGORICAL, new_vals) if cc.name == raw.target else cc
        for cc in raw.columns
    )
    return RawDataset(raw.name, new_cols, raw.target, (0, 1))


# ---------------------------------------------------------------------------
# Preprocessing into a Dataset
# ---------------------------------------------------------------------------


def _round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def _stratified_split(y: np.ndarray, test_fraction: float, seed: int):
    """Train/test row indices, stratified by the binary target.

    Redraws with successive seeds (up to 10) if a split ends up empty or
    misses a class.
    """
    n = len(y)
    for attempt in range(10):
        rng = np.random.default_rng(stable_child_seed(seed, "split", attempt))
        test_idx = []
        for cls in (0, 1):
            cls_idx = np.flatnonzero(y == cls)
            if cls_idx.size == 0:
                continue
            k = _round_half_up(test_fraction * cls_idx.size)
            perm = rng.permutation(cls_idx)
            test_idx.extend(perm[:k].tolist())
        test_mask = np.zeros(n, dtype=bool)
        test_mask[test_idx] = True
        train_y, test_y = y[~test_mask], y[test_mask]
        if (
            train_y.size
            and test_y.size
            and set(np.unique(train_y)) == {0, 1}
            and set(np.unique(test_y)) == {0, 1}
        ):
            return np.flatnonzero(~test_mask), np.flatnonzero(test_mask)
    raise DataError("could not produce a stratified split with both classes in both parts")


def _minmax_scale(train_col: np.ndarray, test_col: np.ndarray):
    """Scale both splits with train statistics; constant columns map to zero."""
    lo, hi = float(train_col.min()), float(train_col.max())
    if hi == lo:
        return np.zeros_like(train_col), np.zeros_like(test_col)
    scaled_train = (train_col - lo) / (hi - lo)
    scaled_test = np.clip((test_col - lo) / (hi - lo), 0.0, 1.0)
    return scaled_train, scaled_test


def preprocess(raw: RawDataset, test_fraction: float = 0.25, seed: int = 0) -> Dataset:
    """One-hot encode, min-max scale with train statistics, and split.

    Expects an ID-stripped dataset with a {0,1} target (see
    `binarize_target`).
    """
    if not 0 < test_fraction < 1:
        raise DataError(f"test_fraction {test_fraction} outside (0,1)")
    target_col = raw.column(raw.target)
    try:
        y = np.asarray([int(v) for v in target_col.values])
    except (TypeError, ValueError) as exc:
        raise DataError(f"{raw.name}: target must be binarized before preprocessing") from exc
    if not np.isin(y, (0, 1)).all():
        raise DataError(f"{raw.name}: target must be binarized before preprocessing")

    columns: list[np.ndarray] = []
    derived: list[bool] = []
    steps: list[str] = []
    for col in raw.feature_columns:
        if col.kind == NUMERIC:
            columns.append(np.asarray(col.values, dtype=float))
            derived.append(False)
        else:
            levels = sorted(set(col.values))
            vals = np.asarray(col.values)
            for level in levels:
                columns.append((vals == level).astype(float))
                derived.append(True)
            steps.append(f"one-hot {col.name}: {len(levels)} levels")
    if not columns:
        raise DataError(f"{raw.name}: no feature columns")
    X = np.column_stack(columns)

    train_idx, test_idx = _stratified_split(y, test_fraction, seed)
    X_train, X_test = X[train_idx], X[test_idx]
    scaled = [_minmax_scale(X_train[:, j], X_test[:, j]) for j in range(X.shape[1])]
    X_train = np.column_stack([s[0] for s in scaled])
    X_test = np.column_stack([s[1] for s in scaled])
    steps.append(f"min-max scaled {X.shape[1]} columns with train statistics")
    steps.append(f"stratified split test_fraction={test_fraction} seed={seed}")

    return Dataset(
        name=raw.name,
        X_train=X_train,
        y_train=y[train_idx],
        X_test=X_test,
        y_test=y[test_idx],
        provenance=PreprocessLog(tuple(steps), tuple(derived)),
    )


def split_meta(datasets: list[Dataset], valid_fraction: float, seed: int) -> MetaDataset:
    """Deterministic shuffled split of datasets into meta-train/meta-valid."""
    if not 0 < valid_fraction < 1:
        raise DataError(f"valid_fraction {valid_fraction} outside (0,1)")
    if len(datasets) < 2:
        raise DataError("need at least 2 datasets to split")
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(datasets))
    n_valid = min(max(_round_half_up(valid_fraction * len(datasets)), 1), len(datasets) - 1)
    valid = tuple(datasets[i] for i in sorted(order[:n_valid]))
    train = tuple(datasets[i] for i in sorted(order[n_valid:]))
    return MetaDataset(meta_train=train, meta_valid=valid, seed=seed)


def subsample(ds: Dataset, n_rows: int, n_cols: int, rng: np.random.Generator) -> Batch:
    """Uniform without-replacement row/column subsample of the train split."""
    n, d = ds.X_train.shape
    if not 1 <= n_rows <= n:
        raise DataError(f"n_rows {n_rows} outside [1, {n}]")
    if not 1 <= n_cols <= d:
        raise DataError(f"n_cols {n_cols} outside [1, {d}]")
    rows = np.sort(rng.choice(n, size=n_rows, replace=False))
    cols = np.sort(rng.choice(d, size=n_cols, replace=False))
    return Batch(
        dataset_name=ds.name,
        row_indices=rows,
        col_indices=cols,
        X=ds.X_train[np.ix_(rows, cols)],
        y=ds.y_train[rows],
    )


def full_train_batch(ds: Dataset) -> Batch:
    """The whole train split as a Batch (used for evaluation-time encoding)."""
    n, d = ds.X_train.shape
    return Batch(ds.name, np.arange(n), np.arange(d), ds.X_train.copy(), ds.y_train.copy())


# ---------------------------------------------------------------------------
# Synthetic meta-datasets
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SyntheticProfile:
    """Generator settings for desk-scale synthetic corpora.

    Datasets are two-class Gaussian blob mixtures whose difficulty knobs
    (class separation, label noise, irrelevant features, row budget) vary
    per dataset so hyperparameter configurations rank differently across
    the corpus.
    """

    rows: tuple[int, int] = (80, 160)
    informative_dims: tuple[int, int] = (2, 6)
    irrelevant_dims: tuple[int, int] = (0, 10)
    separation: tuple[float, float] = (0.6, 3.5)
    label_noise: tuple[float, float] = (0.0, 0.25)
    prevalence: tuple[float, float] = (0.35, 0.65)
    blobs_per_class: tuple[int, int] = (1, 2)
    test_fraction: float = 0.25
    valid_fraction: float = 0.25


def _synthesize_one(name: str, seed: int, profile: SyntheticProfile) -> Dataset:
    rng = np.random.default_rng(seed)
    n = int(rng.integers(profile.rows[0], profile.rows[1] + 1))
    d_inf = int(rng.integers(profile.informative_dims[0], profile.informative_dims[1] + 1))
    d_irr = int(rng.integers(profile.irrelevant_dims[0], profile.irrelevant_dims[1] + 1))
    sep = float(rng.uniform(*profile.separation))
    noise = float(rng.uniform(*profile.label_noise))
    prev = float(rng.uniform(*profile.prevalence))
    n_blobs = int(rng.integers(profile.blobs_per_class[0], profile.blobs_per_class[1] + 1))

    y = (rng.random(n) < prev).astype(int)
    # For each class, blob centers sit on a sphere of radius sep/2 around
    # opposite anchor points, so the between-class distance is about `sep`.
    centers = {}
    for cls in (0, 1):
        anchor = (1 if cls else -1) * (sep / 2.0) * np.ones(d_inf) / math.sqrt(d_inf)
        offs = rng.normal(scale=sep / 4.0, size=(n_blobs, d_inf))
        centers[cls] = anchor + offs
    X_inf = np.empty((n, d_inf))
    for i in range(n):
        c = centers[y[i]][rng.integers(n_blobs)]
        X_inf[i] = c + rng.normal(size=d_inf)
    X_irr = rng.normal(size=(n, d_irr)) if d_irr else np.empty((n, 0))
    X = np.hstack([X_inf, X_irr])

    flip = rng.random(n) < noise
    y = np.where(flip, 1 - y, y)
    # Guarantee both classes appear at least twice so stratification works.
    for cls in (0, 1):
        idx = np.flatnonzero(y == cls)
        if idx.size < 2:
            donors = np.flatnonzero(y == 1 - cls)
            y[donors[: 2 - idx.size]] = cls

    train_idx, test_idx = _stratified_split(y, profile.test_fraction, seed)
    scaled = [_minmax_scale(X[train_idx, j], X[test_idx, j]) for j in range(X.shape[1])]
    return Dataset(
        name=name,
        X_train=np.column_stack([s[0] for s in scaled]),
        y_train=y[train_idx],
        X_test=np.column_stack([s[1] for s in scaled]),
        y_test=y[test_idx],
        provenance=PreprocessLog(
            (f"synthetic blobs seed={seed} sep={sep:.3f} noise={noise:.3f} dims={d_inf}+{d_irr}",),
            tuple([False] * X.shape[1]),
        ),
    )


def generate_synthetic_metadataset(
    n_datasets: int, seed: int, profile: SyntheticProfile | None = None
) -> MetaDataset:
    """Deterministic synthetic meta-dataset with a meta-train/valid split."""
    if n_datasets < 4:
        raise DataError("need at least 4 synthetic datasets")
    profile = profile or SyntheticProfile()
    width = len(str(n_datasets - 1))
    datasets = [
        _synthesize_one(f"synth-{i:0{width}d}", stable_child_seed(seed, "synth", i), profile)
        for i in range(n_datasets)
    ]
    return split_meta(datasets, profile.valid_fraction, stable_child_seed(seed, "meta-split"))


# ---------------------------------------------------------------------------
# Persistence
# ---------------------------------------------------------------------------

_INDEX_VERSION = 1


def save_metadataset(meta: MetaDataset, out_dir: str | Path) -> Path:
    """Persist as a directory tree: one subdirectory of .npy arrays per dataset
    plus an index JSON with names, split assignment, and seed."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    def save_array(path: Path, arr: np.ndarray) -> None:
        tmp = path.with_name(path.name + ".tmp")
        with open(tmp, "wb") as fh:
            np.save(fh, arr)
        os.replace(tmp, path)

    index = {"version": _INDEX_VERSION, "seed": meta.seed, "datasets": []}
    for split_name, datasets in (("meta_train", meta.meta_train), ("meta_valid", meta.meta_valid)):
        for ds in datasets:
            ds_dir = out_dir / ds.name
            ds_dir.mkdir(exist_ok=True)
            save_array(ds_dir / "X_train.npy", ds.X_train)
            save_array(ds_dir / "y_train.npy", ds.y_train)
            save_array(ds_dir / "X_test.npy", ds.X_test)
            save_array(ds_dir / "y_test.npy", ds.y_test)
            atomic_write_json(
                ds_dir / "meta.json",
                {
                    "name": ds.name,
                    "steps": list(ds.provenance.steps),
                    "categorical_derived": [bool(b) for b in ds.provenance.categorical_derived],
                },
            )
            index["datasets"].append({"name": ds.name, "split": split_name})
    atomic_write_json(out_dir / "index.json", index)
    return out_dir / "index.json"


def load_metadataset(in_dir: str | Path) -> MetaDataset:
    in_dir = Path(in_dir)
    with open(in_dir / "index.json") as fh:
        index = json.load(fh)
    if index.get("version") != _INDEX_VERSION:
        raise DataError(f"unsupported metadataset index version {index.get('version')}")
    splits: dict[str, list[Dataset]] = {"meta_train": [], "meta_valid": []}
    for entry in index["datasets"]:
        ds_dir = in_dir / entry["name"]
        with open(ds_dir / "meta.json") as fh:
            meta = json.load(fh)
        ds = Dataset(
            name=entry["name"],
            X_train=np.load(ds_dir / "X_train.npy"),
            y_train=np.load(ds_dir / "y_train.npy"),
            X_test=np.load(ds_dir / "X_test.npy"),
            y_test=np.load(ds_dir / "y_test.npy"),
            provenance=PreprocessLog(tuple(meta["steps"]), tuple(meta["categorical_derived"])),
        )
        splits[entry["split"]].append(ds)
    return MetaDataset(tuple(splits["meta_train"]), tuple(splits["meta_valid"]), index["seed"])
