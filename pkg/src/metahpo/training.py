"""Encoder training: objectives, pair sampling, and the optimization loop.

Three objectives are supported. The metric objective aligns embedding
distances with landmarker distances; the reconstruction objective regresses
predicted landmarkers onto true ones; the baseline contrastive objective
classifies whether two subsamples come from the same dataset via
p_same = exp(-distance).
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from . import autodiff as ad
from .data import Batch, Dataset, MetaDataset, subsample
from .encoder import (
    EncoderConfig,
    EncoderParams,
    forward_embedding,
    forward_prediction,
    init_params,
    loss_and_gradient,
)
from .util import stable_child_seed

log = logging.getLogger(__name__)

OBJECTIVES = ("baseline", "metric", "reconstruction")

_P_CLAMP = (1e-7, 1.0 - 1e-7)


@dataclass(frozen=True)
class PairSample:
    """A pair of dataset subsamples with their landmarkers and, for the
    contrastive objective, a same-dataset label."""

    batch_1: Batch
    batch_2: Batch
    landmarkers_1: np.ndarray | None = None
    landmarkers_2: np.ndarray | None = None
    same_dataset: bool | None = None

    def __post_init__(self):
        if (self.landmarkers_1 is None) != (self.landmarkers_2 is None):
            raise ValueError("landmarkers must be present for both batches or neither")
        if self.landmarkers_1 is not None and len(self.landmarkers_1) != len(self.landmarkers_2):
            raise ValueError("landmarker vectors differ in length")
        if self.same_dataset is not None:
            actually_same = self.batch_1.dataset_name == self.batch_2.dataset_name
            if self.same_dataset != actually_same:
                raise ValueError("same-dataset label inconsistent with batch names")


@dataclass(frozen=True)
class TrainSettings:
    objective: str = "metric"
    steps: int = 2000
    pairs_per_step: int = 16
    rows_range: tuple[int, int] = (32, 128)
    cols_range: tuple[int, int | None] = (2, None)  # None = all columns
    learning_rate: float = 1e-3
    momentum: float = 0.9
    seed: int = 0
    valid_fraction: float = 0.2
    valid_pairs: int = 32
    eval_every: int = 25
    encoder_config: EncoderConfig = field(default_factory=EncoderConfig)

    def __post_init__(self):
        if self.objective not in OBJECTIVES:
            raise ValueError(f"unknown objective {self.objective!r}")
        if self.steps < 0 or self.pairs_per_step < 1 or self.valid_pairs < 1:
            raise ValueError("counts must be positive")
        if self.learning_rate <= 0:
            raise ValueError("learning rate must be > 0")


def euclidean(a, b) -> float:
    """Plain Euclidean distance between equal-length vectors."""
    a = np.asarray(a, dtype=float).reshape(-1)
    b = np.asarray(b, dtype=float).reshape(-1)
    if a.shape != b.shape:
        raise ValueError(f"length mismatch {a.shape} vs {b.shape}")
    return float(np.sqrt(((a - b) ** 2).sum()))


# ---------------------------------------------------------------------------
# Objectives (shared traced/plain code paths)
# ---------------------------------------------------------------------------


def _mean_of(terms):
    out = terms[0]
    for t in terms[1:]:
        out = ad.add(out, t)
    return ad.mul(out, 1.0 / len(terms))


def _metric_term(params_map, config: EncoderConfig, pairs: Sequence[PairSample]):
    terms = []
    for pair in pairs:
        d_emb = ad.euclidean(
            forward_embedding(params_map, config, pair.batch_1),
            forward_embedding(params_map, config, pair.batch_2),
        )
        d_land = euclidean(pair.landmarkers_1, pair.landmarkers_2)
        diff = ad.sub(d_emb, d_land)
        terms.append(ad.mul(diff, diff))
    return _mean_of(terms)


def _reconstruction_term(params_map, config: EncoderConfig, pairs: Sequence[PairSample]):
    terms = []
    for pair in pairs:
        for batch, truth in ((pair.batch_1, pair.landmarkers_1), (pair.batch_2, pair.landmarkers_2)):
            pred = forward_prediction(params_map, config, batch)
            resid = ad.sub(pred, np.asarray(truth, dtype=float).reshape(1, -1))
            terms.append(ad.mean(ad.mul(resid, resid)))
    return _mean_of(terms)


def _contrastive_term(params_map, config: EncoderConfig, pairs: Sequence[PairSample]):
    terms = []
    for pair in pairs:
        d = ad.euclidean(
            forward_embedding(params_map, config, pair.batch_1),
            forward_embedding(params_map, config, pair.batch_2),
        )
        p_same = ad.clip(ad.exp(-d), *_P_CLAMP)
        if pair.same_dataset:
            terms.append(-ad.log(p_same))
        else:
            terms.append(-ad.log(ad.sub(1.0, p_same)))
    return _mean_of(terms)


_TERMS = {
    "metric": _metric_term,
    "reconstruction": _reconstruction_term,
    "baseline": _contrastive_term,
}


def build_objective(objective: str, config: EncoderConfig, pairs: Sequence[PairSample]):
    """Closure suitable for `encoder.loss_and_gradient`."""
    if not pairs:
        raise ValueError("objective needs at least one pair")
    term = _TERMS[objective]
    return lambda params_map: term(params_map, config, pairs)


def metric_loss(pairs: Sequence[PairSample], params: EncoderParams) -> float:
    """Mean squared difference between embedding and landmarker distances."""
    if not pairs:
        raise ValueError("metric_loss needs at least one pair")
    return float(ad.value_of(_metric_term(params.views(), params.config, pairs)))


def reconstruction_loss(pred, truth) -> float:
    """Mean squared residual between a predicted and a true landmarker vector."""
    pred = np.asarray(pred, dtype=float).reshape(-1)
    truth = np.asarray(truth, dtype=float).reshape(-1)
    if pred.shape != truth.shape:
        raise ValueError(f"length mismatch {pred.shape} vs {truth.shape}")
    return float(np.mean((pred - truth) ** 2))


def contrastive_loss(pairs: Sequence[PairSample], params: EncoderParams) -> float:
    """Cross-entropy of the same-dataset classification with p = exp(-d)."""
    if not pairs:
        raise ValueError("contrastive_loss needs at least one pair")
    if any(p.same_dataset is None for p in pairs):
        raise ValueError("contrastive pairs need same-dataset labels")
    return float(ad.value_of(_contrastive_term(params.views(), params.config, pairs)))


def objective_value(objective: str, params: EncoderParams, pairs: Sequence[PairSample]) -> float:
    return float(ad.value_of(_TERMS[objective](params.views(), params.config, pairs)))


# ---------------------------------------------------------------------------
# Pair sampling
# ---------------------------------------------------------------------------


def _draw_batch(ds: Dataset, settings: TrainSettings, rng: np.random.Generator) -> Batch:
    n, d = ds.X_train.shape
    lo, hi = settings.rows_range
    lo, hi = min(lo, n), min(hi, n)
    n_rows = int(rng.integers(lo, hi + 1))
    clo, chi = settings.cols_range
    chi = d if chi is None else min(chi, d)
    clo = min(clo, chi)
    n_cols = int(rng.integers(clo, chi + 1))
    return subsample(ds, n_rows, n_cols, rng)


def _disjoint_batches(ds: Dataset, settings: TrainSettings, rng: np.random.Generator):
    """Two row-disjoint subsamples of one dataset (contrastive positives)."""
    n, d = ds.X_train.shape
    lo, hi = settings.rows_range
    half = max(1, n // 2)
    n_rows = int(rng.integers(min(lo, half), min(hi, half) + 1))
    rows = rng.choice(n, size=2 * n_rows, replace=False)
    batches = []
    for part in (rows[:n_rows], rows[n_rows:]):
        clo, chi = settings.cols_range
        chi = d if chi is None else min(chi, d)
        clo = min(clo, chi)
        n_cols = int(rng.integers(clo, chi + 1))
        part = np.sort(part)
        cols = np.sort(rng.choice(d, size=n_cols, replace=False))
        batches.append(
            Batch(ds.name, part, cols, ds.X_train[np.ix_(part, cols)], ds.y_train[part])
        )
    return batches


def sample_pairs(
    datasets: Sequence[Dataset],
    landmarker_base,
    n: int,
    settings: TrainSettings,
    rng: np.random.Generator,
) -> list[PairSample]:
    """Draw `n` training pairs.

    Metric/reconstruction: uniform pairs of distinct datasets with fresh
    subsamples. Baseline: stratified half same-dataset (two disjoint
    subsamples), half different.
    """
    if len(datasets) < 2:
        raise ValueError("need at least 2 datasets to sample pairs")
    needs_landmarkers = settings.objective in ("metric", "reconstruction")
    if needs_landmarkers and landmarker_base is None:
        raise ValueError(f"objective {settings.objective!r} needs a landmarker base")

    def landmarks(ds: Dataset) -> np.ndarray | None:
        if not needs_landmarkers:
            return None
        return np.asarray(landmarker_base.vector_for(ds.name), dtype=float)

    pairs = []
    for idx in range(n):
        if settings.objective == "baseline":
            same = idx < n // 2  # stratified: first half same-dataset
            if same:
                ds = datasets[int(rng.integers(len(datasets)))]
                b1, b2 = _disjoint_batches(ds, settings, rng)
                pairs.append(PairSample(b1, b2, same_dataset=True))
                continue
        i, j = rng.choice(len(datasets), size=2, replace=False)
        ds_i, ds_j = datasets[int(i)], datasets[int(j)]
        pairs.append(
            PairSample(
                _draw_batch(ds_i, settings, rng),
                _draw_batch(ds_j, settings, rng),
                landmarkers_1=landmarks(ds_i),
                landmarkers_2=landmarks(ds_j),
                same_dataset=False if settings.objective == "baseline" else None,
            )
        )
    return pairs


# ---------------------------------------------------------------------------
# Training loop
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class HistoryRow:
    step: int
    train_loss: float
    valid_loss: float


def holdout_split(meta: MetaDataset, settings: TrainSettings):
    """The train/validation dataset slices used by `train_encoder`."""
    datasets = list(meta.meta_train)
    if len(datasets) < 4:
        raise ValueError("need at least 4 meta-train datasets (train + validation slices)")
    order = np.random.default_rng(stable_child_seed(settings.seed, "holdout")).permutation(
        len(datasets)
    )
    # pair sampling needs at least 2 datasets on each side of the holdout
    n_valid = max(2, int(round(settings.valid_fraction * len(datasets))))
    n_valid = min(n_valid, len(datasets) - 2)
    valid_sets = [datasets[i] for i in order[:n_valid]]
    train_sets = [datasets[i] for i in order[n_valid:]]
    return train_sets, valid_sets


def validation_pairs(meta: MetaDataset, landmarker_base, settings: TrainSettings):
    """The fixed pair sample that scores validation loss during training."""
    _, valid_sets = holdout_split(meta, settings)
    rng = np.random.default_rng(stable_child_seed(settings.seed, "valid-pairs"))
    return sample_pairs(valid_sets, landmarker_base, settings.valid_pairs, settings, rng)


def train_encoder(
    meta: MetaDataset,
    landmarker_base,
    settings: TrainSettings,
) -> tuple[EncoderParams, list[HistoryRow]]:
    """Momentum gradient descent on the chosen objective.

    A `valid_fraction` slice of the meta-train datasets is held out; the
    validation loss is evaluated on a fixed pair sample every `eval_every`
    steps and the parameters with the best validation loss are returned.
    """
    train_sets, _ = holdout_split(meta, settings)
    valid_pairs = validation_pairs(meta, landmarker_base, settings)

    params = init_params(settings.encoder_config, stable_child_seed(settings.seed, "init"))
    velocity = np.zeros_like(params.values)
    rng = np.random.default_rng(stable_child_seed(settings.seed, "steps"))

    def valid_loss_of(p: EncoderParams) -> float:
        return objective_value(settings.objective, p, valid_pairs)

    history: list[HistoryRow] = []
    best = params.copy()
    best_valid = valid_loss_of(params)
    probe_pairs = sample_pairs(train_sets, landmarker_base, settings.pairs_per_step, settings, rng)
    history.append(HistoryRow(0, objective_value(settings.objective, params, probe_pairs), best_valid))

    window: list[float] = []
    for step in range(1, settings.steps + 1):
        pairs = sample_pairs(train_sets, landmarker_base, settings.pairs_per_step, settings, rng)
        objective = build_objective(settings.objective, settings.encoder_config, pairs)
        try:
            loss, grad = loss_and_gradient(params, objective)
        except FloatingPointError as exc:
            raise RuntimeError(f"training diverged at step {step}: {exc}") from exc
        window.append(loss)
        velocity = settings.momentum * velocity - settings.learning_rate * grad
        params = EncoderParams(params.config, params.values + velocity, params.layout)

        if step % settings.eval_every == 0 or step == settings.steps:
            v = valid_loss_of(params)
            history.append(HistoryRow(step, float(np.mean(window)), v))
            window = []
            if v < best_valid:
                best_valid = v
                best = params.copy()

    log.info(
        "trained %s encoder: init valid %.6f -> best valid %.6f",
        settings.objective,
        history[0].valid_loss,
        best_valid,
    )
    return best, history


def settings_for(objective: str, base: TrainSettings) -> TrainSettings:
    return replace(base, objective=objective)
