"""Warm-start selection strategies.

Encoder-based strategies pick the k nearest base datasets in representation
space and take each neighbor's best portfolio configuration; the baselines
select at random (from the space or the portfolio), by mean rank, or via
true landmarkers as an oracle upper bound.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .gbt import GbtParams
from .hpo import SearchSpace, sample_config
from .portfolio import LandmarkerBase, LandmarkerVector, Portfolio


@dataclass(frozen=True)
class RepresentationBase:
    """Per-dataset representation vectors aligned with a landmarker base."""

    vectors: dict[str, np.ndarray]
    landmarkers: LandmarkerBase

    def __post_init__(self):
        lengths = {len(v) for v in self.vectors.values()}
        if len(lengths) > 1:
            raise ValueError("representation vectors must share one length")
        missing = set(self.vectors) - set(self.landmarkers.vectors)
        if missing:
            raise ValueError(f"representations without landmarkers: {sorted(missing)}")

    @property
    def size(self) -> int:
        return len(self.vectors)


def _best_unused(base: LandmarkerBase, name: str, used: set[tuple]) -> GbtParams:
    """The neighbor's best configuration not yet selected (ranked by its
    landmarker values, ties to the lowest index)."""
    values = base.vector_for(name)
    for idx in np.argsort(-values, kind="stable"):
        config = base.portfolio.configs[int(idx)]
        if config.as_tuple() not in used:
            return config
    raise ValueError(f"all portfolio configurations exhausted for neighbor {name!r}")


def select_knn(target_repr, base: RepresentationBase, k: int) -> list[GbtParams]:
    """Best configuration of each of the k nearest base datasets.

    Distance ties break lexicographically by name; duplicate configurations
    are replaced by the neighbor's next-best unused one. Nearest first.
    """
    if k > base.size:
        raise ValueError(f"k={k} exceeds base size {base.size}")
    target = np.asarray(target_repr, dtype=float).reshape(-1)
    ranked = sorted(
        base.vectors.items(),
        key=lambda item: (float(np.linalg.norm(item[1] - target)), item[0]),
    )
    used: set[tuple] = set()
    picks: list[GbtParams] = []
    for name, _ in ranked[:k]:
        config = _best_unused(base.landmarkers, name, used)
        used.add(config.as_tuple())
        picks.append(config)
    return picks


def select_rank(base: LandmarkerBase, k: int) -> list[GbtParams]:
    """Top-k configurations by mean landmarker value over all base datasets;
    identical for every target dataset."""
    if k > base.portfolio.size:
        raise ValueError(f"k={k} exceeds portfolio size {base.portfolio.size}")
    table = np.stack([base.vector_for(name) for name in base.names])
    means = table.mean(axis=0)
    order = np.argsort(-means, kind="stable")  # ties to lowest index
    return [base.portfolio.configs[int(i)] for i in order[:k]]


def select_random_portfolio(
    portfolio: Portfolio, k: int, rng: np.random.Generator
) -> list[GbtParams]:
    """Uniform selection without replacement from the portfolio."""
    if k > portfolio.size:
        raise ValueError(f"k={k} exceeds portfolio size {portfolio.size}")
    idx = rng.choice(portfolio.size, size=k, replace=False)
    return [portfolio.configs[int(i)] for i in idx]


def select_no_warmstart(space: SearchSpace, k: int, rng: np.random.Generator) -> list[GbtParams]:
    """k i.i.d. draws from the entire hyperparameter space."""
    return [sample_config(space, rng) for _ in range(k)]


def select_landmarker_oracle(
    target_landmarkers: LandmarkerVector, base: RepresentationBase, k: int
) -> list[GbtParams]:
    """Nearest-neighbor selection on true landmarker vectors; an impractical
    upper bound for the representation-based strategies."""
    return select_knn(np.asarray(target_landmarkers.values, dtype=float), base, k)


def landmarker_representation_base(base: LandmarkerBase) -> RepresentationBase:
    """RepresentationBase whose vectors are the true landmarkers."""
    return RepresentationBase(
        {name: np.asarray(base.vector_for(name), dtype=float) for name in base.names}, base
    )
