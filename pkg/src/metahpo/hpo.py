"""Bayesian hyperparameter optimization over the boosted-trees space.

A Matern-5/2 Gaussian process on the unit cube models the test AUC;
expected improvement over a random candidate set proposes the next
configuration. Warm-start configurations are evaluated first, then the
surrogate loop fills the remaining budget. A random-search baseline shares
the trace format.
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.linalg import cho_solve, cholesky, solve_triangular
from scipy.stats import norm

from .data import Dataset
from .gbt import PARAM_ORDER, PARAM_RANGES, GbtParams
from .util import atomic_write_text

log = logging.getLogger(__name__)

HyperparameterConfig = GbtParams  # one canonical config type across modules

LINEAR_INT = "linear-int"
LOG_FLOAT = "log-float"


@dataclass(frozen=True)
class Dimension:
    name: str
    low: float
    high: float
    scale: str

    def __post_init__(self):
        if self.low >= self.high:
            raise ValueError(f"{self.name}: low must be < high")
        if self.scale == LOG_FLOAT and self.low <= 0:
            raise ValueError(f"{self.name}: log dimension must be positive")
        if self.scale not in (LINEAR_INT, LOG_FLOAT):
            raise ValueError(f"{self.name}: unknown scale {self.scale!r}")


@dataclass(frozen=True)
class SearchSpace:
    dimensions: tuple[Dimension, ...]

    @classmethod
    def default(cls) -> "SearchSpace":
        dims = []
        for name in PARAM_ORDER:
            lo, hi, is_int = PARAM_RANGES[name]
            dims.append(Dimension(name, float(lo), float(hi), LINEAR_INT if is_int else LOG_FLOAT))
        return cls(tuple(dims))

    @property
    def n_dims(self) -> int:
        return len(self.dimensions)

    def to_unit(self, config: HyperparameterConfig) -> np.ndarray:
        u = np.empty(self.n_dims)
        for i, dim in enumerate(self.dimensions):
            v = float(getattr(config, dim.name))
            if not dim.low <= v <= dim.high:
                raise ValueError(f"{dim.name}={v} outside [{dim.low}, {dim.high}]")
            if dim.scale == LOG_FLOAT:
                u[i] = (math.log(v) - math.log(dim.low)) / (math.log(dim.high) - math.log(dim.low))
            else:
                u[i] = (v - dim.low) / (dim.high - dim.low)
        return u

    def from_unit(self, u) -> HyperparameterConfig:
        u = np.asarray(u, dtype=float)
        vals = {}
        for i, dim in enumerate(self.dimensions):
            x = min(max(float(u[i]), 0.0), 1.0)
            if dim.scale == LOG_FLOAT:
                vals[dim.name] = math.exp(math.log(dim.low) + x * (math.log(dim.high) - math.log(dim.low)))
            else:
                vals[dim.name] = int(min(dim.high, max(dim.low, math.floor(dim.low + x * (dim.high - dim.low) + 0.5))))
        return HyperparameterConfig(**vals)


def sample_config(space: SearchSpace, rng: np.random.Generator) -> HyperparameterConfig:
    """Uniform draw: integers uniform inclusive, log dims log-uniform."""
    vals = {}
    for dim in space.dimensions:
        if dim.scale == LINEAR_INT:
            vals[dim.name] = int(rng.integers(int(dim.low), int(dim.high) + 1))
        else:
            vals[dim.name] = float(math.exp(rng.uniform(math.log(dim.low), math.log(dim.high))))
    return HyperparameterConfig(**vals)


def draw_candidates(space: SearchSpace, count: int, seed: int) -> list[HyperparameterConfig]:
    """Deterministic uniform candidate pool shared by the portfolio stage
    and grid caching."""
    rng = np.random.default_rng(seed)
    return [sample_config(space, rng) for _ in range(count)]


# ---------------------------------------------------------------------------
# Gaussian process surrogate
# ---------------------------------------------------------------------------

_JITTERS = (0.0, 1e-10, 1e-9, 1e-8, 1e-7, 1e-6, 1e-5, 1e-4)


def matern52(r):
    """Matern 5/2 correlation at scaled distance r."""
    r = np.asarray(r, dtype=float)
    s5r = math.sqrt(5.0) * r
    return (1.0 + s5r + 5.0 * r * r / 3.0) * np.exp(-s5r)


def _kernel(Xa, Xb, lengthscales, signal):
    diff = Xa[:, None, :] - Xb[None, :, :]
    r = np.sqrt(((diff / lengthscales) ** 2).sum(axis=2))
    return signal**2 * matern52(r)


@dataclass
class GpSurrogate:
    X: np.ndarray
    y: np.ndarray  # raw observed objectives
    y_mean: float
    y_std: float
    lengthscales: np.ndarray
    signal: float
    noise: float
    L: np.ndarray
    alpha: np.ndarray
    log_marginal_likelihood: float

    @classmethod
    def build(
        cls,
        X: np.ndarray,
        y: np.ndarray,
        lengthscales,
        signal: float,
        noise: float,
        standardize: bool = False,
    ) -> "GpSurrogate":
        """Fit with fixed kernel hyperparameters.

        With `standardize`, y is internally centered and scaled (a zero
        variance leaves it centered only), and posteriors are mapped back.
        """
        X = np.atleast_2d(np.asarray(X, dtype=float))
        y = np.asarray(y, dtype=float).reshape(-1)
        if len(X) != len(y) or len(y) < 1:
            raise ValueError("need matching X, y with at least one observation")
        if not np.isfinite(y).all():
            raise ValueError("objectives must be finite")
        y_mean, y_std = 0.0, 1.0
        if standardize:
            y_mean = float(y.mean())
            std = float(y.std())
            y_std = std if std > 0 else 1.0
        yt = (y - y_mean) / y_std

        lengthscales = np.broadcast_to(np.asarray(lengthscales, dtype=float), (X.shape[1],)).copy()
        K = _kernel(X, X, lengthscales, signal)
        L = None
        for jitter in _JITTERS:
            try:
                L = cholesky(K + (noise + jitter) * np.eye(len(X)), lower=True)
                break
            except np.linalg.LinAlgError:
                continue
        if L is None:
            raise np.linalg.LinAlgError("kernel matrix irreparably singular")
        alpha = cho_solve((L, True), yt)
        lml = float(
            -0.5 * yt @ alpha - np.log(np.diag(L)).sum() - 0.5 * len(y) * math.log(2 * math.pi)
        )
        return cls(X, y, y_mean, y_std, lengthscales, signal, noise, L, alpha, lml)

    def posterior(self, Xq: np.ndarray):
        """Posterior mean and variance at query points, in objective units."""
        Xq = np.atleast_2d(np.asarray(Xq, dtype=float))
        Ks = _kernel(self.X, Xq, self.lengthscales, self.signal)
        mean_t = Ks.T @ self.alpha
        v = solve_triangular(self.L, Ks, lower=True)
        var_t = np.maximum(self.signal**2 - (v * v).sum(axis=0), 0.0)
        return self.y_mean + self.y_std * mean_t, (self.y_std**2) * var_t


def _median_distance(X: np.ndarray) -> float:
    if len(X) < 2:
        return 1.0
    diff = X[:, None, :] - X[None, :, :]
    d = np.sqrt((diff**2).sum(axis=2))
    vals = d[np.triu_indices(len(X), k=1)]
    vals = vals[vals > 0]
    return float(np.median(vals)) if vals.size else 1.0


def gp_fit(X: np.ndarray, y: np.ndarray) -> GpSurrogate:
    """Fit the surrogate, choosing kernel hyperparameters by log marginal
    likelihood over a fixed 3-level grid around median-distance heuristics."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    med = _median_distance(X)
    best: GpSurrogate | None = None
    for ls_factor in (0.5, 1.0, 2.0):
        for signal in (0.5, 1.0, 2.0):
            for noise in (1e-6, 1e-4, 1e-2):
                gp = GpSurrogate.build(
                    X, y, med * ls_factor, signal, noise, standardize=True
                )
                if best is None or gp.log_marginal_likelihood > best.log_marginal_likelihood:
                    best = gp
    return best


def expected_improvement(gp: GpSurrogate, x: np.ndarray, best: float) -> float:
    """EI for maximization; the sigma=0 limit is max(mu - best, 0)."""
    mean, var = gp.posterior(np.atleast_2d(x))
    mu, sigma = float(mean[0]), float(np.sqrt(var[0]))
    if sigma < 1e-12:
        return max(mu - best, 0.0)
    z = (mu - best) / sigma
    return float(max(sigma * (z * norm.cdf(z) + norm.pdf(z)), 0.0))


def propose_next(
    gp: GpSurrogate, space: SearchSpace, rng: np.random.Generator, n_candidates: int = 512
) -> HyperparameterConfig:
    """EI argmax over a random candidate set; ties go to the first draw."""
    if n_candidates < 1:
        raise ValueError("n_candidates must be >= 1")
    configs = [sample_config(space, rng) for _ in range(n_candidates)]
    units = np.stack([space.to_unit(c) for c in configs])
    best = float(gp.y.max())
    mean, var = gp.posterior(units)
    sigma = np.sqrt(var)
    z = np.where(sigma > 1e-12, (mean - best) / np.maximum(sigma, 1e-12), 0.0)
    ei = np.where(
        sigma > 1e-12,
        sigma * (z * norm.cdf(z) + norm.pdf(z)),
        np.maximum(mean - best, 0.0),
    )
    return configs[int(np.argmax(ei))]


# ---------------------------------------------------------------------------
# Optimization traces
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class TraceEntry:
    iteration: int
    config: HyperparameterConfig
    objective: float
    phase: str  # "warmstart" | "bo"


@dataclass(frozen=True)
class OptimizationTrace:
    dataset_name: str
    strategy: str
    seed: int
    entries: tuple[TraceEntry, ...]

    def __post_init__(self):
        phases = [e.phase for e in self.entries]
        if any(p not in ("warmstart", "bo") for p in phases):
            raise ValueError("unknown phase in trace")
        if "bo" in phases:
            first_bo = phases.index("bo")
            if any(p == "warmstart" for p in phases[first_bo:]):
                raise ValueError("warm-start entries must precede bo entries")
        for i, e in enumerate(self.entries):
            if e.iteration != i + 1:
                raise ValueError("iterations must be 1..budget in order")

    @property
    def budget(self) -> int:
        return len(self.entries)

    def objectives(self) -> np.ndarray:
        return np.array([e.objective for e in self.entries])

    def best_so_far(self) -> np.ndarray:
        return np.maximum.accumulate(self.objectives())


def _evaluate(evaluator, ds: Dataset, config: HyperparameterConfig) -> float:
    try:
        return float(evaluator(ds, config))
    except Exception as exc:  # noqa: BLE001 - degrade to chance level
        log.warning("objective failed on %s: %s", ds.name, exc)
        return 0.5


def run_hpo(
    ds: Dataset,
    warmstart: list[HyperparameterConfig],
    budget: int,
    evaluator,
    seed: int,
    space: SearchSpace | None = None,
    strategy: str = "bo",
) -> OptimizationTrace:
    """Evaluate warm-start configs in order, then EI proposals to budget."""
    if len(warmstart) >= budget + 1:
        raise ValueError("warm-start list must be shorter than the budget")
    space = space or SearchSpace.default()
    rng = np.random.default_rng(seed)
    entries: list[TraceEntry] = []
    X: list[np.ndarray] = []
    y: list[float] = []
    for config in warmstart:
        value = _evaluate(evaluator, ds, config)
        entries.append(TraceEntry(len(entries) + 1, config, value, "warmstart"))
        X.append(space.to_unit(config))
        y.append(value)
    while len(entries) < budget:
        if X:
            gp = gp_fit(np.stack(X), np.array(y))
            config = propose_next(gp, space, rng)
        else:
            config = sample_config(space, rng)
        value = _evaluate(evaluator, ds, config)
        entries.append(TraceEntry(len(entries) + 1, config, value, "bo"))
        X.append(space.to_unit(config))
        y.append(value)
    return OptimizationTrace(ds.name, strategy, seed, tuple(entries))


def run_random_search(
    ds: Dataset,
    budget: int,
    evaluator,
    seed: int,
    space: SearchSpace | None = None,
    n_warmstart: int = 5,
    strategy: str = "none",
) -> OptimizationTrace:
    """I.i.d. uniform sampling; the first entries are labeled as the
    warm-start phase for comparability with warm-started traces."""
    space = space or SearchSpace.default()
    rng = np.random.default_rng(seed)
    entries = []
    for i in range(budget):
        config = sample_config(space, rng)
        value = _evaluate(evaluator, ds, config)
        phase = "warmstart" if i < n_warmstart else "bo"
        entries.append(TraceEntry(i + 1, config, value, phase))
    return OptimizationTrace(ds.name, strategy, seed, tuple(entries))


# ---------------------------------------------------------------------------
# Trace persistence
# ---------------------------------------------------------------------------


def save_trace(trace: OptimizationTrace, path: str | Path) -> None:
    header = ["iteration", "phase", *PARAM_ORDER, "objective"]
    lines = [",".join(header)]
    for e in trace.entries:
        row = [str(e.iteration), e.phase]
        row += [repr(v) for v in e.config.as_tuple()]
        row.append(repr(e.objective))
        lines.append(",".join(row))
    atomic_write_text(path, "\n".join(lines) + "\n")


def load_trace(path: str | Path, dataset_name: str, strategy: str, seed: int) -> OptimizationTrace:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    entries = []
    for row in rows[1:]:
        values = dict(zip(PARAM_ORDER, (float(v) for v in row[2 : 2 + len(PARAM_ORDER)])))
        entries.append(
            TraceEntry(int(row[0]), GbtParams.from_dict(values), float(row[-1]), row[1])
        )
    return OptimizationTrace(dataset_name, strategy, seed, tuple(entries))
