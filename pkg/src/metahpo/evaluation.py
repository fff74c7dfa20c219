"""Evaluation protocols: distance correlation and warm-start statistics.

Distance correlation scores how well distances between dataset
representations align with distances between landmarker vectors, resampled
over S repetitions of N dataset pairs. The warm-start experiment is
summarized by ADTM curves and rank statistics (Friedman test,
Wilcoxon-Holm pairwise comparisons, critical-difference groups).
"""

from __future__ import annotations

import itertools
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.stats import chi2, norm

from .data import Dataset, full_train_batch
from .encoder import EncoderParams, encode, reconstruct
from .hpo import OptimizationTrace
from .util import atomic_write_json, atomic_write_text, average_ranks, stable_child_seed

log = logging.getLogger(__name__)

SCHEMA_VERSION = 1


@dataclass(frozen=True)
class CorrelationConfig:
    repetitions: int = 20  # S
    pairs: int = 1000  # N
    seed: int = 0

    def __post_init__(self):
        if self.repetitions < 1 or self.pairs < 3:
            raise ValueError("need S >= 1 and N >= 3")


def spearman(x, y) -> float:
    """Spearman rank correlation via Pearson on fractional (mid) ranks."""
    x = np.asarray(x, dtype=float).reshape(-1)
    y = np.asarray(y, dtype=float).reshape(-1)
    if x.shape != y.shape:
        raise ValueError("length mismatch")
    if len(x) < 3:
        raise ValueError("need at least 3 observations")
    rx, ry = average_ranks(x), average_ranks(y)
    sx, sy = rx.std(), ry.std()
    if sx == 0 or sy == 0:
        raise ValueError("degenerate input: zero rank variance")
    return float(((rx - rx.mean()) * (ry - ry.mean())).mean() / (sx * sy))


# ---------------------------------------------------------------------------
# Distance correlation (representation and prediction variants)
# ---------------------------------------------------------------------------


def representation_map(params: EncoderParams, datasets) -> dict[str, np.ndarray]:
    """Embedding of each dataset's full train split."""
    return {ds.name: encode(params, full_train_batch(ds)).vector for ds in datasets}


def prediction_map(params: EncoderParams, datasets) -> dict[str, np.ndarray]:
    """Predicted landmarker vector of each dataset's full train split."""
    return {ds.name: reconstruct(params, full_train_batch(ds)) for ds in datasets}


def _as_vector_map(source, datasets, mapper) -> dict[str, np.ndarray]:
    if isinstance(source, EncoderParams):
        return mapper(source, datasets)
    return {name: np.asarray(v, dtype=float) for name, v in source.items()}


def _landmark_vectors(landmarkers) -> dict[str, np.ndarray]:
    out = {}
    for name, vec in landmarkers.items():
        out[name] = np.asarray(getattr(vec, "values", vec), dtype=float)
    return out


def _correlation_over_samples(
    first: dict[str, np.ndarray],
    lands: dict[str, np.ndarray],
    names: list[str],
    cfg: CorrelationConfig,
    cross: bool,
) -> tuple[float, float]:
    """Mean/std over S repetitions of the Spearman correlation between the
    two distance lists. `cross` compares first[i] against lands[j] (the
    prediction variant); otherwise first[i] against first[j]."""
    if len(names) < 2:
        raise ValueError("need at least 2 datasets")
    rhos = []
    for s in range(cfg.repetitions):
        rng = np.random.default_rng(stable_child_seed(cfg.seed, "corr", s))
        d_first, d_land = [], []
        for _ in range(cfg.pairs):
            i, j = rng.choice(len(names), size=2, replace=False)
            a, b = names[int(i)], names[int(j)]
            left = first[a] - (lands[b] if cross else first[b])
            d_first.append(float(np.sqrt((left**2).sum())))
            d_land.append(float(np.sqrt(((lands[a] - lands[b]) ** 2).sum())))
        rhos.append(spearman(d_first, d_land))
    rhos = np.asarray(rhos)
    std = float(rhos.std(ddof=1)) if len(rhos) > 1 else 0.0
    return float(rhos.mean()), std


def distance_correlation_repr(source, datasets, landmarkers, cfg: CorrelationConfig):
    """Correlation of representation distances with landmarker distances.

    `source` is either EncoderParams (representations are computed from a
    full-train batch per dataset) or a ready name -> vector map.
    """
    reps = _as_vector_map(source, datasets, representation_map)
    lands = _landmark_vectors(landmarkers)
    names = sorted(set(reps) & set(lands))
    return _correlation_over_samples(reps, lands, names, cfg, cross=False)


def distance_correlation_pred(source, datasets, landmarkers, cfg: CorrelationConfig):
    """Correlation of prediction-to-landmarker distances with landmarker
    distances (the reconstruction encoder's variant)."""
    if isinstance(source, EncoderParams) and not source.config.head_widths:
        raise ValueError("encoder lacks a reconstruction head")
    preds = _as_vector_map(source, datasets, prediction_map)
    lands = _landmark_vectors(landmarkers)
    names = sorted(set(preds) & set(lands))
    return _correlation_over_samples(preds, lands, names, cfg, cross=True)


# ---------------------------------------------------------------------------
# ADTM
# ---------------------------------------------------------------------------


def objective_bounds(traces) -> dict[str, tuple[float, float]]:
    """Per-dataset (min, max) objective across all given traces."""
    bounds: dict[str, tuple[float, float]] = {}
    for trace in traces:
        obj = trace.objectives()
        lo, hi = float(obj.min()), float(obj.max())
        if trace.dataset_name in bounds:
            plo, phi = bounds[trace.dataset_name]
            bounds[trace.dataset_name] = (min(lo, plo), max(hi, phi))
        else:
            bounds[trace.dataset_name] = (lo, hi)
    return bounds


def adtm_curves(traces, bounds) -> np.ndarray:
    """Scaled-regret curves, one row per usable trace."""
    rows = []
    for trace in traces:
        lo, hi = bounds[trace.dataset_name]
        if hi <= lo:
            log.warning("degenerate bounds for %s; skipped in ADTM", trace.dataset_name)
            continue
        rows.append((hi - trace.best_so_far()) / (hi - lo))
    if not rows:
        raise ValueError("no usable traces for ADTM")
    return np.stack(rows)


def adtm(traces, bounds) -> np.ndarray:
    """Mean scaled regret of best-so-far per iteration (non-increasing)."""
    return adtm_curves(traces, bounds).mean(axis=0)


# ---------------------------------------------------------------------------
# Rank statistics
# ---------------------------------------------------------------------------


def friedman_test(perf: np.ndarray) -> tuple[float, float]:
    """Friedman chi-square over a (datasets x strategies) matrix where
    higher values are better (rank 1 = best)."""
    perf = np.asarray(perf, dtype=float)
    n, k = perf.shape
    if n < 2 or k < 2:
        raise ValueError("need at least 2 datasets and 2 strategies")
    ranks = np.stack([average_ranks(-row) for row in perf])
    mean_ranks = ranks.mean(axis=0)
    stat = 12.0 * n / (k * (k + 1)) * float(((mean_ranks - (k + 1) / 2.0) ** 2).sum())
    return stat, float(chi2.sf(stat, k - 1))


def mean_ranks(perf: np.ndarray) -> np.ndarray:
    perf = np.asarray(perf, dtype=float)
    return np.stack([average_ranks(-row) for row in perf]).mean(axis=0)


def _signed_rank_exact_p(ranks2: np.ndarray, w2: int) -> float:
    """Exact two-sided p for the signed-rank statistic.

    `ranks2` are doubled ranks (integers, even in the presence of midrank
    ties); `w2` is the doubled positive-rank sum. Counts sign assignments
    by dynamic programming over achievable sums.
    """
    total = int(ranks2.sum())
    counts = np.zeros(total + 1, dtype=float)
    counts[0] = 1.0
    for r in ranks2:
        shifted = np.zeros_like(counts)
        shifted[r:] = counts[:-r] if r > 0 else counts
        counts = counts + shifted
    n_patterns = counts.sum()
    m = min(w2, total - w2)
    p = (counts[: m + 1].sum() + counts[total - m :].sum()) / n_patterns
    return float(min(p, 1.0))


def wilcoxon_signed_rank(diffs) -> float:
    """Two-sided Wilcoxon signed-rank p-value on paired differences.

    Zeros are dropped; fewer than 3 nonzero differences yields p = 1
    (insufficient data). Exact distribution up to n = 25, then a normal
    approximation with tie and continuity corrections.
    """
    d = np.asarray(diffs, dtype=float)
    d = d[d != 0]
    n = len(d)
    if n < 3:
        return 1.0
    ranks = average_ranks(np.abs(d))
    w_pos = float(ranks[d > 0].sum())
    if n <= 25:
        ranks2 = np.round(2 * ranks).astype(int)
        return _signed_rank_exact_p(ranks2, int(round(2 * w_pos)))
    mu = n * (n + 1) / 4.0
    _, tie_counts = np.unique(np.abs(d), return_counts=True)
    sigma2 = n * (n + 1) * (2 * n + 1) / 24.0 - float(((tie_counts**3 - tie_counts) / 48.0).sum())
    sigma = np.sqrt(sigma2)
    if sigma == 0:
        return 1.0
    z = (w_pos - mu - 0.5 * np.sign(w_pos - mu)) / sigma
    return float(min(2.0 * norm.sf(abs(z)), 1.0))


def holm_adjust(raw: list[float]) -> list[float]:
    """Holm step-down adjustment; monotone and >= raw."""
    m = len(raw)
    order = np.argsort(raw, kind="stable")
    adjusted = [0.0] * m
    running = 0.0
    for rank, idx in enumerate(order):
        running = max(running, min(1.0, (m - rank) * raw[idx]))
        adjusted[idx] = running
    return adjusted


def wilcoxon_holm(perf: np.ndarray, alpha: float = 0.05):
    """Pairwise Holm-adjusted Wilcoxon tests and indistinguishable groups.

    Returns (adjusted p matrix, groups), where groups are maximal intervals
    of strategies, ordered by mean rank, whose pairwise adjusted p-values
    all sit at or above alpha (the standard CD-diagram construction).
    """
    perf = np.asarray(perf, dtype=float)
    n, k = perf.shape
    if k < 2:
        raise ValueError("need at least 2 strategies")
    pairs = list(itertools.combinations(range(k), 2))
    raw = [wilcoxon_signed_rank(perf[:, a] - perf[:, b]) for a, b in pairs]
    adjusted = holm_adjust(raw)
    p_matrix = np.ones((k, k))
    for (a, b), p in zip(pairs, adjusted):
        p_matrix[a, b] = p_matrix[b, a] = p

    order = np.argsort(mean_ranks(perf), kind="stable")
    groups: list[list[int]] = []
    for start in range(k):
        end = start
        while end + 1 < k and all(
            p_matrix[order[i], order[j]] >= alpha
            for i in range(start, end + 2)
            for j in range(i + 1, end + 2)
        ):
            end += 1
        if end > start:
            group = [int(order[i]) for i in range(start, end + 1)]
            if not groups or not set(group) <= set(groups[-1]):
                groups.append(group)
    return p_matrix, groups


# ---------------------------------------------------------------------------
# Experiment results and report export
# ---------------------------------------------------------------------------


@dataclass
class ExperimentResult:
    """All traces of one warm-start experiment plus correlation summaries."""

    traces: dict[tuple[str, str, int], OptimizationTrace]  # (strategy, dataset, seed)
    strategies: list[str]
    dataset_names: list[str]
    seeds: list[int]
    warmstart_size: int
    alpha: float = 0.05
    correlations: list[dict] = field(default_factory=list)
    settings: dict = field(default_factory=dict)

    def __post_init__(self):
        budgets = set()
        for strategy in self.strategies:
            for name in self.dataset_names:
                for seed in self.seeds:
                    key = (strategy, name, seed)
                    if key not in self.traces:
                        raise ValueError(f"missing trace for {key}")
                    budgets.add(self.traces[key].budget)
        if len(budgets) > 1:
            raise ValueError(f"traces disagree on budget: {sorted(budgets)}")

    @property
    def budget(self) -> int:
        return next(iter(self.traces.values())).budget

    def traces_for(self, strategy: str) -> list[OptimizationTrace]:
        return [
            self.traces[(strategy, name, seed)]
            for name in self.dataset_names
            for seed in self.seeds
        ]

    def all_traces(self) -> list[OptimizationTrace]:
        return list(self.traces.values())

    def perf_matrix(self, iteration: int) -> np.ndarray:
        """(datasets x strategies) best-so-far at `iteration` (1-based),
        averaged over seeds."""
        out = np.empty((len(self.dataset_names), len(self.strategies)))
        for i, name in enumerate(self.dataset_names):
            for j, strategy in enumerate(self.strategies):
                vals = [
                    self.traces[(strategy, name, seed)].best_so_far()[iteration - 1]
                    for seed in self.seeds
                ]
                out[i, j] = float(np.mean(vals))
        return out


def _cd_payload(result: ExperimentResult, iteration: int) -> dict:
    perf = result.perf_matrix(iteration)
    stat, p = friedman_test(perf)
    p_matrix, groups = wilcoxon_holm(perf, result.alpha)
    return {
        "iteration": iteration,
        "average_ranks": [float(r) for r in mean_ranks(perf)],
        "friedman": {"statistic": stat, "p_value": p},
        "adjusted_p": [[float(v) for v in row] for row in p_matrix],
        "groups": [[result.strategies[i] for i in group] for group in groups],
    }


def export_report(result: ExperimentResult, out_dir: str | Path) -> dict[str, Path]:
    """Write adtm.csv, cd.json, correlations.json, and manifest.json."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    bounds = objective_bounds(result.all_traces())

    lines = ["strategy,iteration,mean,std"]
    for strategy in result.strategies:
        curves = adtm_curves(result.traces_for(strategy), bounds)
        mean = curves.mean(axis=0)
        std = curves.std(axis=0)
        for t in range(result.budget):
            lines.append(f"{strategy},{t + 1},{repr(float(mean[t]))},{repr(float(std[t]))}")
    adtm_path = out_dir / "adtm.csv"
    atomic_write_text(adtm_path, "\n".join(lines) + "\n")

    cd = {
        "schema_version": SCHEMA_VERSION,
        "alpha": result.alpha,
        "strategies": result.strategies,
        "warmstart_size": result.warmstart_size,
        "checkpoints": {
            "warmstart_end": _cd_payload(result, result.warmstart_size),
            "final": _cd_payload(result, result.budget),
        },
    }
    cd_path = out_dir / "cd.json"
    atomic_write_json(cd_path, cd)

    corr_path = out_dir / "correlations.json"
    atomic_write_json(
        corr_path, {"schema_version": SCHEMA_VERSION, "entries": result.correlations}
    )

    manifest_path = out_dir / "manifest.json"
    atomic_write_json(
        manifest_path,
        {
            "schema_version": SCHEMA_VERSION,
            "strategies": result.strategies,
            "datasets": result.dataset_names,
            "seeds": result.seeds,
            "budget": result.budget,
            "warmstart_size": result.warmstart_size,
            "alpha": result.alpha,
            "settings": result.settings,
        },
    )
    return {
        "adtm": adtm_path,
        "cd": cd_path,
        "correlations": corr_path,
        "manifest": manifest_path,
    }
