"""Pipeline orchestration: ingest | portfolio | train | evaluate | report.

All stages read one declarative JSON config and write artifacts under its
output directory, so the expensive landmarker grid is computed once and
later stages replay it.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import data as data_mod
from . import evaluation, gbt, hpo, portfolio as portfolio_mod, training, warmstart
from .encoder import EncoderConfig, load_checkpoint, save_checkpoint
from .util import atomic_write_text, stable_child_seed

log = logging.getLogger(__name__)


@dataclasses.dataclass
class ExperimentConfig:
    out_dir: Path
    seed: int = 7
    workers: int = 1
    data_dir: Path | None = None
    synthetic: dict | None = None
    ingest: dict = dataclasses.field(default_factory=dict)
    portfolio: dict = dataclasses.field(default_factory=dict)
    training: dict = dataclasses.field(default_factory=dict)
    hpo: dict = dataclasses.field(default_factory=dict)
    evaluation: dict = dataclasses.field(default_factory=dict)
    evaluator: str = "gbt"
    strategies: list[str] | None = None

    @classmethod
    def from_file(cls, path: str | Path) -> "ExperimentConfig":
        with open(path) as fh:
            raw = json.load(fh)
        cfg = cls(
            out_dir=Path(raw["out_dir"]),
            seed=int(raw.get("seed", 7)),
            workers=int(raw.get("workers", 1)),
            data_dir=Path(raw["data_dir"]) if raw.get("data_dir") else None,
            synthetic=raw.get("synthetic"),
            ingest=raw.get("ingest", {}),
            portfolio=raw.get("portfolio", {}),
            training=raw.get("training", {}),
            hpo=raw.get("hpo", {}),
            evaluation=raw.get("evaluation", {}),
            evaluator=raw.get("evaluator", "gbt"),
            strategies=raw.get("strategies"),
        )
        return cfg

    # -- derived stage settings --------------------------------------------

    @property
    def metadataset_dir(self) -> Path:
        return self.out_dir / "metadataset"

    @property
    def portfolio_size(self) -> int:
        return int(self.portfolio.get("size", 100))

    @property
    def candidate_count(self) -> int:
        return int(self.portfolio.get("candidate_count", 200))

    @property
    def budget(self) -> int:
        return int(self.hpo.get("budget", 20))

    @property
    def warmstart_size(self) -> int:
        return int(self.hpo.get("warmstart", 5))

    @property
    def hpo_seeds(self) -> list[int]:
        return [int(s) for s in self.hpo.get("seeds", [0, 1, 2])]

    @property
    def alpha(self) -> float:
        return float(self.evaluation.get("alpha", 0.05))

    def correlation_config(self) -> evaluation.CorrelationConfig:
        return evaluation.CorrelationConfig(
            repetitions=int(self.evaluation.get("repetitions", 20)),
            pairs=int(self.evaluation.get("pairs", 1000)),
            seed=int(self.evaluation.get("seed", stable_child_seed(self.seed, "corr"))),
        )

    def encoder_config(self, objective: str) -> EncoderConfig:
        spec = dict(self.training.get("encoder", {}))
        head = None
        if objective == "reconstruction":
            head = tuple(spec.get("head_hidden", (32,))) + (self.portfolio_size,)
        return EncoderConfig(
            f_widths=tuple(spec.get("f_widths", (32, 32))),
            g_widths=tuple(spec.get("g_widths", (32,))),
            h_widths=tuple(spec.get("h_widths", (32, 16))),
            activation=spec.get("activation", "relu"),
            head_widths=head,
        )

    def train_settings(self, objective: str) -> training.TrainSettings:
        t = self.training
        overrides = t.get(objective, {})
        get = lambda key, default: overrides.get(key, t.get(key, default))
        return training.TrainSettings(
            objective=objective,
            steps=int(get("steps", 2000)),
            pairs_per_step=int(get("pairs_per_step", 16)),
            rows_range=tuple(get("rows_range", (32, 128))),
            cols_range=tuple(get("cols_range", (2, None))),
            learning_rate=float(get("learning_rate", 1e-3)),
            momentum=float(get("momentum", 0.9)),
            seed=int(get("seed", stable_child_seed(self.seed, "train", objective))),
            valid_fraction=float(get("valid_fraction", 0.2)),
            valid_pairs=int(get("valid_pairs", 32)),
            eval_every=int(get("eval_every", 25)),
            encoder_config=self.encoder_config(objective),
        )

    def default_strategies(self) -> list[str]:
        return [
            "none",
            "random_portfolio",
            "rank",
            "landmarkers",
            "knn_encoder:checkpoint_metric.json",
            "knn_encoder:checkpoint_reconstruction.json",
        ]


class CliError(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# ingest
# ---------------------------------------------------------------------------


def _ingest_from_dir(config: ExperimentConfig) -> data_mod.MetaDataset:
    csv_paths = sorted(config.data_dir.glob("*.csv"))
    if not csv_paths:
        raise CliError(f"no CSV files in {config.data_dir}")
    test_fraction = float(config.ingest.get("test_fraction", 0.25))
    processed = []
    for csv_path in csv_paths:
        manifest_path = csv_path.with_suffix(".json")
        try:
            with open(manifest_path) as fh:
                manifest = json.load(fh)
            raw = data_mod.load_dataset(csv_path, manifest)
            raw = data_mod.drop_id_columns(raw)
            raw = data_mod.binarize_target(raw)
            processed.append(
                data_mod.preprocess(
                    raw, test_fraction, seed=stable_child_seed(config.seed, "pre", raw.name)
                )
            )
        except Exception as exc:  # noqa: BLE001 - keep ingesting other datasets
            log.warning("skipping %s: %s", csv_path.name, exc)
    if len(processed) < 2:
        raise CliError("fewer than 2 datasets survived ingestion")
    return data_mod.split_meta(
        processed,
        float(config.ingest.get("valid_fraction", 0.25)),
        stable_child_seed(config.seed, "meta-split"),
    )


def cmd_ingest(config: ExperimentConfig) -> Path:
    if config.synthetic:
        profile_spec = dict(config.synthetic.get("profile", {}))
        for key in ("rows", "informative_dims", "irrelevant_dims", "separation",
                    "label_noise", "prevalence", "blobs_per_class"):
            if key in profile_spec:
                profile_spec[key] = tuple(profile_spec[key])
        profile_spec.setdefault(
            "valid_fraction", float(config.ingest.get("valid_fraction", 0.25))
        )
        profile_spec.setdefault(
            "test_fraction", float(config.ingest.get("test_fraction", 0.25))
        )
        meta = data_mod.generate_synthetic_metadataset(
            int(config.synthetic["n_datasets"]),
            int(config.synthetic.get("seed", config.seed)),
            data_mod.SyntheticProfile(**profile_spec),
        )
    elif config.data_dir:
        meta = _ingest_from_dir(config)
    else:
        raise CliError("config needs either a data_dir or a synthetic profile")
    index = data_mod.save_metadataset(meta, config.metadataset_dir)
    log.info(
        "ingested %d meta-train + %d meta-valid datasets",
        len(meta.meta_train),
        len(meta.meta_valid),
    )
    return index


# ---------------------------------------------------------------------------
# portfolio
# ---------------------------------------------------------------------------


def _grid_row(args):
    ds, candidates = args
    return [portfolio_mod.gbt_evaluator(ds, c) for c in candidates]


def _evaluate_grid(config: ExperimentConfig, datasets, candidates) -> np.ndarray:
    if config.workers > 1:
        with ProcessPoolExecutor(max_workers=config.workers) as pool:
            rows = list(pool.map(_grid_row, [(ds, candidates) for ds in datasets]))
        return np.asarray(rows)
    return portfolio_mod.evaluate_candidate_grid(datasets, candidates, portfolio_mod.gbt_evaluator)


def cmd_portfolio(config: ExperimentConfig) -> None:
    meta = data_mod.load_metadataset(config.metadataset_dir)
    space = hpo.SearchSpace.default()
    seed = int(config.portfolio.get("seed", stable_child_seed(config.seed, "portfolio")))
    candidates = hpo.draw_candidates(space, config.candidate_count, seed)

    all_datasets = list(meta.all_datasets)
    replay_dir = config.out_dir
    if config.evaluator.startswith("replay:"):
        # an external stored table replaces live training entirely
        evaluator = _replay_from(config, space)
        grid = portfolio_mod.evaluate_candidate_grid(all_datasets, candidates, evaluator)
    else:
        grid = _evaluate_grid(config, all_datasets, candidates)
    portfolio_mod.save_grid(
        all_datasets, candidates, grid, replay_dir / "grid.csv", replay_dir / "candidates.json"
    )

    replay = portfolio_mod.ReplayEvaluator.from_grid(all_datasets, candidates, grid)
    pf, base = portfolio_mod.select_portfolio(
        list(meta.meta_train), space, config.portfolio_size, config.candidate_count, replay, seed
    )
    portfolio_mod.save_portfolio(pf, config.out_dir / "portfolio.json")
    portfolio_mod.save_landmarker_csv(base.vectors, config.out_dir / "landmarkers_train.csv")

    valid_vectors = {}
    name_to_row = {ds.name: i for i, ds in enumerate(all_datasets)}
    winner_cols = [candidates.index(c) for c in pf.configs]
    for ds in meta.meta_valid:
        row = grid[name_to_row[ds.name], winner_cols]
        valid_vectors[ds.name] = portfolio_mod.LandmarkerVector(row.copy(), ds.name)
    portfolio_mod.save_landmarker_csv(valid_vectors, config.out_dir / "landmarkers_valid.csv")
    log.info("portfolio of %d configs selected from %d candidates", pf.size, len(candidates))


def _load_portfolio_artifacts(config: ExperimentConfig):
    pf = portfolio_mod.load_portfolio(config.out_dir / "portfolio.json")
    train_vectors = portfolio_mod.load_landmarker_csv(config.out_dir / "landmarkers_train.csv")
    base = portfolio_mod.LandmarkerBase(pf, train_vectors)
    valid_vectors = portfolio_mod.load_landmarker_csv(config.out_dir / "landmarkers_valid.csv")
    return pf, base, valid_vectors


def _replay_from(config: ExperimentConfig, space) -> portfolio_mod.ReplayEvaluator:
    spec = config.evaluator
    replay_dir = config.out_dir if spec in ("replay", "gbt") else Path(spec.split(":", 1)[1])
    names, candidates, grid = portfolio_mod.load_grid(
        replay_dir / "grid.csv", replay_dir / "candidates.json"
    )
    return portfolio_mod.ReplayEvaluator.from_grid(
        names, candidates, grid, space=space, fallback=True
    )


# ---------------------------------------------------------------------------
# train
# ---------------------------------------------------------------------------


def cmd_train(config: ExperimentConfig, objective: str) -> Path:
    meta = data_mod.load_metadataset(config.metadataset_dir)
    base = None
    if objective in ("metric", "reconstruction"):
        _, base, _ = _load_portfolio_artifacts(config)
    settings = config.train_settings(objective)
    params, history = training.train_encoder(meta, base, settings)
    ckpt = config.out_dir / f"checkpoint_{objective}.json"
    save_checkpoint(params, ckpt)
    lines = ["step,train_loss,valid_loss"]
    lines += [f"{h.step},{repr(h.train_loss)},{repr(h.valid_loss)}" for h in history]
    atomic_write_text(config.out_dir / f"history_{objective}.csv", "\n".join(lines) + "\n")
    return ckpt


# ---------------------------------------------------------------------------
# evaluate
# ---------------------------------------------------------------------------


def _strategy_selector(
    key: str,
    config: ExperimentConfig,
    space,
    pf,
    base,
    valid_vectors,
    meta,
):
    """Returns fn(ds, seed) -> list of warm-start configs."""
    k = config.warmstart_size

    if key == "none":
        return lambda ds, seed: warmstart.select_no_warmstart(
            space, k, np.random.default_rng(stable_child_seed(seed, "none", ds.name))
        )
    if key == "random_portfolio":
        return lambda ds, seed: warmstart.select_random_portfolio(
            pf, k, np.random.default_rng(stable_child_seed(seed, "rp", ds.name))
        )
    if key == "rank":
        fixed = warmstart.select_rank(base, k)
        return lambda ds, seed: fixed
    if key == "landmarkers":
        rep_base = warmstart.landmarker_representation_base(base)
        return lambda ds, seed: warmstart.select_landmarker_oracle(
            valid_vectors[ds.name], rep_base, k
        )
    if key.startswith("knn_encoder:"):
        ckpt_name = key.split(":", 1)[1]
        ckpt_path = Path(ckpt_name)
        if not ckpt_path.is_absolute():
            ckpt_path = config.out_dir / ckpt_path
        if not ckpt_path.exists():
            raise CliError(f"strategy {key!r}: missing checkpoint {ckpt_path}")
        params = load_checkpoint(ckpt_path)
        mapper = (
            evaluation.prediction_map if params.config.head_widths else evaluation.representation_map
        )
        rep_base = warmstart.RepresentationBase(mapper(params, meta.meta_train), base)
        target_reprs = mapper(params, meta.meta_valid)
        return lambda ds, seed: warmstart.select_knn(target_reprs[ds.name], rep_base, k)
    raise CliError(f"unknown strategy {key!r}")


def _correlation_entries(config: ExperimentConfig, meta, valid_vectors) -> list[dict]:
    cfg = config.correlation_config()
    entries = []
    specs = [
        ("baseline", "repr"),
        ("metric", "repr"),
        ("reconstruction", "repr"),
        ("reconstruction", "pred"),
    ]
    for objective, kind in specs:
        ckpt = config.out_dir / f"checkpoint_{objective}.json"
        if not ckpt.exists():
            log.warning("skipping correlations for %s: no checkpoint", objective)
            continue
        params = load_checkpoint(ckpt)
        if kind == "pred":
            mean, std = evaluation.distance_correlation_pred(
                params, meta.meta_valid, valid_vectors, cfg
            )
        else:
            source = (
                evaluation.prediction_map(params, meta.meta_valid)
                if params.config.head_widths
                else params
            )
            mean, std = evaluation.distance_correlation_repr(
                source, meta.meta_valid, valid_vectors, cfg
            )
        entries.append({"encoder": objective, "kind": kind, "mean": mean, "std": std})
    return entries


def cmd_evaluate(config: ExperimentConfig) -> dict:
    meta = data_mod.load_metadataset(config.metadataset_dir)
    pf, base, valid_vectors = _load_portfolio_artifacts(config)
    space = hpo.SearchSpace.default()
    evaluator = (
        portfolio_mod.gbt_evaluator if config.evaluator == "gbt" else _replay_from(config, space)
    )

    strategies = config.strategies or config.default_strategies()
    traces: dict[tuple[str, str, int], hpo.OptimizationTrace] = {}
    for key in strategies:
        selector = _strategy_selector(key, config, space, pf, base, valid_vectors, meta)
        for ds in meta.meta_valid:
            for seed in config.hpo_seeds:
                configs = selector(ds, seed)
                trace = hpo.run_hpo(
                    ds,
                    configs,
                    config.budget,
                    evaluator,
                    seed=stable_child_seed(seed, "hpo", key, ds.name),
                    space=space,
                    strategy=key,
                )
                traces[(key, ds.name, seed)] = trace
        log.info("strategy %s: %d traces", key, len(meta.meta_valid) * len(config.hpo_seeds))

    result = evaluation.ExperimentResult(
        traces=traces,
        strategies=list(strategies),
        dataset_names=[ds.name for ds in meta.meta_valid],
        seeds=config.hpo_seeds,
        warmstart_size=config.warmstart_size,
        alpha=config.alpha,
        correlations=_correlation_entries(config, meta, valid_vectors),
        settings={
            "budget": config.budget,
            "warmstart": config.warmstart_size,
            "evaluator": config.evaluator,
            "portfolio_size": pf.size,
            "seed": config.seed,
        },
    )
    report_dir = config.out_dir / "report"
    paths = evaluation.export_report(result, report_dir)

    traces_dir = config.out_dir / "traces"
    for (key, name, seed), trace in sorted(traces.items()):
        hpo.save_trace(trace, traces_dir / f"{key}__{name}__{seed}.csv")
    return paths


# ---------------------------------------------------------------------------
# report
# ---------------------------------------------------------------------------


def cmd_report(config: ExperimentConfig) -> None:
    report_dir = config.out_dir / "report"
    bundle = [report_dir / n for n in ("adtm.csv", "cd.json", "correlations.json", "manifest.json")]
    missing = [str(p) for p in bundle if not p.exists()]
    if missing:
        raise CliError(f"report bundle incomplete; missing {missing}")
    try:
        from hporeport import render  # secondary plotting package, optional
    except ImportError:
        print("plotting package unavailable; report bundle files:")
        for p in bundle:
            print(f"  {p}")
        return
    figures = render.render_bundle(report_dir, report_dir)
    for fig in figures:
        print(f"  {fig}")


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="metahpo",
        description="Landmarker-aligned dataset encoders for warm-starting Bayesian HPO.",
    )
    parser.add_argument("command", choices=["ingest", "portfolio", "train", "evaluate", "report"])
    parser.add_argument("--config", required=True, help="path to the experiment JSON config")
    parser.add_argument("--objective", help="objective for `train` (baseline|metric|reconstruction)")
    parser.add_argument("--seed", type=int, help="override the master seed")
    parser.add_argument("--workers", type=int, help="override worker count")
    parser.add_argument("--out", help="override the output directory")
    parser.add_argument("-v", "--verbose", action="store_true")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        config = ExperimentConfig.from_file(args.config)
        if args.seed is not None:
            config.seed = args.seed
        if args.workers is not None:
            config.workers = args.workers
        if args.out is not None:
            config.out_dir = Path(args.out)
        config.out_dir.mkdir(parents=True, exist_ok=True)

        if args.command == "ingest":
            cmd_ingest(config)
        elif args.command == "portfolio":
            cmd_portfolio(config)
        elif args.command == "train":
            if not args.objective:
                for objective in training.OBJECTIVES:
                    cmd_train(config, objective)
            else:
                cmd_train(config, args.objective)
        elif args.command == "evaluate":
            cmd_evaluate(config)
        elif args.command == "report":
            cmd_report(config)
    except Exception as exc:  # noqa: BLE001 - single diagnostic line contract
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
