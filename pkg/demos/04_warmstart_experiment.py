"""Walkthrough: the warm-start comparison on a replay table.

Builds a candidate grid once, then replays it to compare warm-start
strategies feeding Bayesian optimization, summarized as ADTM values at the
end of the warm-start phase and at the end of the budget.
"""

import numpy as np

from metahpo import data, evaluation, hpo, portfolio, warmstart
from metahpo.util import stable_child_seed

meta = data.generate_synthetic_metadataset(16, seed=29)
space = hpo.SearchSpace.default()
candidates = hpo.draw_candidates(space, 16, seed=4)
all_datasets = list(meta.all_datasets)
grid = portfolio.evaluate_candidate_grid(all_datasets, candidates, portfolio.gbt_evaluator)
replay = portfolio.ReplayEvaluator.from_grid(
    all_datasets, candidates, grid, space=space, fallback=True
)

pf, base = portfolio.select_portfolio(
    list(meta.meta_train), space, k=5, candidate_count=16,
    evaluator=portfolio.ReplayEvaluator.from_grid(all_datasets, candidates, grid), seed=4,
)
row_of = {ds.name: i for i, ds in enumerate(all_datasets)}
cols = [candidates.index(c) for c in pf.configs]
valid_landmarks = {
    ds.name: portfolio.LandmarkerVector(grid[row_of[ds.name], cols], ds.name)
    for ds in meta.meta_valid
}
oracle_base = warmstart.landmarker_representation_base(base)

budget, n_warm, seeds = 12, 4, [0, 1]
traces = []
for strategy in ("none", "random_portfolio", "rank", "landmarkers"):
    for ds in meta.meta_valid:
        for seed in seeds:
            rng = np.random.default_rng(stable_child_seed(seed, strategy, ds.name))
            if strategy == "none":
                ws = warmstart.select_no_warmstart(space, n_warm, rng)
            elif strategy == "random_portfolio":
                ws = warmstart.select_random_portfolio(pf, n_warm, rng)
            elif strategy == "rank":
                ws = warmstart.select_rank(base, n_warm)
            else:
                ws = warmstart.select_landmarker_oracle(valid_landmarks[ds.name], oracle_base, n_warm)
            traces.append(
                hpo.run_hpo(ds, ws, budget, replay,
                            seed=stable_child_seed(seed, "hpo", strategy, ds.name),
                            space=space, strategy=strategy)
            )

bounds = evaluation.objective_bounds(traces)
print(f"ADTM (mean scaled regret, {len(meta.meta_valid)} validation datasets x {len(seeds)} seeds)")
print("strategy".ljust(20) + f"@ t={n_warm}".rjust(10) + f"@ t={budget}".rjust(10))
for strategy in ("landmarkers", "rank", "random_portfolio", "none"):
    group = [t for t in traces if t.strategy == strategy]
    curve = evaluation.adtm(group, bounds)
    print(strategy.ljust(20) + f"{curve[n_warm - 1]:10.4f}{curve[budget - 1]:10.4f}")
