"""Walkthrough: portfolio selection and the landmarker base.

Clusters meta-train datasets on simple meta-features, runs the per-cluster
tournament over a random candidate pool, and prints the resulting portfolio
with each dataset's landmarker vector.
"""

import numpy as np

from metahpo import data, hpo, portfolio

meta = data.generate_synthetic_metadataset(12, seed=3)
space = hpo.SearchSpace.default()

pf, base = portfolio.select_portfolio(
    list(meta.meta_train),
    space,
    k=4,
    candidate_count=12,
    evaluator=portfolio.gbt_evaluator,
    seed=5,
)

print("portfolio (one winner per meta-feature cluster):")
for i, (config, (cluster, mean_auc)) in enumerate(zip(pf.configs, pf.provenance)):
    print(f"  [{i}] cluster {cluster}, cluster-mean AUC {mean_auc:.3f}, "
          f"n_estimators={config.n_estimators}, eta={config.eta:.4f}, depth={config.max_depth}")

print("\nlandmarker vectors (test AUC of each portfolio config):")
for name in base.names:
    vec = base.vector_for(name)
    star = base.best_index(name)
    cells = " ".join(
        f"*{v:.3f}" if j == star else f" {v:.3f}" for j, v in enumerate(vec)
    )
    print(f"  {name}: {cells}")
print("(* marks each dataset's best configuration)")
