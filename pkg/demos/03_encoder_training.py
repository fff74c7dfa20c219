"""Walkthrough: training the metric-learning encoder.

Builds a landmarker base, trains the encoder whose embedding distances
track landmarker distances, and reports the validation-loss trajectory and
the distance correlation before and after training.
"""

import numpy as np

from metahpo import data, evaluation, hpo, portfolio, training
from metahpo.encoder import EncoderConfig, init_params

meta = data.generate_synthetic_metadataset(16, seed=11)
space = hpo.SearchSpace.default()
pf, base = portfolio.select_portfolio(
    list(meta.meta_train), space, k=4, candidate_count=10,
    evaluator=portfolio.gbt_evaluator, seed=2,
)

settings = training.TrainSettings(
    objective="metric",
    steps=300,
    pairs_per_step=8,
    rows_range=(24, 64),
    learning_rate=5e-3,
    eval_every=50,
    encoder_config=EncoderConfig(),
    seed=0,
)
params, history = training.train_encoder(meta, base, settings)

print("validation loss trajectory:")
for row in history:
    print(f"  step {row.step:4d}: train {row.train_loss:.5f}  valid {row.valid_loss:.5f}")

lands = {name: base.vector_for(name) for name in base.names}
cfg = evaluation.CorrelationConfig(repetitions=5, pairs=200, seed=0)
datasets = list(meta.meta_train)
before, _ = evaluation.distance_correlation_repr(
    init_params(settings.encoder_config, seed=99), datasets, lands, cfg
)
after, _ = evaluation.distance_correlation_repr(params, datasets, lands, cfg)
print(f"\ndistance correlation on meta-train: untrained {before:.3f} -> trained {after:.3f}")
