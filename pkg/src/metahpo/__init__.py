"""Landmarker-aligned dataset encoders for warm-starting Bayesian HPO.

The package covers the full pipeline: dataset preprocessing and synthetic
corpora (`data`), a built-in boosted-trees learner and ROC AUC (`gbt`),
permutation-invariant dataset encoders with reverse-mode gradients
(`encoder`, `autodiff`), the three training objectives (`training`),
portfolio construction and landmarkers (`portfolio`), Gaussian-process
hyperparameter optimization (`hpo`), warm-start selection strategies
(`warmstart`), the evaluation protocols (`evaluation`), and a subcommand
CLI (`cli`).
"""

__version__ = "0.1.0"
