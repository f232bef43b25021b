"""Survival prognostication toolkit.

A fine-tunable parametric baseline, random survival forests, Cox-boosted
trees, convex ensembles of the three, and calibration-aware evaluation
(integrated calibration index, inverse-probability-of-censoring-weighted
AUC), with Monte Carlo SHAP explanations and smoothed-bootstrap
rebalancing.
"""

__version__ = "0.1.0"

from ._kernels import BACKEND  # noqa: E402  (compiled or pure-Python tree kernels)
