"""Smoothed-bootstrap oversampling toward outcome balance.

Synthetic records copy a seed record of the drawn class and jitter its
observed numeric fields with class-conditional Gaussian kernels. Categorical
levels, missingness masks, times and events are copied unchanged.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .cohort import Cohort
from .errors import ConfigError, SizingError

NUMERIC = ("age", "size_mm", "node_count")
_POSITIVE_FLOOR = 1e-3


@dataclass(frozen=True)
class RoseConfig:
    proportion: float = 0.5  # target share of the minority outcome class
    size: Optional[int] = None  # output size; None keeps the input size
    multiplier: float = 1.0  # kernel shrink factor; 0 gives a plain resample
    seed: int = 0

    def __post_init__(self):
        if not 0 < self.proportion < 1:
            raise ConfigError("proportion must lie in (0, 1)")
        if self.multiplier < 0:
            raise ConfigError("multiplier must be nonnegative")
        if self.size is not None and self.size < 1:
            raise ConfigError("size must be positive")


def bandwidths(c: Cohort, index, multiplier: float) -> dict:
    """Silverman-style per-field bandwidths within one class."""
    d = len(NUMERIC)
    n = len(index)
    factor = multiplier * (4.0 / ((d + 2) * n)) ** (1.0 / (d + 4))
    out = {}
    for name in NUMERIC:
        obs = c.values[name][index][c.present[name][index]]
        out[name] = factor * float(np.std(obs, ddof=1)) if len(obs) > 1 else 0.0
    return out


def rose_resample(c: Cohort, cfg: RoseConfig = RoseConfig()) -> Cohort:
    """Draw ``cfg.size`` synthetic records with the minority class at ``cfg.proportion``."""
    n = len(c)
    size = n if cfg.size is None else int(cfg.size)
    pos = np.flatnonzero(c.event == 1)
    neg = np.flatnonzero(c.event == 0)
    if len(pos) == 0 or len(neg) == 0:
        raise SizingError("rebalancing needs both outcome classes")
    minority, majority = (pos, neg) if len(pos) <= len(neg) else (neg, pos)
    rng = np.random.default_rng(cfg.seed)

    is_min = rng.random(size) < cfg.proportion
    seeds = np.empty(size, dtype=np.int64)
    seeds[is_min] = minority[rng.integers(0, len(minority), int(is_min.sum()))]
    seeds[~is_min] = majority[rng.integers(0, len(majority), int((~is_min).sum()))]

    out = c.subset(seeds)
    if cfg.multiplier > 0:
        for cls_index, mask in ((minority, is_min), (majority, ~is_min)):
            h = bandwidths(c, cls_index, cfg.multiplier)
            for name in NUMERIC:
                noise = rng.standard_normal(int(mask.sum())) * h[name]
                jitter = np.where(out.present[name][mask], noise, 0.0)
                out.values[name][mask] = out.values[name][mask] + jitter
        for name in ("age", "size_mm"):
            out.values[name] = np.maximum(out.values[name], _POSITIVE_FLOOR)
        out.values["node_count"] = np.maximum(np.round(out.values["node_count"]), 0.0)
    out.ids = np.arange(size, dtype=np.int64)
    out.provenance = (c.provenance + " rebalanced").strip()
    return out
