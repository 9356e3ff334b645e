"""Classical minority oversamplers: random duplication, SMOTE and ADASYN.

Each method keeps every real sample untouched and appends flagged synthetic
minority samples until ``minority / majority`` reaches the target ratio.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial.distance import cdist

from .data import Dataset
from .errors import ConfigurationError

METHODS = ("ros", "smote", "adasyn")


@dataclass
class ResamplePlan:
    method: str = "smote"
    k: int = 5
    seed: int = 0
    target_ratio: float = 1.0

    def __post_init__(self):
        if self.method not in METHODS:
            raise ConfigurationError(f"unknown resampler {self.method!r}")
        if self.k < 1:
            raise ConfigurationError("k must be at least 1")
        if self.target_ratio <= 0:
            raise ConfigurationError("target ratio must be positive")


def n_to_generate(n_minority: int, n_majority: int, ratio: float) -> int:
    return max(0, int(round(ratio * n_majority)) - n_minority)


def _split_classes(train: Dataset):
    minority = train.minority_label()
    mask = train.labels == minority
    majority_mask = (train.labels != minority) & (train.labels >= 0)
    return minority, mask, majority_mask


def _neighbours(points: np.ndarray, pool: np.ndarray, k: int, exclude_self: bool) -> np.ndarray:
    d = cdist(points, pool)
    if exclude_self:
        np.fill_diagonal(d, np.inf)
    return np.argsort(d, axis=1, kind="stable")[:, :k]


def interpolate(base: np.ndarray, neighbour: np.ndarray, gap: np.ndarray) -> np.ndarray:
    """base + gap * (neighbour - base), one gap per row."""
    return base + gap[:, None] * (neighbour - base)


def ros_samples(x_min: np.ndarray, n_new: int, rng: np.random.Generator) -> np.ndarray:
    if len(x_min) == 0:
        raise ConfigurationError("no minority samples to duplicate")
    return x_min[rng.integers(0, len(x_min), n_new)].copy()


def smote_samples(x_min: np.ndarray, n_new: int, k: int, rng: np.random.Generator,
                  base_counts: np.ndarray | None = None) -> np.ndarray:
    """SMOTE interpolation; ``base_counts`` fixes how many samples each point seeds."""
    if len(x_min) <= k:
        raise ConfigurationError(f"minority count {len(x_min)} must exceed k={k}")
    nn = _neighbours(x_min, x_min, k, exclude_self=True)
    if base_counts is None:
        bases = rng.integers(0, len(x_min), n_new)
    else:
        bases = np.repeat(np.arange(len(x_min)), base_counts)
    picks = nn[bases, rng.integers(0, k, len(bases))]
    gaps = rng.random(len(bases))
    return interpolate(x_min[bases], x_min[picks], gaps)


def largest_remainder(weights: np.ndarray, total: int) -> np.ndarray:
    """Integer allocation of ``total`` proportional to ``weights``."""
    raw = weights * total
    counts = np.floor(raw).astype(int)
    short = total - counts.sum()
    if short > 0:
        order = np.argsort(-(raw - counts), kind="stable")
        counts[order[:short]] += 1
    return counts


def adasyn_weights(x_min: np.ndarray, x_all: np.ndarray, is_majority: np.ndarray, k: int) -> np.ndarray:
    """Fraction of majority points among each minority point's k neighbours, normalised."""
    d = cdist(x_min, x_all)
    d[d == 0] = np.inf  # a point is not its own neighbour
    nn = np.argsort(d, axis=1, kind="stable")[:, :k]
    r = is_majority[nn].mean(axis=1)
    if r.sum() == 0:
        # no minority point touches the majority class: fall back to uniform
        return np.full(len(x_min), 1.0 / len(x_min))
    return r / r.sum()


def _finish(train: Dataset, minority: int, samples: np.ndarray, tag: str) -> Dataset:
    return train.append_synthetic(samples, minority, f"{tag}_")


def ros(train: Dataset, plan: ResamplePlan) -> Dataset:
    minority, mmask, jmask = _split_classes(train)
    n_new = n_to_generate(mmask.sum(), jmask.sum(), plan.target_ratio)
    rng = np.random.default_rng(plan.seed)
    return _finish(train, minority, ros_samples(train.flat()[mmask], n_new, rng), "ros")


def smote(train: Dataset, plan: ResamplePlan) -> Dataset:
    minority, mmask, jmask = _split_classes(train)
    n_new = n_to_generate(mmask.sum(), jmask.sum(), plan.target_ratio)
    rng = np.random.default_rng(plan.seed)
    return _finish(train, minority, smote_samples(train.flat()[mmask], n_new, plan.k, rng), "smote")


def adasyn(train: Dataset, plan: ResamplePlan) -> Dataset:
    minority, mmask, jmask = _split_classes(train)
    n_new = n_to_generate(mmask.sum(), jmask.sum(), plan.target_ratio)
    x = train.flat()
    x_min = x[mmask]
    if len(x_min) <= plan.k:
        raise ConfigurationError(f"minority count {len(x_min)} must exceed k={plan.k}")
    labelled = train.labels >= 0
    weights = adasyn_weights(x_min, x[labelled], jmask[labelled], plan.k)
    counts = largest_remainder(weights, n_new)
    rng = np.random.default_rng(plan.seed)
    return _finish(train, minority, smote_samples(x_min, n_new, plan.k, rng, base_counts=counts), "adasyn")


def resample(train: Dataset, plan: ResamplePlan) -> Dataset:
    return {"ros": ros, "smote": smote, "adasyn": adasyn}[plan.method](train, plan)
