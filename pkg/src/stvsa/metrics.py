"""Evaluation indicators: classification scores, silhouette, distribution distances.

Label convention throughout the package: 0 = stable, 1 = unstable.
Unstable is the positive class for MCC, G-mean, Mis and Fal; F1 is scored
on the stable class. Mis and Fal are fractions of all evaluated samples.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.optimize import linear_sum_assignment
from scipy.spatial.distance import cdist, pdist

from .errors import ConfigurationError, NumericFault

STABLE, UNSTABLE = 0, 1


@dataclass(frozen=True)
class ConfusionMatrix:
    """Counts indexed (predicted, actual); ``n_su`` = predicted stable, actually unstable."""

    n_ss: int
    n_su: int
    n_us: int
    n_uu: int

    def __post_init__(self):
        if min(self.n_ss, self.n_su, self.n_us, self.n_uu) < 0:
            raise ConfigurationError("confusion-matrix counts must be non-negative")

    @property
    def total(self) -> int:
        return self.n_ss + self.n_su + self.n_us + self.n_uu

    @classmethod
    def from_labels(cls, actual, predicted) -> "ConfusionMatrix":
        a = np.asarray(actual, dtype=int)
        p = np.asarray(predicted, dtype=int)
        if a.shape != p.shape:
            raise ConfigurationError(f"label arrays differ in shape: {a.shape} vs {p.shape}")
        return cls(
            n_ss=int(np.sum((p == STABLE) & (a == STABLE))),
            n_su=int(np.sum((p == STABLE) & (a == UNSTABLE))),
            n_us=int(np.sum((p == UNSTABLE) & (a == STABLE))),
            n_uu=int(np.sum((p == UNSTABLE) & (a == UNSTABLE))),
        )


def _ratio(num: float, den: float):
    return None if den == 0 else num / den


def classification_metrics(cm: ConfusionMatrix) -> dict:
    """ACC, MCC, F1, Mis, Fal and G-mean; undefined values come back as ``None``."""
    n = cm.total
    if n <= 0:
        raise ConfigurationError("confusion matrix is empty")
    tp, tn, fp, fn = cm.n_uu, cm.n_ss, cm.n_us, cm.n_su
    mcc_den = math.sqrt((tp + fp) * (tp + fn) * (tn + fp) * (tn + fn))
    tpr = _ratio(tp, tp + fn)
    tnr = _ratio(tn, tn + fp)
    precision = _ratio(cm.n_ss, cm.n_ss + cm.n_su)
    recall = _ratio(cm.n_ss, cm.n_ss + cm.n_us)
    if precision is None or recall is None or precision + recall == 0:
        f1 = None
    else:
        f1 = 2 * precision * recall / (precision + recall)
    return {
        "acc": (tp + tn) / n,
        "mcc": _ratio(tp * tn - fp * fn, mcc_den),
        "f1": f1,
        "mis": fn / n,
        "fal": fp / n,
        "gmean": None if tpr is None or tnr is None else math.sqrt(tpr * tnr),
    }


@dataclass
class EvalReport:
    confusion: ConfusionMatrix
    acc: float
    mcc: float | None
    f1: float | None
    mis: float
    fal: float
    gmean: float | None
    wd: float | None = None
    mmd: float | None = None
    fid: float | None = None
    metadata: dict = field(default_factory=dict)

    @classmethod
    def from_confusion(cls, cm: ConfusionMatrix, **extra) -> "EvalReport":
        return cls(confusion=cm, **classification_metrics(cm), **extra)

    def recompute(self) -> dict:
        return classification_metrics(self.confusion)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["confusion"] = asdict(self.confusion)
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_dict(cls, d: dict) -> "EvalReport":
        d = dict(d)
        d["confusion"] = ConfusionMatrix(**d["confusion"])
        return cls(**d)

    def confusion_csv(self) -> str:
        cm = self.confusion
        return ("predicted,stable_actual,unstable_actual\n"
                f"stable,{cm.n_ss},{cm.n_su}\n"
                f"unstable,{cm.n_us},{cm.n_uu}\n")


def evaluate_predictions(actual, predicted, **extra) -> EvalReport:
    return EvalReport.from_confusion(ConfusionMatrix.from_labels(actual, predicted), **extra)


# ---------------------------------------------------------------------------
# clustering quality
# ---------------------------------------------------------------------------

def silhouette(x: np.ndarray, labels: np.ndarray) -> float:
    """Mean silhouette over samples with Euclidean distances.

    A sample alone in its cluster scores 0.
    """
    x = np.asarray(x, dtype=np.float64).reshape(len(x), -1)
    labels = np.asarray(labels)
    classes = np.unique(labels)
    if len(classes) < 2:
        raise ConfigurationError("silhouette needs at least two clusters")
    dist = cdist(x, x)
    masks = [labels == c for c in classes]
    sizes = np.array([m.sum() for m in masks])
    # mean distance from every sample to every cluster (self included, fixed below)
    sums = np.stack([dist[:, m].sum(axis=1) for m in masks], axis=1)
    own = np.searchsorted(classes, labels)
    rows = np.arange(len(x))
    own_size = sizes[own]
    with np.errstate(invalid="ignore", divide="ignore"):
        a = sums[rows, own] / (own_size - 1)
        means = sums / sizes[None, :]
    means[rows, own] = np.inf
    b = means.min(axis=1)
    with np.errstate(invalid="ignore", divide="ignore"):
        s = (b - a) / np.maximum(a, b)
    s[own_size == 1] = 0.0
    s = np.nan_to_num(s, nan=0.0)
    return float(s.mean())


# ---------------------------------------------------------------------------
# distribution distances
# ---------------------------------------------------------------------------

def _as_2d(a) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    if a.ndim == 1:
        return a[:, None]
    return a.reshape(a.shape[0], -1) if a.size else a.reshape(a.shape[0], int(np.prod(a.shape[1:])))


def wasserstein_empirical(a, b, rng: np.random.Generator | None = None) -> float:
    """Exact 1-Wasserstein distance between two empirical measures.

    Equal-size sets are matched by a minimum-cost perfect matching on
    Euclidean costs; the larger set is subsampled without replacement first.
    """
    a, b = _as_2d(a), _as_2d(b)
    if len(a) == 0 or len(b) == 0:
        raise ConfigurationError("wasserstein_empirical: empty sample set")
    if len(a) != len(b):
        rng = rng or np.random.default_rng(0)
        n = min(len(a), len(b))
        if len(a) > n:
            a = a[np.sort(rng.choice(len(a), n, replace=False))]
        else:
            b = b[np.sort(rng.choice(len(b), n, replace=False))]
    cost = cdist(a, b)
    rows, cols = linear_sum_assignment(cost)
    return float(cost[rows, cols].mean())


def median_bandwidth(a, b) -> float:
    pooled = np.concatenate([_as_2d(a), _as_2d(b)])
    d = pdist(pooled)
    med = float(np.median(d)) if d.size else 1.0
    return med if med > 0 else 1.0


def mmd_rbf(a, b, bandwidth: float | None = None) -> float:
    """Unbiased squared MMD with k(x, y) = exp(-|x - y|^2 / (2 h^2)).

    ``bandwidth=None`` uses the median pairwise distance of the pooled sample.
    For two copies of the same n points the estimate is (2 / n) times the mean
    off-diagonal kernel value minus 1, so it lies in [-2 / n, 0] rather than
    at exactly 0.
    """
    a, b = _as_2d(a), _as_2d(b)
    if len(a) < 2 or len(b) < 2:
        raise ConfigurationError("mmd_rbf needs at least two samples per set")
    h = median_bandwidth(a, b) if bandwidth is None else bandwidth
    if h <= 0:
        raise ConfigurationError("mmd_rbf: bandwidth must be positive")
    gamma = 1.0 / (2.0 * h * h)

    def within(x):
        k = np.exp(-gamma * cdist(x, x, "sqeuclidean"))
        n = len(x)
        return (k.sum() - np.trace(k)) / (n * (n - 1))

    kab = np.exp(-gamma * cdist(a, b, "sqeuclidean"))
    # summing both orientations makes the estimate exactly symmetric in (a, b)
    cross = 0.5 * (kab.sum() + np.ascontiguousarray(kab.T).sum()) / (len(a) * len(b))
    return float(within(a) + within(b) - 2.0 * cross)


def frechet_from_moments(mu_a, cov_a, mu_b, cov_b) -> float:
    """|mu_a - mu_b|^2 + Tr(S_a + S_b - 2 (S_a^1/2 S_b S_a^1/2)^1/2)."""
    mu_a, mu_b = np.atleast_1d(mu_a), np.atleast_1d(mu_b)
    cov_a, cov_b = np.atleast_2d(cov_a), np.atleast_2d(cov_b)
    wa, va = np.linalg.eigh(cov_a)
    if wa.min() < -1e-8 * max(1.0, wa.max()):
        raise NumericFault("frechet distance: covariance is not positive semi-definite")
    root_a = (va * np.sqrt(np.clip(wa, 0, None))) @ va.T
    inner = root_a @ cov_b @ root_a
    wi = np.linalg.eigvalsh((inner + inner.T) / 2)
    if wi.min() < -1e-8 * max(1.0, wi.max()):
        raise NumericFault("frechet distance: covariance product is not positive semi-definite")
    diff = mu_a - mu_b
    value = diff @ diff + np.trace(cov_a) + np.trace(cov_b) - 2.0 * np.sqrt(np.clip(wi, 0, None)).sum()
    return float(max(value, 0.0))


def fid_gaussian(a, b, eps: float = 1e-6) -> float:
    """Frechet distance between Gaussian fits of two sample sets (raw features)."""
    a, b = _as_2d(a), _as_2d(b)
    if len(a) < 2 or len(b) < 2:
        raise ConfigurationError("fid_gaussian needs at least two samples per set")
    dim = a.shape[1]
    cov_a = np.cov(a, rowvar=False).reshape(dim, dim) + eps * np.eye(dim)
    cov_b = np.cov(b, rowvar=False).reshape(dim, dim) + eps * np.eye(dim)
    return frechet_from_moments(a.mean(axis=0), cov_a, b.mean(axis=0), cov_b)


def distribution_report(real, synthetic, rng: np.random.Generator | None = None,
                        max_points: int = 512) -> dict:
    """WD, MMD and FID between real and synthetic sample sets."""
    rng = rng or np.random.default_rng(0)
    real, synthetic = _as_2d(real), _as_2d(synthetic)

    def cap(x):
        return x[np.sort(rng.choice(len(x), max_points, replace=False))] if len(x) > max_points else x

    r, s = cap(real), cap(synthetic)
    return {"wd": wasserstein_empirical(r, s, rng), "mmd": mmd_rbf(r, s), "fid": fid_gaussian(r, s)}
