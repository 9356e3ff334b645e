"""Semi-supervised fuzzy C-means labelling.

A handful of trajectories are labelled by unambiguous voltage rules; those
rows are locked to one-hot memberships and seed the cluster centres. The
remaining memberships and the centres are then updated alternately until
memberships stop moving.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError

UNLABELED = -1
STABLE, UNSTABLE = 0, 1


@dataclass
class LabelRules:
    """Thresholds of the rule-based seed labels, in pu and seconds."""

    stable_floor: float = 0.9
    unstable_ceiling: float = 0.7
    settle: float = 0.08
    # final-voltage criterion used for the full engineering label set
    recovered_floor: float = 0.8
    tail: float = 1.0


def seed_labels(u_post: np.ndarray, dt: float, rules: LabelRules | None = None) -> np.ndarray:
    """Rule labels from post-clearing voltage trajectories.

    ``u_post`` has shape (samples, time, buses). Stable when no bus drops
    below ``stable_floor`` after ``settle`` seconds; unstable when every bus
    falls below ``unstable_ceiling`` and never comes back; otherwise
    unlabelled.
    """
    rules = rules or LabelRules()
    u = np.asarray(u_post, dtype=np.float64)
    if u.ndim == 2:
        u = u[None]
    start = int(round(rules.settle / dt))
    stable = np.all(u[:, start:, :] >= rules.stable_floor, axis=(1, 2))
    below = u < rules.unstable_ceiling
    # once below the ceiling a bus must stay there: a later True->False flip means recovery
    recovered = np.any(below[:, :-1, :] & ~below[:, 1:, :], axis=1)
    unstable = np.all(below[:, -1, :] & ~recovered, axis=1)
    labels = np.full(len(u), UNLABELED)
    labels[stable] = STABLE
    labels[unstable] = UNSTABLE
    return labels


def engineering_labels(u_post: np.ndarray, dt: float, rules: LabelRules | None = None) -> np.ndarray:
    """Complete label set from rules alone.

    Rule labels where a rule fires; elsewhere unstable iff the bus-average
    voltage over the final ``tail`` seconds stays below ``recovered_floor``.
    """
    rules = rules or LabelRules()
    u = np.asarray(u_post, dtype=np.float64)
    labels = seed_labels(u, dt, rules)
    n_tail = max(1, int(round(rules.tail / dt)))
    final = u[:, -n_tail:, :].mean(axis=(1, 2))
    free = labels == UNLABELED
    labels[free] = np.where(final[free] < rules.recovered_floor, UNSTABLE, STABLE)
    return labels


@dataclass
class ClusterState:
    n_clusters: int = 2
    fuzzifier: float = 2.0
    tol: float = 1e-5
    max_iter: int = 300

    def __post_init__(self):
        if self.n_clusters < 2:
            raise ConfigurationError("need at least two clusters")
        if self.fuzzifier <= 1:
            raise ConfigurationError("fuzzifier must exceed 1")
        if self.tol <= 0:
            raise ConfigurationError("convergence threshold must be positive")


@dataclass
class SFCMResult:
    memberships: np.ndarray
    centers: np.ndarray
    locked: np.ndarray
    objective: list = field(default_factory=list)
    n_iter: int = 0
    converged: bool = False


def _sq_distances(x: np.ndarray, centers: np.ndarray) -> np.ndarray:
    diff = x[:, None, :] - centers[None, :, :]
    return np.einsum("ijk,ijk->ij", diff, diff)


def memberships(x: np.ndarray, centers: np.ndarray, fuzzifier: float) -> np.ndarray:
    """u_ij = 1 / sum_s (d_ij / d_is)^(2/(l-1)).

    A sample sitting exactly on one or more centres gets its membership
    split evenly over those centres.
    """
    d2 = _sq_distances(x, centers)
    zero = d2 == 0
    u = np.empty_like(d2)
    hit = zero.any(axis=1)
    if np.any(~hit):
        p = 1.0 / (fuzzifier - 1.0)
        # (d_ij / d_is)^(2/(l-1)) == (d2_ij / d2_is)^(1/(l-1))
        ratio = (d2[~hit, :, None] / d2[~hit, None, :]) ** p
        u[~hit] = 1.0 / ratio.sum(axis=2)
    if np.any(hit):
        z = zero[hit].astype(np.float64)
        u[hit] = z / z.sum(axis=1, keepdims=True)
    return u


def update_centers(x: np.ndarray, u: np.ndarray, fuzzifier: float) -> np.ndarray:
    w = u ** fuzzifier
    return (w.T @ x) / w.sum(axis=0)[:, None]


def objective(x: np.ndarray, u: np.ndarray, centers: np.ndarray, fuzzifier: float) -> float:
    return float(np.sum((u ** fuzzifier) * _sq_distances(x, centers)))


def sfcm_fit(x: np.ndarray, partial_labels, state: ClusterState | None = None) -> SFCMResult:
    """Fit memberships with labelled rows locked to their one-hot class."""
    state = state or ClusterState()
    x = np.asarray(x, dtype=np.float64)
    x = x.reshape(len(x), -1)
    labels = np.asarray(partial_labels, dtype=int)
    if len(labels) != len(x):
        raise ConfigurationError("label vector length differs from sample count")
    if x.shape[1] < 1:
        raise ConfigurationError("features must have at least one dimension")
    locked = labels != UNLABELED
    c = state.n_clusters
    for k in range(c):
        if not np.any(labels == k):
            raise ConfigurationError(f"no labelled sample for class {k}")
    onehot = np.zeros((locked.sum(), c))
    onehot[np.arange(locked.sum()), labels[locked]] = 1.0

    centers = np.stack([x[labels == k].mean(axis=0) for k in range(c)])
    u = np.zeros((len(x), c))
    u[locked] = onehot
    free = ~locked
    result = SFCMResult(memberships=u, centers=centers, locked=locked)
    if not free.any():
        result.centers = update_centers(x, u, state.fuzzifier)
        result.objective.append(objective(x, u, result.centers, state.fuzzifier))
        result.converged = True
        return result

    u[free] = memberships(x[free], centers, state.fuzzifier)
    for it in range(1, state.max_iter + 1):
        centers = update_centers(x, u, state.fuzzifier)
        new_free = memberships(x[free], centers, state.fuzzifier)
        change = np.max(np.abs(new_free - u[free]))
        u[free] = new_free
        result.objective.append(objective(x, u, centers, state.fuzzifier))
        result.n_iter = it
        if change < state.tol:
            result.converged = True
            break
    result.memberships, result.centers = u, centers
    return result


def harden(u: np.ndarray) -> np.ndarray:
    """Crisp labels by argmax; exact ties go to the unstable class."""
    u = np.asarray(u)
    if u.shape[1] == 2:
        return np.where(u[:, UNSTABLE] >= u[:, STABLE], UNSTABLE, STABLE)
    best = u.max(axis=1, keepdims=True)
    # highest index among the maxima
    return u.shape[1] - 1 - np.argmax((u == best)[:, ::-1], axis=1)
