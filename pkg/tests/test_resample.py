import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.optimize import linprog

from stvsa.data import Dataset
from stvsa.errors import ConfigurationError
from stvsa.resample import (
    ResamplePlan,
    adasyn,
    adasyn_weights,
    largest_remainder,
    resample,
    ros,
    smote,
)


def make(x_maj, x_min):
    x = np.concatenate([x_maj, x_min]).astype(float)
    y = np.r_[np.zeros(len(x_maj), int), np.ones(len(x_min), int)]
    return Dataset.from_arrays(x.reshape(len(x), 1, -1), y)


def imbalanced(n_maj=60, n_min=8, dim=3, seed=0):
    rng = np.random.default_rng(seed)
    return make(rng.normal(size=(n_maj, dim)), rng.normal(2.0, 0.3, size=(n_min, dim)))


def segment_residual(p, a, b):
    ab = b - a
    t = np.clip((p - a) @ ab / max(ab @ ab, 1e-300), 0, 1)
    return np.linalg.norm(p - (a + t * ab))


def in_hull(points, hull):
    """LP feasibility: p = sum lambda_i h_i, lambda >= 0, sum lambda = 1."""
    a_eq = np.vstack([hull.T, np.ones(len(hull))])
    ok = []
    for p in points:
        res = linprog(np.zeros(len(hull)), A_eq=a_eq, b_eq=np.r_[p, 1.0], bounds=(0, None), method="highs")
        ok.append(res.status == 0)
    return np.array(ok)


def real_untouched(before: Dataset, after: Dataset):
    n = len(before)
    return (np.array_equal(after.x[:n], before.x) and np.array_equal(after.labels[:n], before.labels)
            and not after.synthetic[:n].any() and after.synthetic[n:].all())


@pytest.mark.parametrize("method", ["ros", "smote", "adasyn"])
def test_counts_and_flags(method):
    train = imbalanced()
    out = resample(train, ResamplePlan(method=method, k=3, seed=1))
    c = out.counts()
    assert abs(c["unstable"] - c["stable"]) <= 1
    assert real_untouched(train, out)
    assert np.all(out.labels[len(train):] == 1)


@pytest.mark.parametrize("method", ["ros", "smote", "adasyn"])
def test_seed_deterministic(method):
    train = imbalanced()
    a = resample(train, ResamplePlan(method=method, k=3, seed=4))
    b = resample(train, ResamplePlan(method=method, k=3, seed=4))
    assert np.array_equal(a.x, b.x)


@settings(max_examples=25, deadline=None)
@given(st.integers(8, 80), st.integers(2, 7), st.floats(0.2, 1.0))
def test_ratio_within_one(n_maj, n_min, ratio):
    train = imbalanced(n_maj, n_min, seed=n_maj)
    out = smote(train, ResamplePlan(k=1, target_ratio=ratio))
    c = out.counts()
    target = max(n_min, round(ratio * n_maj))
    assert abs(c["unstable"] - target) <= 1


def test_ros_single_point():
    train = make(np.zeros((4, 2)), np.array([[3.0, 4.0]]))
    out = ros(train, ResamplePlan(method="ros"))
    assert len(out) == 8
    assert np.all(out.flat()[5:] == [3.0, 4.0])


def test_ros_copies_real_points():
    train = imbalanced()
    out = ros(train, ResamplePlan(method="ros", seed=2))
    real = {tuple(r) for r in train.flat()[train.labels == 1]}
    assert all(tuple(r) in real for r in out.flat()[len(train):])


def test_ros_empty_minority():
    train = make(np.zeros((4, 2)), np.zeros((0, 2)))
    with pytest.raises(ConfigurationError):
        ros(train, ResamplePlan(method="ros"))


def test_smote_diagonal():
    train = make(np.zeros((6, 2)) - 5, np.array([[0.0, 0.0], [1.0, 1.0]]))
    syn = smote(train, ResamplePlan(k=1)).flat()[len(train):]
    assert len(syn) == 4
    assert np.all(syn[:, 0] == syn[:, 1]) and np.all((syn >= 0) & (syn <= 1))


def test_smote_on_segments_and_in_hull():
    rng = np.random.default_rng(3)
    x_min = rng.normal(5.0, 0.2, size=(5, 2))
    train = make(rng.normal(size=(40, 2)), x_min)
    syn = smote(train, ResamplePlan(k=4, seed=3)).flat()[len(train):]
    for p in syn:
        best = min(segment_residual(p, a, b) for a in x_min for b in x_min)
        assert best <= 1e-9
    assert in_hull(syn, x_min).all()


def test_smote_needs_more_than_k():
    train = make(np.zeros((6, 2)), np.ones((3, 2)))
    with pytest.raises(ConfigurationError):
        smote(train, ResamplePlan(k=3))


def test_plan_validation():
    with pytest.raises(ConfigurationError):
        ResamplePlan(method="tomek")
    with pytest.raises(ConfigurationError):
        ResamplePlan(k=0)


def test_already_balanced_is_unchanged():
    train = make(np.zeros((3, 2)), np.ones((3, 2)))
    out = smote(train, ResamplePlan(k=1))
    assert len(out) == len(train) and not out.synthetic.any()


class TestAdasyn:
    def test_isolated_minority_gets_zero_weight(self):
        # minority point 0 sits among minority, point 3 among majority
        x_min = np.array([[0.0], [0.1], [0.2], [10.0]])
        x_maj = np.array([[10.1], [10.2], [10.3]])
        x_all = np.concatenate([x_min, x_maj])
        w = adasyn_weights(x_min, x_all, np.r_[np.zeros(4, bool), np.ones(3, bool)], k=2)
        assert w[0] == 0.0
        assert w[3] == w.max()

    def test_one_to_four_split(self):
        # two minority points with majority fractions 0.2 and 0.8 among k = 5
        x_min = np.array([[0.0], [100.0]])
        maj_near_a = np.array([[0.5]])
        min_near_a = np.array([[0.1], [0.2], [0.3], [0.4]])
        maj_near_b = np.array([[100.1], [100.2], [100.3], [100.4]])
        min_near_b = np.array([[100.5]])
        x_all = np.concatenate([x_min, maj_near_a, min_near_a, maj_near_b, min_near_b])
        is_maj = np.r_[False, False, True, [False] * 4, [True] * 4, False]
        w = adasyn_weights(x_min, x_all, is_maj, k=5)
        np.testing.assert_allclose(w, [0.2, 0.8])
        assert largest_remainder(w, 50).tolist() == [10, 40]

    def test_largest_remainder(self):
        assert largest_remainder(np.array([1 / 3, 1 / 3, 1 / 3]), 10).tolist() == [4, 3, 3]
        assert largest_remainder(np.array([0.5, 0.5]), 0).tolist() == [0, 0]

    def test_synthetics_on_segments(self):
        train = imbalanced(seed=9)
        x_min = train.flat()[train.labels == 1]
        syn = adasyn(train, ResamplePlan(method="adasyn", k=3)).flat()[len(train):]
        for p in syn:
            assert min(segment_residual(p, a, b) for a in x_min for b in x_min) <= 1e-9

    def test_uniform_fallback(self):
        x_min = np.array([[0.0], [0.1], [0.2]])
        w = adasyn_weights(x_min, x_min, np.zeros(3, bool), k=2)
        np.testing.assert_allclose(w, 1 / 3)
