import numpy as np
import pytest

from topicmix.errors import DataError
from topicmix.gbdt import GradientBoostedTrees, _fit_tree


def test_single_tree_recovers_step_function():
    X = np.linspace(0, 1, 64)[:, None]
    y = np.where(X[:, 0] <= 0.5, -1.0, 2.0)
    tree = _fit_tree(X, y, np.arange(64), max_depth=1)
    pred = tree.predict(X)
    assert pred == pytest.approx(y)


def test_single_tree_axis_aligned_split_choice():
    rng = np.random.default_rng(0)
    X = rng.random((128, 3))
    y = np.where(X[:, 1] <= 0.3, 0.0, 5.0)  # only feature 1 matters
    tree = _fit_tree(X, y, np.arange(128), max_depth=1)
    assert tree.feature[0] == 1
    assert 0.25 < tree.threshold[0] < 0.35


def test_boosting_reduces_training_error():
    rng = np.random.default_rng(1)
    X = rng.random((256, 4))
    y = np.sin(4 * X[:, 0]) + X[:, 1] ** 2
    few = GradientBoostedTrees(n_trees=5, seed=0).fit(X, y)
    many = GradientBoostedTrees(n_trees=300, seed=0).fit(X, y)
    err_few = float(np.mean((few.predict(X) - y) ** 2))
    err_many = float(np.mean((many.predict(X) - y) ** 2))
    assert err_many < err_few / 5


def test_gbdt_deterministic_given_seed():
    rng = np.random.default_rng(2)
    X = rng.random((100, 3))
    y = X.sum(axis=1)
    a = GradientBoostedTrees(n_trees=50, seed=7).fit(X, y).predict(X)
    b = GradientBoostedTrees(n_trees=50, seed=7).fit(X, y).predict(X)
    assert np.array_equal(a, b)


def test_constant_target_predicts_constant():
    X = np.random.default_rng(3).random((32, 2))
    y = np.full(32, 4.5)
    model = GradientBoostedTrees(n_trees=20, seed=0).fit(X, y)
    assert model.predict(X) == pytest.approx(np.full(32, 4.5))


def test_parameter_validation():
    with pytest.raises(DataError):
        GradientBoostedTrees(n_trees=0)
    with pytest.raises(DataError):
        GradientBoostedTrees(subsample=0.0)
    with pytest.raises(DataError):
        GradientBoostedTrees().fit(np.zeros((4, 2)), np.zeros(5))
