import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from edrl_mea.errors import DimensionMismatch, SingleClass, ValidationError
from edrl_mea.forest import (
    DecisionTree,
    GridSpec,
    RandomForestModel,
    build_tree,
    fit_forest,
    grid_search,
    predict_forest,
    write_score_table,
)


def _separable(n=60, N=4, seed=0):
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(n, N))
    y = (x[:, 0] + 0.5 * x[:, 1] > 0).astype(int)
    return x, y


def test_memorizes_separable_data():
    x, y = _separable()
    forest = fit_forest(x, y, 25, None, seed=0)
    assert np.array_equal(forest.predict(x), y)


def test_same_seed_byte_identical():
    x, y = _separable()
    assert fit_forest(x, y, 10, 4, 3).to_json() == fit_forest(x, y, 10, 4, 3).to_json()
    assert fit_forest(x, y, 10, 4, 3).to_json() != fit_forest(x, y, 10, 4, 4).to_json()


def test_stumps_prefer_informative_feature():
    rng = np.random.default_rng(1)
    x = rng.normal(size=(200, 4))
    y = (x[:, 2] > 0).astype(int)
    forest = fit_forest(x, y, 100, max_depth=1, seed=0, features_per_split=4)
    roots = [t.feature[0] for t in forest.trees]
    assert all(f >= 0 for f in roots)
    assert roots.count(2) > 50


def test_stumps_default_feature_subsets_split_somewhere():
    rng = np.random.default_rng(1)
    x = rng.normal(size=(200, 9))
    y = (x[:, 2] > 0).astype(int)
    forest = fit_forest(x, y, 100, max_depth=1, seed=0)
    roots = [t.feature[0] for t in forest.trees]
    assert forest.features_per_split == 3
    assert all(f >= 0 for f in roots)
    # feature 2 is a candidate in 1 - C(8,3)/C(9,3) = 1/3 of nodes and always wins there
    assert roots.count(2) == max(roots.count(f) for f in range(9))


def test_probabilities():
    x, y = _separable()
    forest = fit_forest(x, y, 20, 3, 0)
    proba = forest.predict_proba(x)
    assert np.allclose(proba.sum(axis=1), 1.0, atol=1e-12)
    label, p = predict_forest(forest, x[0])
    assert p.shape == (2,) and label in (0, 1)


def test_unanimous_trees_give_probability_one():
    x = np.arange(40.0)[:, None]
    y = (x[:, 0] >= 20).astype(int)
    forest = fit_forest(x, y, 15, None, 0)
    proba = forest.predict_proba(np.array([[-5.0], [50.0]]))
    assert proba[0, 0] == 1.0 and proba[1, 1] == 1.0


def test_tree_order_invariance():
    x, y = _separable()
    forest = fit_forest(x, y, 12, 3, 0)
    rev = RandomForestModel(forest.trees[::-1], forest.classes, forest.n_features,
                            forest.max_depth, forest.features_per_split, forest.seed)
    assert np.allclose(rev.predict_proba(x), forest.predict_proba(x), atol=1e-15)


def test_argmax_tie_goes_to_smaller_label():
    leaf = DecisionTree(np.array([-1]), np.array([0.0]), np.array([-1]), np.array([-1]),
                        np.array([[1.0, 1.0]]))
    forest = RandomForestModel([leaf], np.array(["NEG", "POS"]), 1, None, 1, 0)
    assert forest.predict(np.zeros((1, 1)))[0] == "NEG"


def test_split_tie_break_smallest_feature_then_threshold():
    # features 0 and 1 are identical: both separate perfectly
    x = np.array([[0.0, 0.0], [1.0, 1.0], [2.0, 2.0], [3.0, 3.0]])
    y = np.array([0, 0, 1, 1])
    tree = build_tree(x, y, np.arange(4), 2, np.random.default_rng(0), None, 2)
    assert tree.feature[0] == 0 and tree.threshold[0] == 1.5
    # one feature with two equally good thresholds: the smaller wins
    x = np.array([[0.0], [1.0], [2.0], [3.0]])
    y = np.array([0, 1, 1, 0])
    tree = build_tree(x, y, np.arange(4), 2, np.random.default_rng(0), 1, 1)
    assert tree.threshold[0] == 0.5


def test_duplicated_training_set_same_structure():
    x, y = _separable(40, 5, seed=2)
    rng = np.random.default_rng(9)
    boot = rng.integers(0, 40, size=40)
    shift = rng.integers(0, 2, size=40) * 40  # same rows, taken from either copy
    t1 = build_tree(x, y, boot, 2, np.random.default_rng(4), None, 3)
    t2 = build_tree(np.vstack([x, x]), np.concatenate([y, y]), boot + shift, 2,
                    np.random.default_rng(4), None, 3)
    assert t1.structure() == t2.structure()


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 10_000))
def test_depth_capacity_monotone(seed):
    x, y = _separable(50, 3, seed)
    y = np.where(np.random.default_rng(seed).random(50) < 0.2, 1 - y, y)
    if len(set(y)) < 2:
        return
    deep = np.mean(fit_forest(x, y, 5, None, seed).predict(x) == y)
    stump = np.mean(fit_forest(x, y, 5, 1, seed).predict(x) == y)
    assert deep >= stump


def test_max_depth_respected():
    x, y = _separable(100, 4, 3)
    y = np.random.default_rng(0).integers(0, 2, 100)
    forest = fit_forest(x, y, 5, 3, 0)
    assert max(t.depth for t in forest.trees) <= 3


def test_errors():
    x, y = _separable()
    with pytest.raises(SingleClass):
        fit_forest(x, np.zeros(len(y)), 3)
    forest = fit_forest(x, y, 3)
    with pytest.raises(DimensionMismatch):
        forest.predict(np.zeros((1, 9)))


def test_truncation_matches_smaller_forest():
    x, y = _separable()
    big = fit_forest(x, y, 20, 4, 7)
    small = fit_forest(x, y, 8, 4, 7)
    assert big.truncated(8).to_json() == small.to_json()


def test_json_roundtrip(tmp_path):
    x, y = _separable()
    forest = fit_forest(x, y, 5, None, 1)
    forest.save(tmp_path / "f.json")
    again = RandomForestModel.load(tmp_path / "f.json")
    assert again.to_json() == forest.to_json()


# --- grid search -------------------------------------------------------------

def test_single_point_grid():
    x, y = _separable()
    best, table = grid_search(x[:40], y[:40], x[40:], y[40:], GridSpec([30], [2]), 0)
    assert (best["n_estimators"], best["max_depth"]) == (30, 2)
    assert len(table) == 1


def test_grid_table_size_and_tie_break():
    x, y = _separable(80)
    grid = GridSpec([10, 20], [None, 2, 4])
    best, table = grid_search(x[:60], y[:60], x[60:], y[60:], grid, 0)
    assert len(table) == 6
    top = max(r["macro_f1"] for r in table)
    tied = [r for r in table if r["macro_f1"] == top]
    key = lambda r: (r["n_estimators"], float("inf") if r["max_depth"] is None else r["max_depth"])
    assert key(best) == min(map(key, tied))


def test_full_grid_bounds():
    grid = GridSpec.full()
    assert grid.n_estimators_values[0] == 500 and grid.n_estimators_values[-1] == 5000
    assert np.all(np.diff(grid.n_estimators_values) == 10)
    assert grid.max_depth_values == list(range(2, 41, 2))


def test_grid_validation():
    with pytest.raises(ValidationError):
        GridSpec([], [1])


def test_score_table_csv(tmp_path):
    write_score_table(tmp_path / "g.csv", [{"n_estimators": 10, "max_depth": None,
                                            "macro_f1": 0.5}])
    lines = (tmp_path / "g.csv").read_text().splitlines()
    assert lines[0] == "n_estimators,max_depth,macro_f1"
    assert lines[1].startswith("10,")
