from __future__ import annotations

import numpy as np
import pytest

from retain.featurize import FeatureWindow, build_frame, dataset_from_arrays, encode
from retain.learners import predict, train_forest, train_rule_tree
from retain.learners.forest import default_m_try, tree_seeds
from retain.synthcohort import GeneratorConfig, generate
from retain.telemetry import apply_cohort_filter, parse_lines


@pytest.fixture(scope="module")
def day_data(cohort_small):
    frame = build_frame(cohort_small, FeatureWindow.first_day())
    return encode(frame, frame)


@pytest.fixture(scope="module")
def planted():
    """6,000 generated players, featurized for the first day and the first week."""
    log = apply_cohort_filter(parse_lines(generate(GeneratorConfig(n_players=6000, seed=13)).lines))
    out = {}
    for name, fw in (("day", FeatureWindow.first_day()), ("7d", FeatureWindow.days(7))):
        frame = build_frame(log, fw)
        out[name] = encode(frame, frame)
    return out


def test_degenerate_forest_is_a_single_cart(day_data) -> None:
    p = day_data.X_raw.shape[1]
    forest = train_forest(day_data, n_trees=1, m_try=p, bootstrap=False)
    tree = train_rule_tree(day_data, max_rules=None)
    np.testing.assert_array_equal(forest.score(day_data), predict(tree, day_data)[1])
    np.testing.assert_array_equal(predict(forest, day_data)[0], predict(tree, day_data)[0])


def test_degenerate_forest_on_random_data() -> None:
    rng = np.random.default_rng(4)
    X = rng.integers(0, 4, size=(150, 4)).astype(float)
    y = rng.integers(0, 2, size=150)
    d = dataset_from_arrays(X, y)
    forest = train_forest(d, n_trees=1, m_try=4, bootstrap=False, seed=9)
    tree = train_rule_tree(d, max_rules=None)
    query = dataset_from_arrays(rng.integers(-1, 5, size=(300, 4)).astype(float))
    np.testing.assert_array_equal(forest.score(query), predict(tree, query)[1])


def test_same_seed_gives_identical_forest(day_data) -> None:
    a = train_forest(day_data, n_trees=16, seed=5)
    b = train_forest(day_data, n_trees=16, seed=5)
    c = train_forest(day_data, n_trees=16, seed=6)
    assert a.params() == b.params()
    assert a.params() != c.params()


def test_thread_count_does_not_change_the_forest(day_data) -> None:
    a = train_forest(day_data, n_trees=12, seed=2, n_jobs=1)
    b = train_forest(day_data, n_trees=12, seed=2, n_jobs=4)
    assert a.params() == b.params()


def test_tree_seeds_are_prefix_stable() -> None:
    assert tree_seeds(3, 10)[:4] == tree_seeds(3, 4)
    assert len(set(tree_seeds(3, 100))) == 100


def test_vote_fractions_stabilise(day_data) -> None:
    small = train_forest(day_data, n_trees=64, seed=1).vote_fraction(day_data)
    big = train_forest(day_data, n_trees=256, seed=1).vote_fraction(day_data)
    assert np.mean(np.abs(small - big) < 0.1) >= 0.95


def test_scores_and_votes_are_fractions(day_data) -> None:
    f = train_forest(day_data, n_trees=20, seed=0)
    for v in (f.score(day_data), f.vote_fraction(day_data)):
        assert ((v >= 0) & (v <= 1)).all()
    assert np.allclose((f.vote_fraction(day_data) * 20) % 1, 0)


def test_importance_is_nonnegative_and_bounded(day_data) -> None:
    f = train_forest(day_data, n_trees=32, seed=0)
    assert (f.importance >= 0).all()
    # summed Gini decrease per tree cannot exceed the root impurity of 0.5
    assert f.importance.sum() <= 0.5 + 1e-12
    ranked = f.ranked_importance()
    assert [v for _, v in ranked] == sorted((v for _, v in ranked), reverse=True)


def test_importance_equals_root_gini_for_fully_grown_clean_tree() -> None:
    rng = np.random.default_rng(8)
    X = rng.normal(size=(200, 3))
    y = (X[:, 1] > 0.3).astype(int)
    f = train_forest(dataset_from_arrays(X, y), n_trees=1, m_try=3, bootstrap=False)
    p = y.mean()
    assert f.importance[1] == pytest.approx(2 * p * (1 - p), abs=1e-12)
    assert f.importance[0] == 0 and f.importance[2] == 0


def test_planted_signal_ranks_in_top_three(planted) -> None:
    f = train_forest(planted["day"], n_trees=64, min_leaf=5, seed=7)
    top = [name for name, _ in f.ranked_importance()[:3]]
    assert "current_absence_time" in top
    assert "total_rounds" in top


def test_absence_dominates_first_week(planted) -> None:
    f = train_forest(planted["7d"], n_trees=64, min_leaf=5, seed=7)
    assert f.ranked_importance()[0][0] == "current_absence_time"


@pytest.mark.parametrize("m_try", [0, 99])
def test_invalid_m_try_is_rejected(day_data, m_try: int) -> None:
    with pytest.raises(ValueError):
        train_forest(day_data, n_trees=2, m_try=m_try)


def test_default_m_try() -> None:
    assert [default_m_try(p) for p in (1, 3, 4, 16, 17, 24)] == [1, 1, 2, 4, 4, 4]
