import numpy as np
import pytest

from prescribe_select.predictors import (
    ForestModel,
    RfParams,
    WeightVector,
    knn_fit,
    knn_neighbors,
    knn_point_predict,
    knn_weights,
    rf_fit,
    rf_point_predict,
    rf_weights,
)


def test_weight_vector_invariants():
    with pytest.raises(ValueError):
        WeightVector(indices=[0, 1], weights=[0.5, 0.6])
    with pytest.raises(ValueError):
        WeightVector(indices=[0], weights=[-1.0])
    with pytest.raises(ValueError):
        WeightVector(indices=[], weights=[])
    w = WeightVector(indices=[3, 5], weights=[0.25, 0.75])
    assert np.array_equal(w.to_dense(7)[[3, 5]], [0.25, 0.75])


# --- kNN ---

def _toy_xy(n=5, d=2, seed=0):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(n, d))
    Y = rng.uniform(1, 10, size=(n, 1))
    return X, Y


def test_knn_k_equals_n_uses_everything():
    X, Y = _toy_xy(5)
    model = knn_fit(X, Y, k=5)
    w = knn_weights(model, np.zeros(2))
    assert np.array_equal(np.sort(w.indices), np.arange(5))
    assert np.allclose(w.weights, 0.2)
    assert np.allclose(knn_point_predict(model, np.zeros(2)), Y.mean(axis=0))


def test_knn_constant_feature_ignored():
    X = np.array([[0.0, 7.0], [1.0, 7.0], [2.0, 7.0]])
    Y = np.array([[1.0], [2.0], [3.0]])
    model = knn_fit(X, Y, k=1)
    # distance must come from feature 0 only
    assert knn_neighbors(model, [1.9, 7.0])[0] == 2
    assert knn_neighbors(model, [0.1, 123456.0])[0] == 0


def test_knn_exact_match_k1():
    X, Y = _toy_xy(6)
    model = knn_fit(X, Y, k=1)
    for i in range(6):
        w = knn_weights(model, X[i])
        assert np.array_equal(w.indices, [i])
        assert np.allclose(knn_point_predict(model, X[i]), Y[i])


def test_knn_tie_at_kth_distance_prefers_lower_index():
    X = np.array([[0.0], [1.0], [-1.0], [2.0]])
    Y = np.arange(4.0).reshape(-1, 1)
    model = knn_fit(X, Y, k=2)
    # rows 1 and 2 are equidistant from the query; lower index wins
    nbrs = knn_neighbors(model, [0.0])
    assert nbrs[0] == 0 and nbrs[1] == 1


def test_knn_rejects_bad_k():
    X, Y = _toy_xy(4)
    with pytest.raises(ValueError):
        knn_fit(X, Y, k=5)
    with pytest.raises(ValueError):
        knn_fit(X, Y, k=0)


def test_knn_point_predict_mean_and_constant_data():
    X = np.array([[0.0], [0.1], [0.2], [5.0]])
    Y = np.array([[10.0], [20.0], [30.0], [99.0]])
    model = knn_fit(X, Y, k=3)
    assert knn_point_predict(model, [0.05])[0] == pytest.approx(20.0)
    Yc = np.full((4, 2), 3.5)
    model_c = knn_fit(X, Yc, k=2)
    assert np.allclose(knn_point_predict(model_c, [1.0]), 3.5)


def test_knn_affine_feature_rescaling_invariance():
    rng = np.random.default_rng(3)
    X = rng.normal(size=(30, 3))
    Y = rng.uniform(size=(30, 2))
    model = knn_fit(X, Y, k=4)
    X2 = X.copy()
    X2[:, 1] = 100.0 * X2[:, 1] - 7.0
    model2 = knn_fit(X2, Y, k=4)
    for _ in range(10):
        x = rng.normal(size=3)
        x2 = x.copy()
        x2[1] = 100.0 * x2[1] - 7.0
        assert np.array_equal(knn_neighbors(model, x), knn_neighbors(model2, x2))


# --- random forest ---

def test_rf_depth_zero_single_leaf():
    X, Y = _toy_xy(8)
    model = rf_fit(X, Y, RfParams(n_trees=1, min_leaf=1, max_depth=0), seed=5)
    tree = model.trees[0]
    assert len(tree.feature) == 1 and tree.feature[0] == -1
    # single leaf over {10,20,30,40} predicts 25
    Yv = np.array([[10.0], [20.0], [30.0], [40.0]])
    m2 = rf_fit(
        np.zeros((4, 1)), Yv, RfParams(n_trees=1, min_leaf=1, max_depth=0), seed=1,
        bootstrap_indices=[np.arange(4)],
    )
    assert rf_point_predict(m2, [0.0])[0] == pytest.approx(25.0)


def test_rf_pure_split_found():
    # y = 1{x0 > 0}, well separated: variance reduction computed by hand is
    # maximal for the split on feature 0 (total child SSE drops to 0), so any
    # tree whose sampled subset includes feature 0 must split there first.
    X = np.array([[-2.0, 0.3], [-1.5, -0.2], [-1.0, 0.8], [1.0, 0.1], [1.5, -0.9], [2.0, 0.5]])
    Y = (X[:, :1] > 0).astype(float)
    model = rf_fit(X, Y, RfParams(n_trees=20, min_leaf=1, features_per_split=2), seed=11)
    for tree in model.trees:
        if tree.feature[0] >= 0:
            assert tree.feature[0] == 0
            assert -1.0 < tree.threshold[0] < 1.0


def test_rf_deterministic_given_seed():
    rng = np.random.default_rng(0)
    X = rng.normal(size=(40, 4))
    Y = rng.normal(size=(40, 2)) ** 2
    a = rf_fit(X, Y, RfParams(), seed=123)
    b = rf_fit(X, Y, RfParams(), seed=123)
    for ta, tb in zip(a.trees, b.trees):
        assert np.array_equal(ta.feature, tb.feature)
        assert np.array_equal(ta.threshold, tb.threshold, equal_nan=True)
    c = rf_fit(X, Y, RfParams(), seed=124)
    assert any(
        not np.array_equal(ta.feature, tc.feature) for ta, tc in zip(a.trees, c.trees)
    )


def test_rf_degenerate_targets_single_leaf():
    X = np.random.default_rng(1).normal(size=(20, 3))
    Y = np.full((20, 1), 4.0)
    model = rf_fit(X, Y, RfParams(n_trees=3, min_leaf=1), seed=9)
    for tree in model.trees:
        assert len(tree.feature) == 1


def test_rf_weights_single_leaf_uniform():
    X = np.zeros((4, 1))
    Y = np.arange(4.0).reshape(-1, 1)
    model = rf_fit(
        X, Y, RfParams(n_trees=1, min_leaf=1, max_depth=0), seed=0,
        bootstrap_indices=[np.arange(4)],
    )
    w = rf_weights(model, [0.0])
    assert np.array_equal(w.indices, np.arange(4))
    assert np.allclose(w.weights, 0.25)


def test_rf_weights_formula_two_trees():
    # leaves {0,1} and {1,2} -> w = (1/4, 1/2, 1/4)
    X = np.array([[0.0], [1.0], [2.0]])
    Y = np.array([[0.0], [1.0], [2.0]])
    model = rf_fit(
        X, Y, RfParams(n_trees=2, min_leaf=1, max_depth=0), seed=0,
        bootstrap_indices=[np.array([0, 1]), np.array([1, 2])],
    )
    w = rf_weights(model, [0.5])
    assert np.array_equal(w.indices, [0, 1, 2])
    assert np.allclose(w.weights, [0.25, 0.5, 0.25])


def test_rf_weights_sum_to_one_and_match_prediction():
    rng = np.random.default_rng(42)
    X = rng.normal(size=(60, 5))
    Y = np.column_stack([X[:, 0] ** 2 + rng.normal(size=60), X[:, 1] + rng.normal(size=60) ** 2])
    Y = np.abs(Y)
    model = rf_fit(X, Y, RfParams(n_trees=5, min_leaf=5), seed=7)
    for _ in range(20):
        x = rng.normal(size=5)
        w = rf_weights(model, x)
        assert abs(w.weights.sum() - 1.0) <= 1e-9
        # prediction is the weight-weighted outcome mean only when both use
        # the same leaf membership sets; this is the internal consistency
        # check between rf_point_predict and rf_weights.
        assert np.allclose(rf_point_predict(model, x), w.weights @ Y[w.indices])


def test_rf_tree_average_of_leaf_means():
    X = np.array([[0.0], [1.0]])
    Y = np.array([[10.0], [30.0]])
    model = rf_fit(
        X, Y, RfParams(n_trees=2, min_leaf=1, max_depth=0), seed=0,
        bootstrap_indices=[np.array([0, 0]), np.array([1, 1])],
    )
    assert rf_point_predict(model, [0.5])[0] == pytest.approx(20.0)


def test_rf_permuting_rows_permutes_weight_support():
    rng = np.random.default_rng(5)
    X = rng.normal(size=(25, 3))
    Y = np.abs(rng.normal(size=(25, 1)))
    boot = [rng.integers(0, 25, size=25) for _ in range(3)]
    params = RfParams(n_trees=3, min_leaf=2)
    model = rf_fit(X, Y, params, seed=0, bootstrap_indices=boot)

    perm = rng.permutation(25)
    inv = np.argsort(perm)
    # permuted data with draws mapped by position: row p of the permuted set
    # is original row perm[p], so feeding inv[boot] reproduces the same
    # bootstrap multiset of original rows.
    boot_p = [inv[b] for b in boot]
    model_p = rf_fit(X[perm], Y[perm], params, seed=0, bootstrap_indices=boot_p)
    for _ in range(10):
        x = rng.normal(size=3)
        w = rf_weights(model, x)
        w_p = rf_weights(model_p, x)
        assert np.array_equal(np.sort(perm[w_p.indices]), np.sort(w.indices))
        assert w.weights.sum() == pytest.approx(w_p.weights.sum())
