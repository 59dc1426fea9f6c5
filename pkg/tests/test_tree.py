import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from tbvcm.core import ActionSchema, Column
from tbvcm.errors import UnseenLevelError, UsageError
from tbvcm.tree import DecisionTree, Split, TreeConfig, candidate_splits, fit_tree


def leaf_means(tree, z, g):
    """Mean target of the rows routed to each leaf."""
    leaves = tree.apply(z)
    return {int(k): float(np.mean(g[leaves == k])) for k in np.unique(leaves)}


def sse(pred, g):
    return float(np.sum((g - pred) ** 2))


# ---- examples ---------------------------------------------------------------

def test_four_point_split():
    z = np.array([[1.0], [2.0], [3.0], [4.0]])
    g = np.array([0.0, 0.0, 10.0, 10.0])
    tree = fit_tree(z, g, TreeConfig(max_depth=1, min_leaf=2))
    assert tree.split_at(0) == Split(0, threshold=2.5)
    assert np.array_equal(tree.predict(z), g)


@pytest.mark.parametrize("strategy", ["cart", "subsampled", "random"])
def test_constant_targets_give_one_leaf(strategy):
    rng = np.random.default_rng(0)
    z = rng.uniform(size=(60, 2))
    tree = fit_tree(z, np.full(60, 3.5), TreeConfig(max_depth=4, min_leaf=2, strategy=strategy, subsample=0.5),
                    rng=rng)
    assert tree.n_leaves == 1
    assert np.all(tree.predict(z) == 3.5)


def test_depth_zero_is_mean():
    g = np.array([1.0, 2.0, 6.0])
    tree = fit_tree(np.array([[0.0], [1.0], [2.0]]), g, TreeConfig(max_depth=0, min_leaf=1))
    assert tree.n_leaves == 1 and tree.predict([[5.0]])[0] == 3.0


def test_identical_z_gives_one_leaf():
    tree = fit_tree(np.ones((10, 2)), np.arange(10.0), TreeConfig(max_depth=3, min_leaf=1))
    assert tree.n_leaves == 1


def test_empty_input_is_usage_error():
    with pytest.raises(UsageError):
        fit_tree(np.zeros((0, 1)), np.zeros(0))


def test_equal_gain_prefers_lowest_column_then_threshold():
    # both columns separate g perfectly; column 0 must win
    z = np.array([[1.0, 1.0], [2.0, 2.0], [3.0, 3.0], [4.0, 4.0]])
    g = np.array([0.0, 0.0, 5.0, 5.0])
    tree = fit_tree(z, g, TreeConfig(max_depth=1, min_leaf=1))
    assert tree.split_at(0).column == 0
    # symmetric targets: thresholds 1.5 and 3.5 have equal gain, the smaller wins
    tree = fit_tree(np.array([[1.0], [2.0], [3.0], [4.0]]), np.array([1.0, 0.0, 0.0, 1.0]),
                    TreeConfig(max_depth=1, min_leaf=1))
    assert tree.split_at(0).threshold == 1.5


# ---- candidate splits -----------------------------------------------------------

def test_candidate_midpoints():
    assert [s.threshold for s in candidate_splits([4, 1, 2, 1])] == [1.5, 3.0]
    assert candidate_splits([7, 7, 7]) == []


def test_candidate_midpoint_between_adjacent_floats():
    a = 1.0
    b = np.nextafter(a, 2.0)
    (s,) = candidate_splits([a, b])
    assert a <= s.threshold < b


def test_categorical_prefix_cuts_follow_level_means():
    codes = np.array([0, 0, 1, 1, 2, 2])  # a, b, c
    targets = np.array([0, 0, 10, 10, 5, 5], dtype=float)
    cuts = candidate_splits(codes, categorical=True, targets=targets)
    assert [(s.left_levels, s.right_levels) for s in cuts] == [
        (frozenset({0}), frozenset({1, 2})),
        (frozenset({0, 2}), frozenset({1})),
    ]


def test_categorical_single_level_has_no_cut():
    assert candidate_splits([3, 3], categorical=True, targets=[1.0, 2.0]) == []


def test_random_categorical_cut_is_proper():
    rng = np.random.default_rng(2)
    for _ in range(20):
        (s,) = candidate_splits([0, 1, 2, 3, 1], categorical=True, rng=rng)
        assert s.left_levels and s.right_levels
        assert s.left_levels | s.right_levels == {0, 1, 2, 3}


# ---- routing ---------------------------------------------------------------------

def test_single_leaf_routes_everything_to_root():
    tree = DecisionTree.from_nodes([{"leaf": True, "value": 1.0, "count": 3}])
    assert tree.route([123.0]) == 0 and tree.route([-5.0]) == 0


def test_threshold_is_inclusive_left():
    tree = fit_tree(np.array([[1.0], [2.0], [3.0], [4.0]]), np.array([0.0, 0.0, 10.0, 10.0]),
                    TreeConfig(max_depth=1, min_leaf=2))
    assert tree.predict([[2.5]])[0] == 0.0
    assert tree.predict([[np.nextafter(2.5, 3.0)]])[0] == 10.0


def _categorical_tree():
    schema = ActionSchema((Column("c", ("a", "b", "c")),))
    # level 0 rows: 6 (left after ordering by mean), levels 1, 2: 2 rows each
    z = np.array([[0], [0], [0], [0], [0], [0], [1], [1], [2], [2]], dtype=float)
    g = np.array([0, 0, 0, 0, 0, 0, 9, 9, 8, 8], dtype=float)
    return fit_tree(z, g, TreeConfig(max_depth=1, min_leaf=1), schema)


def test_unseen_level_goes_to_majority_child():
    tree = _categorical_tree()
    assert tree.split_at(0).left_levels == {0}
    # the left child holds 6 training rows, the right 4
    assert tree.predict([[-1.0]])[0] == 0.0
    assert tree.predict([[7.0]])[0] == 0.0


def test_unseen_level_strict():
    with pytest.raises(UnseenLevelError):
        _categorical_tree().predict([[-1.0]], unseen="strict")


def test_node_round_trip():
    rng = np.random.default_rng(1)
    z = rng.uniform(size=(200, 2))
    tree = fit_tree(z, np.sin(6 * z[:, 0]) + z[:, 1], TreeConfig(max_depth=4, min_leaf=5))
    back = DecisionTree.from_nodes(tree.to_nodes())
    assert back.same_structure(tree)
    assert np.array_equal(back.predict(z), tree.predict(z))


def test_bad_child_indices_rejected():
    with pytest.raises(UsageError):
        DecisionTree.from_nodes([{"leaf": False, "column": 0, "left": 0, "right": 1, "threshold": 0.5,
                                  "count": 2, "value": 0.0},
                                 {"leaf": True, "value": 1.0, "count": 1}])


# ---- structure function ------------------------------------------------------------

def test_structure_weight_examples():
    z = np.array([[1.0], [2.0], [3.0], [4.0], [5.0], [6.0], [7.0], [8.0]])
    g = np.array([0, 0, 0, 0, 1, 1, 1, 1], dtype=float)
    tree = fit_tree(z, g, TreeConfig(max_depth=1, min_leaf=4))
    assert tree.structure_weight(z, [2.2], 0) == 0.25
    assert tree.structure_weight(z, [7.5], 0) == 0.0


def test_structure_weight_empty_leaf_is_zero():
    tree = fit_tree(np.array([[1.0], [2.0], [3.0], [4.0]]), np.array([0.0, 0.0, 1.0, 1.0]),
                    TreeConfig(max_depth=1, min_leaf=2))
    train = np.array([[1.0], [1.5]])  # no training row reaches the right leaf
    assert tree.structure_weight(train, [4.0], 0) == 0.0
    assert np.all(tree.structure_weights(train, [[4.0]]) == 0.0)


# ---- properties ------------------------------------------------------------------

tree_inputs = st.tuples(
    st.integers(0, 2**32 - 1),
    st.integers(5, 120),
    st.integers(1, 3),
    st.integers(0, 4),
    st.integers(1, 10),
    st.sampled_from(["cart", "subsampled", "random"]),
)


def _draw(seed, n, d, categorical=False):
    rng = np.random.default_rng(seed)
    z = rng.uniform(size=(n, d))
    if categorical:
        z[:, 0] = rng.integers(0, 4, size=n)
    z[:, -1] = np.round(z[:, -1], 1)  # force ties in one column
    g = rng.normal(size=n) + 3 * (z[:, 0] > 0.5)
    schema = ActionSchema((Column("c0", ("a", "b", "c", "d")) if categorical else Column("c0"),
                           *(Column(f"c{k}") for k in range(1, d))))
    return z, g, schema


def _fit(seed, n, d, depth, min_leaf, strategy, categorical=False):
    z, g, schema = _draw(seed, n, d, categorical)
    cfg = TreeConfig(max_depth=depth, min_leaf=min_leaf, strategy=strategy, subsample=0.6)
    tree = fit_tree(z, g, cfg, schema, rng=np.random.default_rng(seed))
    used = np.arange(n)
    if strategy == "subsampled":
        used = np.sort(np.random.default_rng(seed).choice(n, size=math.ceil(0.6 * n), replace=False))
    return tree, z, g, used, cfg


@settings(max_examples=150, deadline=None)
@given(tree_inputs, st.booleans())
def test_partition_and_weights(args, categorical):
    tree, z, g, used, _ = _fit(*args, categorical=categorical)
    probe = np.random.default_rng(args[0] + 1).uniform(size=(100, z.shape[1]))
    if categorical:
        probe[:, 0] = np.random.default_rng(args[0]).integers(-1, 5, size=100)
    leaves = tree.apply(probe)
    assert np.all(tree.left[leaves] < 0)
    sums = tree.structure_weights(z, probe).sum(axis=1)
    assert np.all(np.isclose(sums, 0.0) | np.isclose(sums, 1.0))


@settings(max_examples=150, deadline=None)
@given(tree_inputs, st.booleans())
def test_leaf_values_are_means_of_used_rows(args, categorical):
    tree, z, g, used, cfg = _fit(*args, categorical=categorical)
    means = leaf_means(tree, z[used], g[used])
    out = tree.predict(z[used])
    leaves = tree.apply(z[used])
    for i in range(len(used)):
        assert abs(out[i] - means[int(leaves[i])]) <= 1e-12 * max(1.0, abs(means[int(leaves[i])]))


@settings(max_examples=150, deadline=None)
@given(tree_inputs, st.booleans())
def test_min_leaf_and_depth(args, categorical):
    tree, z, g, used, cfg = _fit(*args, categorical=categorical)
    counts = np.bincount(tree.apply(z[used]), minlength=tree.n_nodes)
    leaves = np.flatnonzero(tree.left < 0)
    if tree.n_leaves > 1:
        assert np.all(counts[leaves] >= cfg.min_leaf)
    assert tree.depth <= cfg.max_depth


@settings(max_examples=150, deadline=None)
@given(tree_inputs)
def test_cart_never_increases_sse(args):
    seed, n, d, depth, min_leaf, _ = args
    tree, z, g, _, _ = _fit(seed, n, d, depth, min_leaf, "cart")
    assert sse(tree.predict(z), g) <= sse(np.full(n, g.mean()), g) + 1e-9


@settings(max_examples=100, deadline=None)
@given(tree_inputs, st.booleans())
def test_random_structure_ignores_targets(args, categorical):
    seed, n, d, depth, min_leaf, _ = args
    z, g, schema = _draw(seed, n, d, categorical)
    cfg = TreeConfig(max_depth=depth, min_leaf=min_leaf, strategy="random")
    a = fit_tree(z, g, cfg, schema, rng=np.random.default_rng(seed))
    g2 = np.random.default_rng(seed + 7).permutation(g) * 3.0 - 1.0
    b = fit_tree(z, g2, cfg, schema, rng=np.random.default_rng(seed))
    assert a.same_structure(b)


def test_same_seed_same_tree():
    z, g, schema = _draw(11, 300, 3, categorical=True)
    for strategy in ("cart", "subsampled", "random"):
        cfg = TreeConfig(max_depth=5, min_leaf=3, strategy=strategy, subsample=0.5)
        a = fit_tree(z, g, cfg, schema, rng=np.random.default_rng(4))
        b = fit_tree(z, g, cfg, schema, rng=np.random.default_rng(4))
        assert a.to_nodes() == b.to_nodes()


def test_presorted_columns_match_plain_fit():
    from tbvcm.tree import presort
    z, g, schema = _draw(3, 400, 3)
    cfg = TreeConfig(max_depth=6, min_leaf=5)
    assert fit_tree(z, g, cfg, schema, sorted_cols=presort(z)).to_nodes() == fit_tree(z, g, cfg, schema).to_nodes()


def test_categorical_split_beats_any_single_threshold_on_coded_order():
    # levels 0 and 2 share a mean that differs from level 1: only a set split isolates it
    schema = ActionSchema((Column("c", ("a", "b", "c")),))
    z = np.repeat([0.0, 1.0, 2.0], 10)[:, None]
    g = np.repeat([0.0, 4.0, 0.0], 10)
    tree = fit_tree(z, g, TreeConfig(max_depth=1, min_leaf=1), schema)
    assert tree.split_at(0).right_levels == {1} or tree.split_at(0).left_levels == {1}
    assert sse(tree.predict(z), g) == 0.0
