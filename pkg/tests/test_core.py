import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from tbvcm.core import (ActionSchema, Column, Dataset, IterationRecord, Loss, Scheme, StandardizationParams,
                        Task, VcmModel, coefficient_at, fit_glm, linear_predictor, predict, pseudo_gradient,
                        sigmoid)
from tbvcm.errors import DataError, NumericError, UsageError
from tbvcm.tree import DecisionTree


def const_tree(value):
    """A single-leaf tree returning ``value`` everywhere."""
    return DecisionTree.from_nodes([{"leaf": True, "value": value, "count": 1}])


def model_with(beta0, trees_per_iter=(), rate=0.1, loss=Loss.SQUARED_ERROR, n_z=1):
    p = len(beta0) - 1
    return VcmModel(
        schema=ActionSchema.continuous([f"z{k}" for k in range(n_z)]),
        standardization=StandardizationParams.identity(p),
        loss=loss,
        beta0=beta0,
        rate=rate,
        iterations=tuple(IterationRecord(t, b) for b, t in enumerate(trees_per_iter)),
    )


# ---- pseudo gradient ---------------------------------------------------------

def test_squared_error_gradient_examples():
    assert np.array_equal(pseudo_gradient(Loss.SQUARED_ERROR, [1, 2], 3, [0, 0]), [3, 6])
    assert np.array_equal(pseudo_gradient(Loss.SQUARED_ERROR, [1, 0], 3, [3, 5]), [0, 0])


def test_logistic_gradient_examples():
    assert np.array_equal(pseudo_gradient(Loss.LOGISTIC_DEVIANCE, [1], 1, [0]), [0.5])
    g = pseudo_gradient(Loss.LOGISTIC_DEVIANCE, [1, 1], 1, [math.log(3), 0])
    assert np.allclose(g, [0.25, 0.25], rtol=0, atol=1e-15)


def test_gradient_batch_matches_rows():
    rng = np.random.default_rng(0)
    x = np.column_stack([np.ones(6), rng.normal(size=(6, 2))])
    y = rng.normal(size=6)
    beta = rng.normal(size=(6, 3))
    batch = pseudo_gradient(Loss.SQUARED_ERROR, x, y, beta)
    for i in range(6):
        assert np.array_equal(batch[i], pseudo_gradient(Loss.SQUARED_ERROR, x[i], y[i], beta[i]))


def test_gradient_dimension_mismatch():
    with pytest.raises(UsageError):
        pseudo_gradient(Loss.SQUARED_ERROR, [1, 2, 3], 1.0, [0, 0])


def test_gradient_overflow_is_numeric_error():
    with pytest.raises(NumericError):
        pseudo_gradient(Loss.SQUARED_ERROR, [1, 1e200], 1e300, [1e200, 1e200])


@settings(max_examples=200, deadline=None)
@given(
    loss=st.sampled_from(list(Loss)),
    xs=st.lists(st.floats(-3, 3), min_size=1, max_size=4),
    seed=st.integers(0, 2**32 - 1),
)
def test_gradient_matches_central_difference(loss, xs, seed):
    rng = np.random.default_rng(seed)
    x = np.array([1.0, *xs])
    beta = rng.normal(size=x.size)
    y = float(rng.integers(2)) if loss is Loss.LOGISTIC_DEVIANCE else float(rng.normal())
    g = pseudo_gradient(loss, x, y, beta)
    h = 1e-5
    for j in range(x.size):
        up, down = beta.copy(), beta.copy()
        up[j] += h
        down[j] -= h
        fd = -(loss.evaluate(x @ up, y) - loss.evaluate(x @ down, y)) / (2 * h)
        assert abs(fd - g[j]) <= 1e-6 * max(1.0, abs(g[j]))


# ---- losses and links --------------------------------------------------------

def test_squared_error_is_half_square():
    assert Loss.SQUARED_ERROR.evaluate(5.0, 2.0) == 4.5


def test_deviance_is_finite_when_separated():
    assert math.isfinite(Loss.LOGISTIC_DEVIANCE.evaluate(-800.0, 1.0))
    assert math.isfinite(Loss.LOGISTIC_DEVIANCE.evaluate(800.0, 0.0))


def test_deviance_matches_clamped_probability_form():
    eta = np.array([-5.0, -3.0, 0.0, 0.7, 5.0])
    p = sigmoid(eta)
    for y in (0.0, 1.0):
        direct = -(y * np.log(p) + (1 - y) * np.log(1 - p))
        assert np.allclose(Loss.LOGISTIC_DEVIANCE.evaluate(eta, np.full(5, y)), direct, rtol=1e-12, atol=0)
    # beyond the clamp the wrong-label loss saturates at -log(1e-12)
    assert Loss.LOGISTIC_DEVIANCE.evaluate(40.0, 0.0) == pytest.approx(-math.log(1e-12), rel=1e-9)
    assert Loss.LOGISTIC_DEVIANCE.evaluate(-40.0, 1.0) == Loss.LOGISTIC_DEVIANCE.evaluate(40.0, 0.0)


def test_sigmoid_is_stable():
    out = sigmoid(np.array([-1000.0, 0.0, 1000.0]))
    assert np.array_equal(out, [0.0, 0.5, 1.0])
    assert sigmoid(math.log(3)) == pytest.approx(0.75, abs=1e-15)


# ---- model evaluation ----------------------------------------------------------

def test_empty_model_predicts_zero():
    m = model_with([0.0, 0.0])
    assert linear_predictor(m, [1, 4], [0.3]) == 0


def test_beta0_only_model():
    m = model_with([1.0, 2.0])
    assert linear_predictor(m, [1, 3], [0.5]) == 7
    assert np.array_equal(coefficient_at(m, [0.5]), [1.0, 2.0])


def test_single_intercept_tree():
    m = model_with([0.0, 0.0], [{0: const_tree(10.0)}], rate=0.1)
    assert linear_predictor(m, [1, 0], [0.2]) == pytest.approx(1.0, abs=1e-15)


def test_two_iterations_add():
    m = model_with([0.0], [{0: const_tree(1.0)}, {0: const_tree(1.0)}], rate=0.5)
    assert coefficient_at(m, [0.0])[0] == 1.0


def test_predict_links():
    m = model_with([0.0], loss=Loss.LOGISTIC_DEVIANCE)
    assert predict(m, [1], [0.0]) == 0.5
    m = model_with([math.log(3)], loss=Loss.LOGISTIC_DEVIANCE)
    assert predict(m, [1], [0.0]) == pytest.approx(0.75, abs=1e-15)
    r = model_with([1.5, -2.0])
    assert predict(r, [1, 2], [0.0]) == linear_predictor(r, [1, 2], [0.0])


def test_classification_outputs_in_unit_interval():
    rng = np.random.default_rng(3)
    m = model_with([0.3, -1.2], [{1: const_tree(4.0)}], rate=0.5, loss=Loss.LOGISTIC_DEVIANCE)
    x = np.column_stack([np.ones(50), rng.normal(size=50)])
    p = predict(m, x, rng.uniform(size=(50, 1)))
    eta = linear_predictor(m, x, rng.uniform(size=(50, 1)))
    assert np.all((p > 0) & (p < 1))
    assert np.allclose(p, sigmoid(eta), rtol=0, atol=0)


def test_dropping_last_iteration_removes_rate_times_tree():
    rng = np.random.default_rng(1)
    m = model_with([0.5, -1.0], [{0: const_tree(2.0), 1: const_tree(-3.0)}, {1: const_tree(0.7)}], rate=0.25)
    z = rng.uniform(size=(5, 1))
    full = coefficient_at(m, z)
    head = coefficient_at(m.truncate(1), z)
    assert np.array_equal(full[:, 1], head[:, 1] + 0.25 * 0.7)
    assert np.array_equal(full[:, 0], head[:, 0])


def test_path_matches_truncations():
    m = model_with([0.0, 1.0], [{0: const_tree(1.0)}, {1: const_tree(2.0)}, {0: const_tree(-1.0)}], rate=0.3)
    z = np.array([[0.1], [0.9]])
    for b, beta in enumerate(m.coefficient_path(z)):
        assert np.array_equal(beta, m.truncate(b).coefficient_at(z))


def test_wrong_action_width():
    m = model_with([0.0], n_z=2)
    with pytest.raises(UsageError):
        coefficient_at(m, [0.1, 0.2, 0.3])


def test_boulevard_model_needs_truncation():
    with pytest.raises(UsageError):
        VcmModel(ActionSchema.continuous(["z"]), StandardizationParams.identity(0), Loss.SQUARED_ERROR,
                 [0.0], 0.5, scheme=Scheme.BOULEVARD)


# ---- standardization ----------------------------------------------------------

def test_standardization_maps_to_unit_interval():
    params = StandardizationParams.fit(np.array([[1, 0], [1, 5], [1, 10]], dtype=float))
    assert np.array_equal(params.apply(np.array([[1, 0], [1, 5], [1, 10.0]]))[:, 1], [-1, 0, 1])


def test_degenerate_column_maps_to_zero():
    params = StandardizationParams.fit(np.array([[1, 3], [1, 3.0]]))
    assert np.array_equal(params.apply(np.array([[1, 3.0], [1, 7.0]]))[:, 1], [0, 0])


def test_out_of_range_values_are_extrapolated():
    params = StandardizationParams((0.0,), (10.0,))
    assert params.apply(np.array([[1, 20.0]]))[0, 1] == 3.0


@settings(max_examples=100, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), p=st.integers(1, 5), scale=st.floats(1e-3, 1e3))
def test_standardization_round_trip(seed, p, scale):
    rng = np.random.default_rng(seed)
    x = np.column_stack([np.ones(30), scale * rng.normal(size=(30, p)) + rng.normal(size=p)])
    params = StandardizationParams.fit(x)
    back = params.invert(params.apply(x))
    assert np.max(np.abs(back - x)) <= 1e-12 * max(1.0, np.max(np.abs(x)))


def test_raw_coefficients_give_same_predictor():
    rng = np.random.default_rng(4)
    x = np.column_stack([np.ones(10), rng.uniform(2, 9, size=(10, 2))])
    params = StandardizationParams.fit(x)
    beta = rng.normal(size=3)
    raw = params.coefficients_to_raw(beta)
    assert np.allclose(params.apply(x) @ beta, x @ raw, rtol=0, atol=1e-12)


# ---- dataset validation --------------------------------------------------------

def _ds(**kw):
    args = dict(x=np.ones((3, 1)), z=np.zeros((3, 1)), y=np.zeros(3), task=Task.REGRESSION,
                schema=ActionSchema.continuous(["z"]))
    args.update(kw)
    return Dataset(**args)


def test_dataset_requires_intercept():
    with pytest.raises(DataError):
        _ds(x=np.array([[1.0], [2.0], [1.0]]))


def test_dataset_rejects_non_binary_labels():
    with pytest.raises(DataError):
        _ds(task=Task.CLASSIFICATION, y=np.array([0.0, 1.0, 0.5]))


def test_dataset_rejects_row_mismatch_and_nan():
    with pytest.raises(DataError):
        _ds(y=np.zeros(2))
    with pytest.raises(DataError):
        _ds(y=np.array([0.0, np.nan, 1.0]))


def test_schema_rejects_duplicates():
    with pytest.raises((DataError, UsageError)):
        ActionSchema((Column("a"), Column("a")))
    with pytest.raises((DataError, UsageError)):
        ActionSchema((Column("a", ("u", "u")),))


def test_schema_dict_round_trip():
    schema = ActionSchema((Column("a", ("x", "y", "w")), Column("b")))
    assert ActionSchema.from_dict(schema.to_dict()) == schema


# ---- GLM solver ------------------------------------------------------------------

def test_glm_recovers_noiseless_linear_truth():
    rng = np.random.default_rng(5)
    x = np.column_stack([np.ones(40), rng.normal(size=(40, 3))])
    beta = np.array([0.5, -2.0, 3.0, 1.25])
    assert np.allclose(fit_glm(x, x @ beta, Loss.SQUARED_ERROR), beta, rtol=0, atol=1e-8)


def test_logistic_glm_score_is_zero_at_solution():
    rng = np.random.default_rng(6)
    x = np.column_stack([np.ones(500), rng.normal(size=(500, 2))])
    y = (rng.uniform(size=500) < sigmoid(x @ [0.3, 1.0, -0.5])).astype(float)
    beta = fit_glm(x, y, Loss.LOGISTIC_DEVIANCE, max_iter=50)
    assert np.max(np.abs(x.T @ (y - sigmoid(x @ beta)))) < 1e-6


def test_glm_singular_design():
    x = np.column_stack([np.ones(5), np.arange(5.0), 2 * np.arange(5.0)])
    with pytest.raises(NumericError):
        fit_glm(x, np.arange(5.0), Loss.SQUARED_ERROR, jitter=0.0)
