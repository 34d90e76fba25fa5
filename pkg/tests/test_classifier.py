import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from myoknn.classifier import (METRICS, KnnConfig, KnnModel, classify, classify_1nn,
                               classify_many, distance, inverse_covariance, k_nearest,
                               min_search, regress, weights)
from myoknn.dataset import TrainingSet
from myoknn.errors import ConfigurationError, NumericalError, StructuralError

from oracles import knn_oracle, nearest_oracle, random_case

vec = arrays(float, 8, elements=st.floats(-100, 100, allow_nan=False))


def model_of(R, labels, k=1, metric="euclidean", e=0.0, inv_cov=None, classes=None):
    return KnnModel(R, labels, KnnConfig(k, metric, e, normalize_inputs=False), inv_cov, classes)


# --- distances -------------------------------------------------------------

@pytest.mark.parametrize("metric", METRICS)
def test_distance_to_self_is_zero(metric):
    a = np.arange(8.0)
    inv = np.eye(8) if metric == "mahalanobis" else None
    assert distance(metric, a, a, inv) == 0.0


def test_distance_unit_difference():
    a, b = np.ones(8), np.zeros(8)
    assert distance("manhattan", a, b) == 8.0
    assert distance("euclidean", a, b) == pytest.approx(math.sqrt(8), rel=1e-15)
    assert distance("chebyshev", a, b) == 1.0


def test_mahalanobis_identity_is_euclidean():
    rng = np.random.default_rng(0)
    for _ in range(50):
        a, b = rng.normal(size=(2, 8))
        assert distance("mahalanobis", a, b, np.eye(8)) == pytest.approx(
            distance("euclidean", a, b), rel=1e-12)


def test_distance_errors():
    with pytest.raises(StructuralError):
        distance("euclidean", np.zeros(8), np.zeros(7))
    with pytest.raises(ConfigurationError):
        distance("mahalanobis", np.zeros(8), np.zeros(8))
    with pytest.raises(ConfigurationError):
        distance("cosine", np.zeros(8), np.zeros(8))


@settings(max_examples=300, deadline=None)
@given(vec, vec, vec, st.sampled_from(METRICS))
def test_metric_axioms(a, b, c, metric):
    rng = np.random.default_rng(int(abs(a[0]) * 1000) % 1000)
    A = rng.normal(size=(8, 8))
    S = A @ A.T + 8 * np.eye(8)
    kw = {"inv_cov": S} if metric == "mahalanobis" else {}
    dab = distance(metric, a, b, **kw)
    assert dab >= 0
    assert dab == pytest.approx(distance(metric, b, a, **kw), rel=1e-12, abs=1e-12)
    assert distance(metric, a, a, **kw) == 0
    lhs = distance(metric, a, c, **kw)
    rhs = dab + distance(metric, b, c, **kw)
    assert lhs <= rhs * (1 + 1e-12) + 1e-9


# --- inverse covariance ----------------------------------------------------

def test_inverse_covariance_of_white_noise():
    X = np.random.default_rng(1).normal(size=(20000, 8))
    inv = inverse_covariance(X)
    assert np.all(np.abs(inv - np.eye(8)) < 0.1)
    assert np.array_equal(inv, inv.T)


def test_inverse_covariance_single_sample_is_singular():
    with pytest.raises(NumericalError):
        inverse_covariance(np.ones((1, 8)), ridge=0.0)


def test_inverse_covariance_ridge_one_constant_data():
    inv = inverse_covariance(np.full((10, 8), 3.0), ridge=1.0)
    np.testing.assert_allclose(inv, np.eye(8), atol=1e-15)


def test_inverse_covariance_default_ridge_is_tiny():
    X = np.random.default_rng(2).normal(size=(500, 8))
    a = inverse_covariance(X, ridge=None)
    b = inverse_covariance(X, ridge=0.0)
    np.testing.assert_allclose(a, b, rtol=1e-4)


def test_fit_pools_all_classes():
    rng = np.random.default_rng(3)
    X = rng.normal(size=(60, 8)) + 1
    ts = TrainingSet(X, ["a"] * 30 + ["b"] * 30, [0] * 30 + [1] * 30)
    m = KnnModel.fit(ts, KnnConfig(1, "mahalanobis", 0.0, normalize_inputs=False), ridge=0.0)
    np.testing.assert_allclose(m.inv_cov, np.linalg.inv(np.cov(X.T)), rtol=1e-8)


# --- model construction ----------------------------------------------------

def test_model_validation():
    with pytest.raises(StructuralError):
        model_of(np.zeros((0, 8)), [])
    with pytest.raises(ConfigurationError):
        model_of(np.zeros((2, 8)), ["a", "b"], k=3)
    with pytest.raises(ConfigurationError):
        model_of(np.zeros((2, 8)), ["a", "b"], metric="mahalanobis")
    with pytest.raises(ConfigurationError):
        model_of(np.zeros((2, 8)), ["a", "b"], inv_cov=np.eye(8))
    with pytest.raises(ConfigurationError):
        KnnConfig(0)
    with pytest.raises(ConfigurationError):
        KnnConfig(1, "euclidean", -1)


def test_query_shape_checked():
    m = model_of(np.zeros((2, 8)), ["a", "b"])
    with pytest.raises(StructuralError):
        classify(m, np.zeros(7))
    with pytest.raises(StructuralError):
        classify_1nn(m, np.zeros(7))


# --- neighbour search ------------------------------------------------------

def test_k_nearest_all_references_sorted():
    R = np.array([[3.0], [1.0], [2.0], [1.0]])
    m = model_of(R, list("abcd"), k=4)
    assert k_nearest(m, np.array([0.0])) == [(1, 1.0), (3, 1.0), (2, 2.0), (0, 3.0)]


def test_k_nearest_query_on_reference():
    R = np.random.default_rng(4).normal(size=(20, 8))
    m = model_of(R, ["a"] * 20, k=3)
    assert k_nearest(m, R[7])[0] == (7, 0.0)


@pytest.mark.parametrize("metric", METRICS)
def test_k_nearest_matches_oracle(metric):
    rng = np.random.default_rng(5)
    R = rng.normal(size=(50, 8))
    inv = inverse_covariance(R) if metric == "mahalanobis" else None
    m = model_of(R, ["a"] * 50, k=5, metric=metric, inv_cov=inv)
    for _ in range(20):
        q = rng.normal(size=8)
        got = k_nearest(m, q)
        want = nearest_oracle(metric, R, q, 5, inv)
        assert [i for i, _ in got] == [i for i, _ in want]
        np.testing.assert_allclose([d for _, d in got], [d for _, d in want], rtol=1e-10)


# --- voting ----------------------------------------------------------------

def test_weights():
    assert np.array_equal(weights([1.0, 2.0], 0.0), [1.0, 1.0])
    np.testing.assert_allclose(weights([0.1, 1.0, 2.0], 2.0), [100.0, 1.0, 0.25])
    w = weights(np.linspace(0.1, 5, 50), 1.5)
    assert np.all(np.diff(w) < 0)


def test_k1_ignores_weighting():
    R = np.random.default_rng(6).normal(size=(30, 8))
    labels = [f"c{i % 4}" for i in range(30)]
    q = np.random.default_rng(7).normal(size=8)
    got = {classify(model_of(R, labels, 1, e=e), q) for e in (0, 0.5, 1, 2, 3)}
    assert len(got) == 1


def test_strict_majority_uniform():
    R = np.array([[0.0], [0.1], [0.2]])
    assert classify(model_of(R, ["A", "A", "B"], 3, e=0), np.array([0.05])) == "A"


def test_weighted_vote_example():
    R = np.array([[0.1], [1.0], [-1.0]])
    m = model_of(R, ["A", "B", "B"], 3, e=2.0)
    assert classify(m, np.array([0.0])) == "A"
    assert classify(m.with_config(KnnConfig(3, "euclidean", 0.0, False)), np.array([0.0])) == "B"


def test_zero_distance_neighbours_decide():
    R = np.array([[0.0], [0.0], [0.0], [0.001], [0.001]])
    m = model_of(R, ["B", "A", "A", "B", "B"], 5, e=2.0)
    assert classify(m, np.array([0.0])) == "A"
    m = model_of(R, ["B", "A", "C", "B", "B"], 5, e=2.0)
    assert classify(m, np.array([0.0])) == "B"


def test_vote_tie_goes_to_closest_member_then_class_order():
    R = np.array([[1.0], [-1.5], [1.5], [-1.0]])
    m = model_of(R, ["B", "A", "A", "B"], 4, e=0)
    assert classify(m, np.array([0.0])) == "B"
    R = np.array([[1.0], [-1.0]])
    m = model_of(R, ["B", "A"], 2, e=0, classes=["A", "B"])
    assert classify(m, np.array([0.0])) == "A"


def test_classify_matches_oracle_small():
    rng = np.random.default_rng(8)
    for metric in METRICS:
        for e in (0.0, 0.5, 2.0):
            for k in (1, 3, 5):
                for _ in range(40):
                    R, labels, classes, q = random_case(rng, max_n=40, k=k)
                    inv = inverse_covariance(R, ridge=1e-3) if metric == "mahalanobis" else None
                    m = model_of(R, labels, k, metric, e, inv, classes)
                    assert classify(m, q) == knn_oracle(metric, R, labels, classes, q, k, e, inv)


def test_classify_many_matches_classify():
    rng = np.random.default_rng(9)
    R = rng.normal(size=(60, 8))
    labels = [f"c{i % 3}" for i in range(60)]
    m = model_of(R, labels, 5, e=1.0)
    Q = rng.normal(size=(25, 8))
    assert classify_many(m, Q) == [classify(m, q) for q in Q]


def test_classify_is_deterministic():
    R = np.random.default_rng(10).normal(size=(40, 8))
    m = model_of(R, [f"c{i % 5}" for i in range(40)], 7, e=0.5)
    q = np.ones(8)
    assert len({classify(m, q) for _ in range(20)}) == 1


# --- 1-NN fast path --------------------------------------------------------

@pytest.mark.parametrize("metric", METRICS)
def test_1nn_matches_classify(metric):
    rng = np.random.default_rng(11)
    for _ in range(200):
        R, labels, classes, q = random_case(rng, max_n=60)
        inv = inverse_covariance(R, ridge=1e-3) if metric == "mahalanobis" else None
        m = model_of(R, labels, 1, metric, 2.0, inv, classes)
        assert classify_1nn(m, q) == classify(m, q)


def test_1nn_tie_goes_to_lower_index():
    R = np.array([[1.0, 0.0], [-1.0, 0.0], [0.0, 1.0]])
    m = model_of(R, ["x", "y", "z"])
    assert classify_1nn(m, np.zeros(2)) == "x"
    assert classify(m, np.zeros(2)) == "x"


class CountingFloat(float):
    count = 0

    def __lt__(self, other):
        CountingFloat.count += 1
        return float.__lt__(self, other)


def test_min_search_uses_fewer_comparisons_than_sorting():
    rng = np.random.default_rng(12)
    vals = [CountingFloat(v) for v in rng.random(10_000)]
    CountingFloat.count = 0
    i = min_search(vals)
    scan = CountingFloat.count
    CountingFloat.count = 0
    order = sorted(range(len(vals)), key=lambda j: vals[j])
    by_sort = CountingFloat.count
    assert i == order[0]
    assert scan == len(vals) - 1
    assert scan * 5 < by_sort


def test_min_search_first_minimum():
    assert min_search([3, 1, 2, 1]) == 1
    with pytest.raises(StructuralError):
        min_search([])


# --- regression ------------------------------------------------------------

def test_regress_examples():
    R = np.array([[1.0], [2.0], [-2.0]])
    Y = np.array([[3.0], [0.0], [0.0]])
    assert regress(model_of(R, ["a"] * 3, 1), np.array([0.0]), Y).tolist() == [3.0]
    assert regress(model_of(R, ["a"] * 3, 3, e=1.0), np.array([0.0]), Y) == pytest.approx([1.5])
    R2 = np.array([[1.0], [-1.0]])
    Y2 = np.array([[0.0], [1.0]])
    assert regress(model_of(R2, ["a"] * 2, 2), np.array([0.0]), Y2) == pytest.approx([0.5])


def test_regress_zero_distance():
    R = np.array([[0.0], [1.0]])
    Y = np.array([[2.0], [10.0]])
    assert regress(model_of(R, ["a"] * 2, 2, e=2.0), np.array([0.0]), Y).tolist() == [2.0]
