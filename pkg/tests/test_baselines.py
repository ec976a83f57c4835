import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

import oracles
from bikedemand.baselines import KnnModel, RidgeModel, knn_predict, ridge_fit, ridge_solve
from bikedemand.divergence import normalize
from bikedemand.dwt import lowpass_matrix
from bikedemand.grid import InvalidInputError
from bikedemand.model import decode, softplus


def test_ridge_normal_equations_oracle():
    rng = np.random.default_rng(0)
    X, Y = rng.normal(size=(5, 3)), rng.normal(size=(5, 2))
    W, b = ridge_solve(X, Y, 0.1)
    # augmented system with an unpenalized intercept column
    A = np.hstack([X, np.ones((5, 1))])
    R = np.diag([0.1, 0.1, 0.1, 0.0])
    sol = np.linalg.solve(A.T @ A + R, A.T @ Y)
    np.testing.assert_allclose(W, sol[:3], atol=1e-12)
    np.testing.assert_allclose(b, sol[3], atol=1e-12)


def test_ridge_interpolates_linear_targets():
    rng = np.random.default_rng(1)
    X = rng.normal(size=(40, 4))
    Y = X @ rng.normal(size=(4, 3)) + [1.0, -2.0, 0.5]
    W, b = ridge_solve(X, Y, 1e-8)
    assert np.max(np.abs(X @ W + b - Y)) < 1e-6


def test_ridge_shrinkage_limit():
    rng = np.random.default_rng(2)
    X = rng.normal(size=(30, 4))
    P = normalize(rng.random((30, 8)))
    m = ridge_fit(X, P, 1e12)
    assert np.max(np.abs(m.weights)) < 1e-9
    M = lowpass_matrix("db2", 8)
    expect = decode(m.bias[None], M)[0]
    np.testing.assert_allclose(m.predict(X[:3]), np.tile(expect, (3, 1)), atol=1e-9)
    s = softplus(m.bias @ M) + 1e-6
    np.testing.assert_allclose(expect, s / s.sum(), rtol=1e-12)


def test_ridge_residual_monotone_in_lambda():
    rng = np.random.default_rng(3)
    X, Y = rng.normal(size=(25, 5)), rng.normal(size=(25, 3))
    res = []
    for lam in (1e-6, 1e-3, 0.1, 1, 10, 1e3, 1e6):
        W, b = ridge_solve(X, Y, lam)
        res.append(np.linalg.norm(X @ W + b - Y))
    assert all(b >= a - 1e-12 for a, b in zip(res, res[1:]))


def test_ridge_errors_and_json():
    with pytest.raises(InvalidInputError):
        ridge_solve(np.zeros((0, 2)), np.zeros((0, 2)))
    with pytest.raises(InvalidInputError):
        ridge_solve(np.zeros((3, 2)), np.zeros((3, 1)), 0.0)
    rng = np.random.default_rng(4)
    m = ridge_fit(rng.normal(size=(10, 3)), normalize(rng.random((10, 8))))
    back = RidgeModel.from_json(json.loads(json.dumps(m.to_json())))
    Q = rng.normal(size=(4, 3))
    assert np.array_equal(back.predict(Q), m.predict(Q))
    p = m.predict(Q)
    assert np.all(p > 0) and np.allclose(p.sum(axis=1), 1, atol=1e-12)


def test_knn_k1_exact_row():
    rng = np.random.default_rng(5)
    X, P = rng.normal(size=(12, 4)), normalize(rng.random((12, 8)))
    out, flags = knn_predict(X[7], X, P, 1)
    np.testing.assert_allclose(out[0], P[7], rtol=1e-14)
    assert not flags[0]


def test_knn_all_is_global_mean():
    rng = np.random.default_rng(6)
    X, P = rng.normal(size=(12, 4)), normalize(rng.random((12, 8)))
    out, _ = knn_predict(rng.normal(size=4), X, P, 12)
    np.testing.assert_allclose(out[0], P.mean(axis=0) / P.mean(axis=0).sum(), rtol=1e-13)
    big, _ = knn_predict(rng.normal(size=4), X, P, 50)
    np.testing.assert_allclose(big[0], out[0], rtol=1e-13)


def test_knn_zero_query_uniform():
    X, P = np.eye(3), normalize(np.random.default_rng(7).random((3, 6)))
    out, flags = knn_predict(np.zeros(3), X, P, 2)
    assert flags[0] and np.all(out[0] == 1 / 6)


def test_knn_tie_lower_index():
    X = np.array([[1.0, 0.0], [2.0, 0.0], [0.0, 1.0]])  # rows 0 and 1 have identical cosine
    P = normalize(np.array([[1.0, 0, 0], [0, 1.0, 0], [0, 0, 1.0]]), 1e-6)
    out, _ = knn_predict([3.0, 0.0], X, P, 1)
    np.testing.assert_allclose(out[0], P[0])


def test_knn_errors():
    with pytest.raises(InvalidInputError):
        knn_predict([1.0], np.zeros((0, 1)), np.zeros((0, 4)))
    with pytest.raises(InvalidInputError):
        knn_predict([1.0], np.ones((2, 1)), np.ones((2, 4)) / 4, 0)


@given(arrays(np.float64, (15, 3), elements=st.floats(-5, 5)), arrays(np.float64, 3, elements=st.floats(-5, 5)),
       st.integers(1, 15))
def test_knn_matches_scan(X, q, K):
    P = normalize(np.abs(np.sin(np.arange(15 * 6).reshape(15, 6))) + 0.01)
    if np.linalg.norm(q) == 0:
        return
    out, _ = knn_predict(q, X, P, K)
    ref, _ = oracles.knn_scan(q, X, P, K)
    np.testing.assert_allclose(out[0], ref, rtol=1e-9, atol=1e-12)


def test_knn_training_permutation_invariant():
    rng = np.random.default_rng(8)
    X, P = rng.normal(size=(20, 4)), normalize(rng.random((20, 8)))
    Q = rng.normal(size=(5, 4))
    perm = rng.permutation(20)
    a = KnnModel(X, P, 5).predict(Q)
    b = KnnModel(X[perm], P[perm], 5).predict(Q)
    np.testing.assert_allclose(a, b, rtol=1e-13)
    back = KnnModel.from_json(json.loads(json.dumps(KnnModel(X, P, 5).to_json())))
    assert np.array_equal(back.predict(Q), a)
