import numpy as np
import pytest

from bcf3l.core_data import RngSpec, make_rng
from bcf3l.propensity import (
    PropensityError,
    encode_features,
    fit_generalized_propensity,
    pihat_columns,
    predict_propensity,
)


def test_intercept_only_marginal_frequencies():
    T = np.repeat([0, 1, 2], [50, 30, 20])
    X = np.zeros((100, 0))
    model = fit_generalized_propensity(X, None, T, ridge_lambda=0.0)
    P = predict_propensity(model, X)
    np.testing.assert_allclose(P, np.tile([0.5, 0.3, 0.2], (100, 1)), atol=1e-6)


def test_coefficient_recovery_within_3_se():
    rng = make_rng(RngSpec(21))
    n = 5000
    X = rng.standard_normal((n, 2))
    true = np.array([[0.3, 0.8, -0.5], [-0.2, -0.4, 0.9]])  # (2, q=3)
    F = np.hstack([np.ones((n, 1)), X])
    scores = np.hstack([np.zeros((n, 1)), F @ true.T])
    P = np.exp(scores - scores.max(axis=1, keepdims=True))
    P /= P.sum(axis=1, keepdims=True)
    u = rng.random(n)
    T = (u[:, None] > np.cumsum(P, axis=1)).sum(axis=1)
    model = fit_generalized_propensity(X, None, T, ridge_lambda=0.0)
    # standard errors from the inverse observed information
    Pf = predict_propensity(model, X)
    q = F.shape[1]
    H = np.empty((2 * q, 2 * q))
    for a in range(2):
        for b in range(2):
            w = Pf[:, a + 1] * ((a == b) - Pf[:, b + 1])
            H[a * q:(a + 1) * q, b * q:(b + 1) * q] = F.T @ (F * w[:, None])
    se = np.sqrt(np.diag(np.linalg.inv(H))).reshape(2, q)
    assert (np.abs(model.coefficients - true) < 3.0 * se).all()


def test_large_ridge_shrinks_non_intercept():
    rng = make_rng(RngSpec(22))
    X = rng.standard_normal((200, 3))
    T = rng.integers(0, 3, 200)
    model = fit_generalized_propensity(X, None, T, ridge_lambda=1e8)
    assert np.abs(model.coefficients[:, 1:]).max() < 1e-4
    assert np.abs(model.coefficients[:, 0]).max() < 10  # intercept free


def test_zero_coefficients_give_uniform():
    from bcf3l.propensity import PropensityModel

    model = PropensityModel(
        coefficients=np.zeros((2, 3)), n_covariates=2, n_other_factors=0,
        ridge_lambda=0.0,
    )
    P = predict_propensity(model, np.array([[1.0, -2.0]]))
    np.testing.assert_allclose(P, [[1 / 3, 1 / 3, 1 / 3]], atol=1e-15)


def test_probabilities_sum_to_one_and_positive():
    rng = make_rng(RngSpec(23))
    X = rng.standard_normal((300, 4))
    T_other = rng.integers(0, 3, (300, 2))
    T = rng.integers(0, 3, 300)
    model = fit_generalized_propensity(X, T_other, T)
    P = predict_propensity(model, X, T_other)
    assert np.abs(P.sum(axis=1) - 1.0).max() < 1e-12
    assert (P > 0).all() and (P < 1).all()
    np.testing.assert_array_equal(pihat_columns(model, X, T_other), P[:, 1:])


def test_monotonicity_in_feature():
    from bcf3l.propensity import PropensityModel

    coef = np.array([[0.0, 0.0], [0.0, 2.0]])  # level 2 rises with x1
    model = PropensityModel(coef, 1, 0, 0.0)
    P = predict_propensity(model, np.array([[0.0], [1.0], [2.0]]))
    assert (np.diff(P[:, 2]) > 0).all()


def test_score_equation_identity_unpenalized():
    # fitted average probabilities equal observed level frequencies
    rng = make_rng(RngSpec(24))
    X = rng.standard_normal((400, 3))
    T = rng.integers(0, 3, 400)
    model = fit_generalized_propensity(X, None, T, ridge_lambda=0.0)
    P = predict_propensity(model, X)
    freq = np.bincount(T, minlength=3) / 400
    assert np.abs(P.mean(axis=0) - freq).max() < 1e-6


def test_deterministic_refit():
    rng = make_rng(RngSpec(25))
    X = rng.standard_normal((150, 2))
    T = rng.integers(0, 3, 150)
    c1 = fit_generalized_propensity(X, None, T).coefficients
    c2 = fit_generalized_propensity(X, None, T).coefficients
    assert np.abs(c1 - c2).max() < 1e-10


def test_missing_level_error():
    X = np.zeros((10, 1))
    with pytest.raises(PropensityError, match="missing"):
        fit_generalized_propensity(X, None, np.zeros(10, dtype=int))


def test_separation_error():
    # perfectly separable levels with no penalty diverge
    x = np.linspace(-3, 3, 60)[:, None]
    T = np.repeat([0, 1, 2], 20)
    with pytest.raises(PropensityError, match="ridge_lambda"):
        fit_generalized_propensity(x, None, T, ridge_lambda=0.0, max_iter=2000)


def test_encoding_mismatch_error():
    rng = make_rng(RngSpec(26))
    X = rng.standard_normal((90, 2))
    T = rng.integers(0, 3, 90)
    model = fit_generalized_propensity(X, None, T)
    with pytest.raises(PropensityError, match="mismatch"):
        predict_propensity(model, rng.standard_normal((5, 4)))


def test_encode_features_layout():
    X = np.array([[1.0], [2.0]])
    T_other = np.array([[1], [2]])
    F = encode_features(X, T_other)
    np.testing.assert_array_equal(F, [[1, 1, 1, 0], [1, 2, 0, 1]])
