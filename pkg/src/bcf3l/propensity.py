"""Generalized propensity scores for the three-level exposure.

Multinomial logistic regression (reference level 0) fit by ridge-penalized
Newton iterations; the intercept is never penalized. Features are the
covariates plus two dummies per other-factor exposure.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class PropensityError(RuntimeError):
    pass


def encode_features(X, T_other=None):
    """Design matrix [1 | X | dummies(T_other levels 1, 2)]."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    n = X.shape[0]
    cols = [np.ones((n, 1))]
    if X.shape[1]:
        cols.append(X)
    if T_other is not None:
        T_other = np.atleast_2d(np.asarray(T_other))
        if T_other.shape[0] != n:
            T_other = T_other.T
        for j in range(T_other.shape[1]):
            cols.append((T_other[:, j] == 1).astype(float)[:, None])
            cols.append((T_other[:, j] == 2).astype(float)[:, None])
    return np.hstack(cols)


@dataclass(frozen=True)
class PropensityModel:
    coefficients: np.ndarray  # (2, q): rows for levels 1 and 2 vs reference 0
    n_covariates: int
    n_other_factors: int
    ridge_lambda: float

    def design(self, X, T_other=None):
        F = encode_features(X, T_other)
        if F.shape[1] != self.coefficients.shape[1]:
            raise PropensityError(
                f"feature encoding mismatch: got {F.shape[1]} columns, "
                f"model expects {self.coefficients.shape[1]}"
            )
        return F


def _probs(F, coef):
    """Softmax over levels {0, 1, 2} with level-0 scores fixed at zero."""
    scores = np.hstack([np.zeros((F.shape[0], 1)), F @ coef.T])
    scores -= scores.max(axis=1, keepdims=True)
    e = np.exp(scores)
    return e / e.sum(axis=1, keepdims=True)


def fit_generalized_propensity(X, T_other, T_j, ridge_lambda=1e-4, tol=1e-8, max_iter=100):
    """Fit pi_t = P(T_j = t | X, T_other) by penalized Newton iterations."""
    T_j = np.asarray(T_j).ravel().astype(np.int64)
    counts = np.bincount(T_j, minlength=3)
    if (counts == 0).any():
        raise PropensityError(f"missing exposure level(s): {np.where(counts == 0)[0].tolist()}")
    F = encode_features(X, T_other)
    n, q = F.shape
    Ymat = np.zeros((n, 2))
    Ymat[:, 0] = T_j == 1
    Ymat[:, 1] = T_j == 2
    pen = np.full(q, float(ridge_lambda))
    pen[0] = 0.0  # intercept unpenalized

    coef = np.zeros((2, q))
    for _ in range(max_iter):
        P = _probs(F, coef)
        grad = F.T @ (Ymat - P[:, 1:]) - pen[None, :].T * coef.T  # (q, 2)
        g = grad.T.ravel()
        if np.linalg.norm(g) < tol:
            break
        # block Hessian over the stacked (2q,) coefficient vector
        H = np.empty((2 * q, 2 * q))
        for a in range(2):
            for b in range(2):
                w = P[:, a + 1] * ((a == b) - P[:, b + 1])
                H[a * q:(a + 1) * q, b * q:(b + 1) * q] = F.T @ (F * w[:, None])
        H += np.diag(np.tile(pen, 2))
        try:
            step = np.linalg.solve(H + 1e-12 * np.eye(2 * q), g)
        except np.linalg.LinAlgError as exc:
            raise PropensityError(f"singular Newton system: {exc}") from exc
        coef = coef + step.reshape(2, q)
        if not np.isfinite(coef).all() or np.abs(coef).max() > 1e8:
            raise PropensityError(
                "divergent coefficients (possible perfect separation); "
                "increase ridge_lambda"
            )
    # under separation the gradient vanishes once probabilities saturate,
    # so divergence must be detected from the fitted probabilities too
    if _probs(F, coef).min() < 1e-12:
        raise PropensityError(
            "fitted probabilities numerically 0 (possible perfect "
            "separation); increase ridge_lambda"
        )
    d = np.atleast_2d(np.asarray(X, dtype=float)).shape[1]
    n_other = (q - 1 - d) // 2
    return PropensityModel(
        coefficients=coef, n_covariates=d, n_other_factors=n_other,
        ridge_lambda=float(ridge_lambda),
    )


def predict_propensity(model, X, T_other=None):
    """Per-unit probability triple (pi0, pi1, pi2); rows sum to 1."""
    F = model.design(X, T_other)
    return _probs(F, model.coefficients)


def pihat_columns(model, X, T_other=None):
    """The (pi1, pi2) pair entering the baseline surface."""
    return predict_propensity(model, X, T_other)[:, 1:]
