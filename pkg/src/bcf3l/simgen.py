"""Synthetic data generators with ground-truth effect surfaces attached."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .exposure import build_exposure_matrix


@dataclass
class SimDataset:
    X: np.ndarray
    T: np.ndarray              # (n,) for scenarios 1-2, (n, J) for scenario 3
    Y: np.ndarray
    true_mu: np.ndarray
    true_tau01: np.ndarray     # (n,) or (n, J)
    true_tau12: np.ndarray
    scenario: int
    sigma_eps: float
    Z: np.ndarray = None       # raw treatment matrix (scenario 3)
    true_loadings: np.ndarray = None
    true_scores: np.ndarray = None
    extras: dict = field(default_factory=dict)


def gen_covariates(n, rng):
    """Five covariates: N(0,1), N(0,4), N(0,9), Bern(0.7), Bern(0.5)."""
    X = np.empty((n, 5))
    X[:, 0] = rng.normal(0.0, 1.0, n)
    X[:, 1] = rng.normal(0.0, 2.0, n)
    X[:, 2] = rng.normal(0.0, 3.0, n)
    X[:, 3] = rng.random(n) < 0.7
    X[:, 4] = rng.random(n) < 0.5
    return X


def treatment_scores(X):
    """Raw per-level scores (x1 + x2, 0.4 x2 - x1, 1 - 0.1 x3 + x4)."""
    return np.column_stack([
        X[:, 0] + X[:, 1],
        0.4 * X[:, 1] - X[:, 0],
        1.0 - 0.1 * X[:, 2] + X[:, 3],
    ])


def assign_treatment_s12(X, rng):
    """Three-level assignment with probabilities softmax(scores).

    The raw scores can be negative, so "proportional to" is realized through
    the softmax: the only shift-invariant strictly positive normalization.
    """
    s = treatment_scores(X)
    s = s - s.max(axis=1, keepdims=True)
    p = np.exp(s)
    p /= p.sum(axis=1, keepdims=True)
    u = rng.random(X.shape[0])
    cum = np.cumsum(p, axis=1)
    return (u[:, None] > cum).sum(axis=1).astype(np.int64)


def _scenario12(n, sigma_eps, rng, scenario):
    X = gen_covariates(n, rng)
    T = assign_treatment_s12(X, rng)
    x1, x2, x3, x4, x5 = X.T
    if scenario == 1:
        mu = 2.0 - np.exp(x1 / 3.0) + 1.5 * x4 * x5 - 2.0 * (1 - x4) * (1 - x5)
        tau01 = 0.2 * x4
        tau12 = 1.0 + 0.2 * x2 * x5 + 0.7 * x1 * x4
    else:
        mu = 2.0 - np.abs(x1 / 3.0 - 1.0) + 1.5 * x4 * x5 - 2.0 * (1 - x4) * (1 - x5)
        tau01 = 0.1 * x2
        tau12 = 1.0 + 0.5 * np.abs(x3) + 0.7 * x2 * x4
    eps = rng.normal(0.0, sigma_eps, n) if sigma_eps > 0 else np.zeros(n)
    Y = mu + tau01 * (T > 0) + tau12 * (T > 1) + eps
    return SimDataset(
        X=X, T=T, Y=Y, true_mu=mu, true_tau01=tau01, true_tau12=tau12,
        scenario=scenario, sigma_eps=sigma_eps,
    )


def gen_scenario1(n, sigma_eps=1.0, rng=None):
    return _scenario12(n, sigma_eps, rng, 1)


def gen_scenario2(n, sigma_eps=1.0, rng=None):
    return _scenario12(n, sigma_eps, rng, 2)


def gen_null_scenario(n, sigma_eps=1.0, rng=None):
    """Scenario 1 structure with both effect surfaces forced to zero."""
    data = _scenario12(n, sigma_eps, rng, 1)
    eps = data.Y - (
        data.true_mu
        + data.true_tau01 * (data.T > 0)
        + data.true_tau12 * (data.T > 1)
    )
    zeros = np.zeros(n)
    return SimDataset(
        X=data.X, T=data.T, Y=data.true_mu + eps, true_mu=data.true_mu,
        true_tau01=zeros, true_tau12=zeros, scenario=1, sigma_eps=sigma_eps,
        extras={"null": True},
    )


def make_sparse_loadings(p, J, rng):
    """Uniform[0.6, 1] magnitudes, half sign-flipped, one fifth zeroed."""
    lam = rng.uniform(0.6, 1.0, size=(p, J))
    flat = lam.ravel()
    k = flat.size
    flip = rng.permutation(k)[: k // 2]
    flat[flip] *= -1.0
    zero = rng.permutation(k)[: k // 5]
    flat[zero] = 0.0
    return flat.reshape(p, J)


def gen_scenario3(n, p=20, J=4, sigma_eps=0.5, psi=0.2, rng=None):
    """Factor-structured treatments; all four factors discretized to tertiles."""
    X = gen_covariates(n, rng)
    Lam = make_sparse_loadings(p, J, rng)
    scores = rng.standard_normal((n, J))
    Z = scores @ Lam.T + rng.normal(0.0, np.sqrt(psi), size=(n, p))
    T = build_exposure_matrix(scores).T

    x1, x2, x3 = X[:, 0], X[:, 1], X[:, 2]
    tau01 = np.column_stack([0.5 * x1, 0.2 * x1, -0.2 * x3, 0.2 * x2])
    tau12 = np.column_stack([0.1 * x2, 0.3 * x3, -x2 / 3.0, 0.4 * x1])
    mu = np.full(n, 2.0)
    eps = rng.normal(0.0, sigma_eps, n) if sigma_eps > 0 else np.zeros(n)
    Y = mu + eps
    for j in range(J):
        Y = Y + tau01[:, j] * (T[:, j] > 0) + tau12[:, j] * (T[:, j] > 1)
    return SimDataset(
        X=X, T=T, Y=Y, true_mu=mu, true_tau01=tau01, true_tau12=tau12,
        scenario=3, sigma_eps=sigma_eps, Z=Z, true_loadings=Lam,
        true_scores=scores,
    )
