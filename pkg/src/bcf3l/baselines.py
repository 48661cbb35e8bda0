"""Comparator estimators: horseshoe Bayesian linear regression and a
single-surface BART over three exposure levels.

Both emit effect draws in the same shape as the causal-forest posterior
(``tau01_draws`` / ``tau12_draws`` of shape (n_save, n)) so the evaluation
harness treats all methods identically.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .bart import Forest, ForestConfig, default_sigma_prior, sample_sigma2
from .bcf import Bcf3lError, other_factor_dummies

INTERCEPT_PRIOR_VAR = 1e4  # the intercept is not shrunk


@dataclass(frozen=True)
class HorseshoeConfig:
    n_burn: int = 1000
    n_save: int = 1000
    thin: int = 1
    global_scale: float = 1.0
    interactions: bool = True

    def __post_init__(self):
        if self.n_save < 1 or self.n_burn < 0 or self.thin < 1:
            raise ValueError("invalid MCMC lengths")


def fit_blr_horseshoe(Y, design, cfg, rng):
    """Gibbs sampler for linear regression with horseshoe-shrunk coefficients.

    Uses the fully conjugate auxiliary inverse-gamma hierarchy for the local
    scales and the global scale; column 0 (intercept) gets a fixed wide normal
    prior instead of shrinkage. Returns coefficient draws (n_save, q).
    """
    Y = np.asarray(Y, dtype=float).ravel()
    D = np.atleast_2d(np.asarray(design, dtype=float))
    n, q = D.shape
    DtD = D.T @ D
    Dty = D.T @ Y

    lam2 = np.ones(q - 1)
    nu_aux = np.ones(q - 1)
    tau2 = 1.0
    xi = 1.0
    sigma2 = float(np.var(Y)) or 1.0
    beta = np.zeros(q)

    def ig(shape, rate):
        return rate / rng.gamma(shape, 1.0)

    draws = np.empty((cfg.n_save, q))
    kept = 0
    total = cfg.n_burn + cfg.n_save * cfg.thin
    for it in range(total):
        prior_prec = np.empty(q)
        prior_prec[0] = 1.0 / INTERCEPT_PRIOR_VAR
        prior_prec[1:] = 1.0 / (tau2 * lam2)
        A = DtD + np.diag(prior_prec)
        chol = np.linalg.cholesky(A)
        m = np.linalg.solve(A, Dty)
        z = rng.standard_normal(q)
        beta = m + np.sqrt(sigma2) * np.linalg.solve(chol.T, z)

        resid = Y - D @ beta
        rate = 0.5 * float(resid @ resid) + 0.5 * float(beta @ (prior_prec * beta))
        sigma2 = ig(0.5 * (n + q), rate)

        b2 = beta[1:] ** 2
        lam2 = np.array([
            ig(1.0, 1.0 / nu_aux[k] + b2[k] / (2.0 * tau2 * sigma2))
            for k in range(q - 1)
        ])
        nu_aux = np.array([ig(1.0, 1.0 + 1.0 / lam2[k]) for k in range(q - 1)])
        tau2 = ig(0.5 * q, 1.0 / xi + float((b2 / lam2).sum()) / (2.0 * sigma2))
        xi = ig(1.0, 1.0 / cfg.global_scale ** 2 + 1.0 / tau2)

        if not np.isfinite(beta).all():
            raise Bcf3lError(f"non-finite coefficients at iteration {it}")
        if it >= cfg.n_burn and (it - cfg.n_burn) % cfg.thin == 0 and kept < cfg.n_save:
            draws[kept] = beta
            kept += 1
    return draws


def blr_design(X, T_j, T_other, interactions=True):
    """[1 | X | 1{t>0} | 1{t>1} | other-factor dummies | X interactions].

    Cumulative exposure indicators make the two indicator blocks read directly
    as the two effect contrasts.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    T_j = np.asarray(T_j).ravel()
    n = X.shape[0]
    d1 = (T_j > 0).astype(float)
    d2 = (T_j > 1).astype(float)
    parts = [np.ones((n, 1)), X, d1[:, None], d2[:, None]]
    dums = other_factor_dummies(T_other)
    if dums.shape[1]:
        parts.append(dums)
    if interactions and X.shape[1]:
        parts.append(X * d1[:, None])
        parts.append(X * d2[:, None])
    return np.hstack(parts)


@dataclass
class LinearEffectPosterior:
    tau01_draws: np.ndarray
    tau12_draws: np.ndarray
    coef_draws: np.ndarray

    @property
    def n_save(self):
        return self.tau01_draws.shape[0]


def fit_blr3l(Y, X, T_j, T_other, cfg, rng):
    """Horseshoe regression baseline; effects are linear functions of x."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    n, d = X.shape
    D = blr_design(X, T_j, T_other, cfg.interactions)
    coefs = fit_blr_horseshoe(Y, D, cfg, rng)

    i_d1 = 1 + d
    i_d2 = i_d1 + 1
    dums = other_factor_dummies(T_other)
    i_int1 = i_d2 + 1 + dums.shape[1]
    tau01 = np.repeat(coefs[:, i_d1][:, None], n, axis=1)
    tau12 = np.repeat(coefs[:, i_d2][:, None], n, axis=1)
    if cfg.interactions and d:
        tau01 = tau01 + coefs[:, i_int1:i_int1 + d] @ X.T
        tau12 = tau12 + coefs[:, i_int1 + d:i_int1 + 2 * d] @ X.T
    return LinearEffectPosterior(tau01_draws=tau01, tau12_draws=tau12, coef_draws=coefs)


@dataclass(frozen=True)
class Bart3lConfig:
    n_trees: int = 200
    eta: float = 0.95
    beta: float = 2.0
    leaf_k: float = 2.0
    n_burn: int = 1000
    n_save: int = 1000
    thin: int = 1
    nu_sig: float = 3.0
    lambda_sig: float = None

    def __post_init__(self):
        if self.n_trees < 1:
            raise ValueError("n_trees must be >= 1")
        if self.n_save < 1 or self.n_burn < 0 or self.thin < 1:
            raise ValueError("invalid MCMC lengths")


@dataclass
class Bart3lPosterior:
    tau01_draws: np.ndarray
    tau12_draws: np.ndarray
    yhat_draws: np.ndarray
    sigma2_draws: np.ndarray

    @property
    def n_save(self):
        return self.tau01_draws.shape[0]


def _bart3l_features(X, T_j, T_other):
    X = np.atleast_2d(np.asarray(X, dtype=float))
    T_j = np.asarray(T_j).ravel()
    parts = [X, (T_j == 1).astype(float)[:, None], (T_j == 2).astype(float)[:, None]]
    dums = other_factor_dummies(T_other)
    if dums.shape[1]:
        parts.append(dums)
    return np.hstack(parts)


def fit_bart3l(Y, X, T_j, T_other, cfg, rng):
    """Single sum-of-trees surface f(x, t); effects by counterfactual contrast.

    At every saved draw the forest is evaluated with the exposure dummies
    forced to levels 0, 1 and 2, so tau01 = f(x, 1) - f(x, 0) and
    tau12 = f(x, 2) - f(x, 1) per draw.
    """
    Y = np.asarray(Y, dtype=float).ravel()
    T_j = np.asarray(T_j).ravel().astype(np.int64)
    n = Y.size
    counts = np.bincount(T_j, minlength=3)
    if (counts == 0).any():
        raise Bcf3lError(
            f"exposure level(s) {np.where(counts == 0)[0].tolist()} absent"
        )
    F = _bart3l_features(X, T_j, T_other)
    F0 = _bart3l_features(X, np.zeros(n, dtype=int), T_other)
    F1 = _bart3l_features(X, np.ones(n, dtype=int), T_other)
    F2 = _bart3l_features(X, np.full(n, 2, dtype=int), T_other)

    y_lo, y_hi = Y.min(), Y.max()
    scale = (y_hi - y_lo) if y_hi > y_lo else 1.0
    ys = (Y - y_lo) / scale - 0.5

    fcfg = ForestConfig(
        n_trees=cfg.n_trees, eta=cfg.eta, beta=cfg.beta,
        leaf_sd=0.5 / (cfg.leaf_k * np.sqrt(cfg.n_trees)),
    )
    forest = Forest(F, fcfg)
    nu_sig, lambda_sig = cfg.nu_sig, cfg.lambda_sig
    if lambda_sig is None:
        nu_sig, lambda_sig = default_sigma_prior(ys, cfg.nu_sig)
    sigma2 = float(np.var(ys)) or 1.0

    t1 = np.empty((cfg.n_save, n))
    t2 = np.empty((cfg.n_save, n))
    yhat = np.empty((cfg.n_save, n))
    s2 = np.empty(cfg.n_save)
    kept = 0
    total = cfg.n_burn + cfg.n_save * cfg.thin
    for it in range(total):
        forest.sweep(ys, sigma2, rng)
        sigma2 = sample_sigma2(ys - forest.total_fit, nu_sig, lambda_sig, rng)
        if it >= cfg.n_burn and (it - cfg.n_burn) % cfg.thin == 0 and kept < cfg.n_save:
            f0 = forest.predict(F0)
            f1 = forest.predict(F1)
            f2 = forest.predict(F2)
            t1[kept] = (f1 - f0) * scale
            t2[kept] = (f2 - f1) * scale
            yhat[kept] = (forest.total_fit + 0.5) * scale + y_lo
            s2[kept] = sigma2 * scale ** 2
            kept += 1
    return Bart3lPosterior(
        tau01_draws=t1, tau12_draws=t2, yhat_draws=yhat, sigma2_draws=s2
    )
