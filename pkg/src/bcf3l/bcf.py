"""Three-level Bayesian causal forest.

Backfitting sampler for
``Y = mu(x, t_other, pihat) + tau01(x, t_other) * 1{t > 0}
    + tau12(x, t_other) * 1{t > 1} + eps``
with independent regularized tree-ensemble priors on the baseline surface and
the two effect surfaces. Effect-surface trees train only on the rows whose
indicator is active; their cutpoint grids still use every row so that
counterfactual prediction stays well defined.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .bart import Forest, ForestConfig, default_sigma_prior, predict_trees, sample_sigma2


class Bcf3lError(RuntimeError):
    pass


@dataclass(frozen=True)
class Bcf3lConfig:
    b_mu: int = 200
    b_tau: int = 50
    mu_eta: float = 0.95
    mu_beta: float = 2.0
    tau_eta: float = 0.25
    tau_beta: float = 3.0
    # Per-surface leaf scalers: leaf_sd = 0.5 / (k * sqrt(b)). The scalers
    # implement the causal-forest convention that the prognostic surface is
    # the loosest component and effect surfaces are shrunk toward the
    # no-effect model. mu gets k=1 (total prior sd 0.5 x outcome range) so
    # that confounded level variation - including what the trees cannot
    # identify in weak-overlap regions - is absorbed by the baseline rather
    # than by the effects. tau01 is shrunk hardest (total prior sd ~0.016 x
    # range, ~0.1 sd(Y)) because it is the only effect surface competing
    # with mu for the control level, the channel through which
    # regularization-induced confounding leaks. tau12 contrasts two treated
    # arms and keeps the standard k=2 calibration so heterogeneous
    # between-arm effects are not attenuated.
    mu_leaf_k: float = 1.0
    tau01_leaf_k: float = 32.0
    tau12_leaf_k: float = 2.0
    n_burn: int = 1000
    n_save: int = 1000
    thin: int = 1
    nu_sig: float = 3.0
    lambda_sig: float = None  # derived from the rescaled outcome when None
    keep_trees: bool = False

    def __post_init__(self):
        if self.b_mu < 1 or self.b_tau < 1:
            raise ValueError("tree counts must be >= 1")
        if self.n_save < 1 or self.n_burn < 0 or self.thin < 1:
            raise ValueError("invalid MCMC lengths")


@dataclass
class Bcf3lPosterior:
    mu_draws: np.ndarray       # (n_save, n), outcome scale
    tau01_draws: np.ndarray    # (n_save, n)
    tau12_draws: np.ndarray    # (n_save, n)
    sigma2_draws: np.ndarray   # (n_save,)
    config: Bcf3lConfig
    factor_id: int = 0
    n_covariates: int = 0
    n_other_factors: int = 0
    timeline: dict = field(default_factory=dict)
    mu_forests: list = None
    tau01_forests: list = None
    tau12_forests: list = None
    y_scale: float = 1.0
    y_shift: float = 0.0

    @property
    def n_save(self):
        return self.mu_draws.shape[0]


@dataclass
class EffectSummary:
    """Per-unit and sample-average means and equal-tailed credible intervals."""

    tau01_mean: np.ndarray
    tau01_lo: np.ndarray
    tau01_hi: np.ndarray
    tau12_mean: np.ndarray
    tau12_lo: np.ndarray
    tau12_hi: np.ndarray
    avg_tau01: tuple = None  # (mean, lo, hi) over draws of per-draw unit averages
    avg_tau12: tuple = None
    level: float = 0.90
    true_tau01: np.ndarray = None
    true_tau12: np.ndarray = None


def other_factor_dummies(T_other):
    """Two dummies (level 1, level 2) per other-factor column; empty ok."""
    if T_other is None:
        return np.zeros((0, 0))
    T_other = np.atleast_2d(np.asarray(T_other))
    if T_other.size == 0:
        return np.zeros((T_other.shape[0], 0))
    cols = []
    for j in range(T_other.shape[1]):
        cols.append((T_other[:, j] == 1).astype(float))
        cols.append((T_other[:, j] == 2).astype(float))
    return np.column_stack(cols)


def _mu_features(X, T_other, pihat):
    parts = [np.atleast_2d(np.asarray(X, dtype=float))]
    d = other_factor_dummies(T_other)
    if d.shape[1]:
        parts.append(d)
    parts.append(np.atleast_2d(np.asarray(pihat, dtype=float)))
    return np.hstack(parts)


def _tau_features(X, T_other):
    X = np.atleast_2d(np.asarray(X, dtype=float))
    d = other_factor_dummies(T_other)
    if d.shape[1]:
        return np.hstack([X, d])
    return X


def fit_bcf3l(Y, X, T_j, T_other, pihat, cfg, rng, factor_id=0):
    """Run the three-surface backfitting sampler and return posterior draws."""
    Y = np.asarray(Y, dtype=float).ravel()
    T_j = np.asarray(T_j).ravel().astype(np.int64)
    n = Y.size
    if not np.isfinite(Y).all():
        raise Bcf3lError("NaN or inf in outcome")
    counts = np.bincount(T_j, minlength=3)
    if (counts == 0).any():
        raise Bcf3lError(
            f"exposure level(s) {np.where(counts == 0)[0].tolist()} absent; "
            "effects are not identifiable"
        )
    pihat = np.atleast_2d(np.asarray(pihat, dtype=float))
    if ((pihat <= 0) | (pihat >= 1)).any():
        raise Bcf3lError("pihat columns must lie strictly in (0, 1)")

    Fmu = _mu_features(X, T_other, pihat)
    Ftau = _tau_features(X, T_other)
    if not (np.isfinite(Fmu).all() and np.isfinite(Ftau).all()):
        raise Bcf3lError("NaN or inf in features")

    ind1 = (T_j > 0).astype(float)
    ind2 = (T_j > 1).astype(float)

    # internal [-0.5, 0.5] outcome scale; undone before reporting
    y_lo, y_hi = Y.min(), Y.max()
    scale = (y_hi - y_lo) if y_hi > y_lo else 1.0
    ys = (Y - y_lo) / scale - 0.5

    mu_cfg = ForestConfig(
        n_trees=cfg.b_mu, eta=cfg.mu_eta, beta=cfg.mu_beta,
        leaf_sd=0.5 / (cfg.mu_leaf_k * np.sqrt(cfg.b_mu)),
    )
    tau1_cfg = ForestConfig(
        n_trees=cfg.b_tau, eta=cfg.tau_eta, beta=cfg.tau_beta,
        leaf_sd=0.5 / (cfg.tau01_leaf_k * np.sqrt(cfg.b_tau)),
    )
    tau2_cfg = ForestConfig(
        n_trees=cfg.b_tau, eta=cfg.tau_eta, beta=cfg.tau_beta,
        leaf_sd=0.5 / (cfg.tau12_leaf_k * np.sqrt(cfg.b_tau)),
    )
    mu_f = Forest(Fmu, mu_cfg)
    tau1_f = Forest(Ftau, tau1_cfg, active=T_j > 0)
    tau2_f = Forest(Ftau, tau2_cfg, active=T_j > 1)

    nu_sig, lambda_sig = cfg.nu_sig, cfg.lambda_sig
    if lambda_sig is None:
        nu_sig, lambda_sig = default_sigma_prior(ys, cfg.nu_sig)
    sigma2 = float(np.var(ys)) or 1.0

    n_save = cfg.n_save
    mu_d = np.empty((n_save, n))
    t1_d = np.empty((n_save, n))
    t2_d = np.empty((n_save, n))
    s2_d = np.empty(n_save)
    mu_trees = [] if cfg.keep_trees else None
    t1_trees = [] if cfg.keep_trees else None
    t2_trees = [] if cfg.keep_trees else None

    total = cfg.n_burn + n_save * cfg.thin
    kept = 0
    for it in range(total):
        mu_f.sweep(ys - tau1_f.total_fit * ind1 - tau2_f.total_fit * ind2, sigma2, rng)
        tau1_f.sweep(ys - mu_f.total_fit - tau2_f.total_fit * ind2, sigma2, rng)
        tau2_f.sweep(ys - mu_f.total_fit - tau1_f.total_fit * ind1, sigma2, rng)
        resid = ys - mu_f.total_fit - tau1_f.total_fit * ind1 - tau2_f.total_fit * ind2
        sigma2 = sample_sigma2(resid, nu_sig, lambda_sig, rng)
        if not np.isfinite(resid).all():
            raise Bcf3lError(f"non-finite state at iteration {it}")
        if it >= cfg.n_burn and (it - cfg.n_burn) % cfg.thin == 0 and kept < n_save:
            mu_d[kept] = (mu_f.total_fit + 0.5) * scale + y_lo
            t1_d[kept] = tau1_f.total_fit * scale
            t2_d[kept] = tau2_f.total_fit * scale
            s2_d[kept] = sigma2 * scale ** 2
            if cfg.keep_trees:
                mu_trees.append(mu_f.snapshot())
                t1_trees.append(tau1_f.snapshot())
                t2_trees.append(tau2_f.snapshot())
            kept += 1

    d = np.atleast_2d(np.asarray(X, dtype=float)).shape[1]
    n_other = 0 if T_other is None else np.atleast_2d(np.asarray(T_other)).shape[1]
    return Bcf3lPosterior(
        mu_draws=mu_d, tau01_draws=t1_d, tau12_draws=t2_d, sigma2_draws=s2_d,
        config=cfg, factor_id=factor_id, n_covariates=d, n_other_factors=n_other,
        mu_forests=mu_trees, tau01_forests=t1_trees, tau12_forests=t2_trees,
        y_scale=scale, y_shift=y_lo,
    )


def equal_tailed_interval(draws, level=0.90):
    alpha = (1.0 - level) / 2.0
    return (
        np.quantile(draws, alpha, axis=0),
        np.quantile(draws, 1.0 - alpha, axis=0),
    )


def effects_from_posterior(post, level=0.90, true_tau01=None, true_tau12=None):
    """Summarize effect-surface draws into per-unit and sample-average effects."""
    if post.n_save < 2:
        raise Bcf3lError("need at least 2 saved draws")
    lo1, hi1 = equal_tailed_interval(post.tau01_draws, level)
    lo2, hi2 = equal_tailed_interval(post.tau12_draws, level)
    avg1_draws = post.tau01_draws.mean(axis=1)
    avg2_draws = post.tau12_draws.mean(axis=1)
    a1lo, a1hi = equal_tailed_interval(avg1_draws, level)
    a2lo, a2hi = equal_tailed_interval(avg2_draws, level)
    return EffectSummary(
        tau01_mean=post.tau01_draws.mean(axis=0), tau01_lo=lo1, tau01_hi=hi1,
        tau12_mean=post.tau12_draws.mean(axis=0), tau12_lo=lo2, tau12_hi=hi2,
        avg_tau01=(float(avg1_draws.mean()), float(a1lo), float(a1hi)),
        avg_tau12=(float(avg2_draws.mean()), float(a2lo), float(a2hi)),
        level=level, true_tau01=true_tau01, true_tau12=true_tau12,
    )


def predict_counterfactual(post, x_new, t_other, pihat_new, t_level):
    """Per-draw posterior outcome means at a forced exposure level.

    Requires a fit with ``keep_trees=True``. Returns an (n_save, n_new) array
    of ``mu + tau01 * 1{t > 0} + tau12 * 1{t > 1}`` evaluations.
    """
    if post.mu_forests is None:
        raise Bcf3lError("posterior was fit without keep_trees=True")
    if t_level not in (0, 1, 2):
        raise ValueError("t_level must be 0, 1 or 2")
    x_new = np.atleast_2d(np.asarray(x_new, dtype=float))
    if x_new.shape[1] != post.n_covariates:
        raise Bcf3lError(
            f"encoding mismatch: {x_new.shape[1]} covariates vs "
            f"{post.n_covariates} at training"
        )
    Fmu = _mu_features(x_new, t_other, pihat_new)
    Ftau = _tau_features(x_new, t_other)
    n_new = x_new.shape[0]
    out = np.empty((post.n_save, n_new))
    for k in range(post.n_save):
        val = predict_trees(post.mu_forests[k], Fmu) * post.y_scale
        val += 0.5 * post.y_scale + post.y_shift
        if t_level > 0:
            val = val + predict_trees(post.tau01_forests[k], Ftau) * post.y_scale
        if t_level > 1:
            val = val + predict_trees(post.tau12_forests[k], Ftau) * post.y_scale
        out[k] = val
    return out
