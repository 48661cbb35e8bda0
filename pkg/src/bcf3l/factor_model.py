"""Bayesian factor model with multiplicative gamma shrinkage.

Blocked Gibbs over loadings, scores, uniquenesses and the shrinkage
hierarchy; varimax-rotated posterior-mean loadings; explained-variance
factor retention; plug-in regression factor scores.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .core_data import DataError


class FactorModelError(RuntimeError):
    pass


@dataclass(frozen=True)
class FactorModelConfig:
    J_max: int = 15
    a1: float = 2.1
    a2: float = 3.1
    nu: float = 3.0
    a_psi: float = 1.0
    b_psi: float = 0.3
    n_burn: int = 500
    n_save: int = 500
    thin: int = 1
    ev_threshold: float = 0.05

    def __post_init__(self):
        if self.J_max < 1:
            raise ValueError("J_max must be >= 1")
        if min(self.a1, self.a2, self.nu, self.a_psi, self.b_psi) <= 0:
            raise ValueError("hyperparameters must be positive")
        if not 0 < self.ev_threshold < 1:
            raise ValueError("ev_threshold must be in (0, 1)")
        if self.n_save < 1 or self.n_burn < 0 or self.thin < 1:
            raise ValueError("invalid MCMC lengths")


@dataclass
class FactorPosterior:
    Lambda_draws: np.ndarray      # (n_save, p, J)
    Psi_draws: np.ndarray         # (n_save, p)
    Lambda_hat: np.ndarray = None  # (p, J_selected), rotated + sign-aligned
    Psi_hat: np.ndarray = None
    scores: np.ndarray = None      # (n, J_selected)
    explained_variance: np.ndarray = None
    J_selected: int = 0


def _gibbs_sweep(Zstar, Lam, scores, psi, omega, delta, cfg, rng):
    """One full blocked Gibbs cycle; mutates and returns the state arrays."""
    n, p = Zstar.shape
    J = Lam.shape[1]
    tau = np.cumprod(delta)

    # (i) loading rows: MVN with precision diag(omega_h * tau) + S'S / psi_h
    StS = scores.T @ scores if n else np.zeros((J, J))
    StZ = scores.T @ Zstar if n else np.zeros((J, p))
    for h in range(p):
        prec = np.diag(omega[h] * tau) + StS / psi[h]
        chol = np.linalg.cholesky(prec)
        m = np.linalg.solve(prec, StZ[:, h] / psi[h])
        z = rng.standard_normal(J)
        Lam[h] = m + np.linalg.solve(chol.T, z)

    # (ii) scores: common covariance (Lam' Psi^-1 Lam + I)^-1
    if n:
        LtPi = Lam.T / psi
        prec = LtPi @ Lam + np.eye(J)
        cov = np.linalg.inv(prec)
        mean = Zstar @ LtPi.T @ cov
        chol = np.linalg.cholesky(cov)
        scores = mean + rng.standard_normal((n, J)) @ chol.T
    else:
        scores = np.zeros((0, J))

    # (iii) psi_h^{-1} ~ Gamma(a_psi + n/2, b_psi + RSS_h/2)
    if n:
        resid = Zstar - scores @ Lam.T
        rss = (resid ** 2).sum(axis=0)
    else:
        rss = np.zeros(p)
    psi = 1.0 / rng.gamma(cfg.a_psi + 0.5 * n, 1.0 / (cfg.b_psi + 0.5 * rss))

    # (iv) local shrinkage omega_hj ~ Gamma((nu+1)/2, (nu + tau_j lam^2)/2)
    omega = rng.gamma(
        0.5 * (cfg.nu + 1.0), 2.0 / (cfg.nu + tau[None, :] * Lam ** 2)
    )

    # (v) delta_l from its gamma conditional via tau_j = prod_{l<=j} delta_l
    w = (omega * Lam ** 2).sum(axis=0)  # sum_h omega_hj lam_hj^2, per factor
    for l in range(J):
        tau = np.cumprod(delta)
        tau_wo = tau[l:] / delta[l]
        shape = (cfg.a1 if l == 0 else cfg.a2) + 0.5 * p * (J - l)
        rate = 1.0 + 0.5 * np.sum(tau_wo * w[l:])
        delta[l] = rng.gamma(shape, 1.0 / rate)

    if not (
        np.isfinite(Lam).all()
        and np.isfinite(scores).all()
        and np.isfinite(psi).all()
        and (psi > 0).all()
        and np.isfinite(delta).all()
    ):
        raise FactorModelError("non-finite state in Gibbs sweep")
    return Lam, scores, psi, omega, delta


def fit_factor_model(Zstar, cfg, rng):
    """Sample the factor model posterior; returns raw (unrotated) draws."""
    Z = np.atleast_2d(np.asarray(getattr(Zstar, "Zstar", Zstar), dtype=float))
    n, p = Z.shape
    J = min(cfg.J_max, p) if n else cfg.J_max
    if n and n <= J:
        raise DataError("need n > J_max")

    Lam = np.zeros((p, J))
    scores = np.zeros((n, J))
    psi = np.ones(p)
    omega = np.ones((p, J))
    delta = np.ones(J)

    total = cfg.n_burn + cfg.n_save * cfg.thin
    Lam_draws = np.empty((cfg.n_save, p, J))
    Psi_draws = np.empty((cfg.n_save, p))
    kept = 0
    for it in range(total):
        try:
            Lam, scores, psi, omega, delta = _gibbs_sweep(
                Z, Lam, scores, psi, omega, delta, cfg, rng
            )
        except FactorModelError as exc:
            raise FactorModelError(f"iteration {it}: {exc}") from exc
        if it >= cfg.n_burn and (it - cfg.n_burn) % cfg.thin == 0 and kept < cfg.n_save:
            Lam_draws[kept] = Lam
            Psi_draws[kept] = psi
            kept += 1
    return FactorPosterior(Lambda_draws=Lam_draws, Psi_draws=Psi_draws)


def _varimax_criterion(L):
    """Kaiser-normalized varimax objective: sum over factors of var of squared loadings."""
    h = np.sqrt((L ** 2).sum(axis=1))
    h[h == 0] = 1.0
    B = (L.T / h).T ** 2
    return float((B.var(axis=0)).sum())


def apply_sign_convention(L):
    """Flip each column so its largest-magnitude entry is positive."""
    L = np.array(L, dtype=float)
    flips = np.ones(L.shape[1])
    for j in range(L.shape[1]):
        k = np.argmax(np.abs(L[:, j]))
        if L[k, j] < 0:
            L[:, j] = -L[:, j]
            flips[j] = -1.0
    return L, flips


def varimax_rotate(Lambda, tol=1e-8, max_iter=500):
    """Varimax rotation by iterative pairwise (Jacobi) rotations.

    Kaiser row normalization is applied for the criterion; the returned
    loadings are on the original scale. Each rotated column is sign-flipped so
    its largest-magnitude entry is positive. Returns ``(rotated, R)`` with
    ``Lambda @ R`` equal to the rotated matrix up to the sign flips.
    """
    L = np.atleast_2d(np.asarray(Lambda, dtype=float))
    p, J = L.shape
    R = np.eye(J)
    if J == 1:
        Ls, flips = apply_sign_convention(L)
        return Ls, R * flips
    h = np.sqrt((L ** 2).sum(axis=1))
    h[h == 0] = 1.0
    B = L / h[:, None]
    for _ in range(max_iter):
        old = _varimax_criterion(B * h[:, None])
        for a in range(J - 1):
            for b in range(a + 1, J):
                u = B[:, a] ** 2 - B[:, b] ** 2
                v = 2.0 * B[:, a] * B[:, b]
                num = 2.0 * (p * (u * v).sum() - u.sum() * v.sum())
                den = p * ((u ** 2 - v ** 2).sum()) - (u.sum() ** 2 - v.sum() ** 2)
                phi = 0.25 * np.arctan2(num, den)
                if abs(phi) < 1e-14:
                    continue
                c, s = np.cos(phi), np.sin(phi)
                G = np.array([[c, -s], [s, c]])
                # the angle formula is a 0/0 form on criterion-flat pairs
                # (e.g. proportional rows); only keep strict improvements
                before = _varimax_criterion(B * h[:, None])
                saved = B[:, [a, b]].copy()
                B[:, [a, b]] = B[:, [a, b]] @ G
                if _varimax_criterion(B * h[:, None]) > before:
                    R[:, [a, b]] = R[:, [a, b]] @ G
                else:
                    B[:, [a, b]] = saved
        if _varimax_criterion(B * h[:, None]) - old < tol:
            break
    rotated = B * h[:, None]
    rotated, flips = apply_sign_convention(rotated)
    return rotated, R * flips


def explained_variance(Lambda, Psi):
    """Per-factor share of total model variance trace(Lambda Lambda' + Psi)."""
    Lambda = np.atleast_2d(np.asarray(Lambda, dtype=float))
    Psi = np.asarray(Psi, dtype=float).ravel()
    if (Psi <= 0).any():
        raise ValueError("Psi entries must be > 0")
    per_factor = (Lambda ** 2).sum(axis=0)
    total = per_factor.sum() + Psi.sum()
    return per_factor / total


def select_factors(ev, threshold=0.05):
    """Indices with explained variance above threshold, by descending ev."""
    ev = np.asarray(ev, dtype=float).ravel()
    keep = np.where(ev > threshold)[0]
    if keep.size == 0:
        raise FactorModelError(
            f"no factor exceeds explained-variance threshold {threshold}; "
            "consider lowering it"
        )
    return keep[np.argsort(-ev[keep], kind="stable")].tolist()


def estimate_scores(Lambda_hat, Psi_hat, Zstar):
    """Plug-in regression scores (Lam' Psi^-1 Lam + I)^-1 Lam' Psi^-1 z*."""
    Lam = np.atleast_2d(np.asarray(Lambda_hat, dtype=float))
    psi = np.asarray(Psi_hat, dtype=float).ravel()
    Z = np.atleast_2d(np.asarray(getattr(Zstar, "Zstar", Zstar), dtype=float))
    if (psi <= 0).any():
        raise ValueError("Psi entries must be > 0")
    LtPi = Lam.T / psi
    A = LtPi @ Lam + np.eye(Lam.shape[1])
    try:
        return np.linalg.solve(A, LtPi @ Z.T).T
    except np.linalg.LinAlgError as exc:  # cannot occur with psi > 0
        raise FactorModelError(f"singular score system: {exc}") from exc


def summarize_posterior(post):
    """Attach rotated point estimates, explained variance and scores to a fit.

    Point estimates rotate and sign-align the posterior-mean loading matrix
    (not per-draw matrices), avoiding label/sign alignment across draws.
    The mean loadings are first aligned to their principal axes (an
    orthogonal rotation the model is invariant to); without this step a
    factor that the chain splits across a rotated plane stays split, since
    the varimax criterion is flat over proportional loading rows.
    """
    Lam_bar = post.Lambda_draws.mean(axis=0)
    psi_bar = post.Psi_draws.mean(axis=0)
    U, sv, _ = np.linalg.svd(Lam_bar, full_matrices=False)
    rotated, _ = varimax_rotate(U * sv)
    ev = explained_variance(rotated, psi_bar)
    post.Lambda_hat = rotated
    post.Psi_hat = psi_bar
    post.explained_variance = ev
    return post


def fit_factor_pipeline(Zstar, cfg, rng):
    """Two-stage workflow: fit at J_max, select by explained variance, refit.

    The refit (J fixed at the selected count) supplies the rotated loadings
    and plug-in scores used downstream as the exposure-mapping inputs.
    """
    stage1 = summarize_posterior(fit_factor_model(Zstar, cfg, rng))
    selected = select_factors(stage1.explained_variance, cfg.ev_threshold)
    J_sel = len(selected)

    cfg2 = FactorModelConfig(
        J_max=J_sel, a1=cfg.a1, a2=cfg.a2, nu=cfg.nu,
        a_psi=cfg.a_psi, b_psi=cfg.b_psi,
        n_burn=cfg.n_burn, n_save=cfg.n_save, thin=cfg.thin,
        ev_threshold=cfg.ev_threshold,
    )
    post = summarize_posterior(fit_factor_model(Zstar, cfg2, rng))
    order = np.argsort(-post.explained_variance, kind="stable")
    post.Lambda_hat = post.Lambda_hat[:, order]
    post.explained_variance = post.explained_variance[order]
    post.J_selected = J_sel
    post.scores = estimate_scores(post.Lambda_hat, post.Psi_hat, Zstar)
    return post
