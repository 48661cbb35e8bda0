"""Tertile exposure mapping: factor scores -> ordered levels {0, 1, 2}."""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .core_data import DataError


@dataclass(frozen=True)
class ExposureMatrix:
    """Integer level matrix (n, J) with the per-factor tertile cutpoints."""

    T: np.ndarray
    cutpoints: np.ndarray  # (J, 2) rows of (Q1, Q2)

    def __post_init__(self):
        T = np.asarray(self.T)
        if not np.isin(T, (0, 1, 2)).all():
            raise ValueError("exposure levels must be in {0, 1, 2}")


def tertile_cutpoints(scores):
    """Empirical 1/3 and 2/3 quantiles, linear order-statistic interpolation.

    Uses the h = (n - 1) p + 1 rule (numpy's default), so for scores 1..9 the
    cutpoints are exactly (11/3, 19/3).
    """
    scores = np.asarray(scores, dtype=float).ravel()
    if scores.size < 3:
        raise DataError("tertile_cutpoints needs n >= 3")
    q1, q2 = np.quantile(scores, [1 / 3, 2 / 3], method="linear")
    return float(q1), float(q2)


def assign_levels(scores, q1, q2):
    """Map scores to levels: 0 if s <= Q1, 1 if Q1 < s <= Q2, 2 if s > Q2."""
    if q1 > q2:
        raise ValueError("q1 must be <= q2")
    scores = np.asarray(scores, dtype=float).ravel()
    return ((scores > q1).astype(np.int64) + (scores > q2)).astype(np.int64)


def build_exposure_matrix(L_hat):
    """Discretize each score column into tertile levels, freezing cutpoints."""
    L_hat = np.atleast_2d(np.asarray(L_hat, dtype=float))
    if not np.isfinite(L_hat).all():
        raise DataError("scores must be finite")
    n, J = L_hat.shape
    levels = np.empty((n, J), dtype=np.int64)
    cuts = np.empty((J, 2))
    for j in range(J):
        q1, q2 = tertile_cutpoints(L_hat[:, j])
        cuts[j] = (q1, q2)
        levels[:, j] = assign_levels(L_hat[:, j], q1, q2)
        counts = np.bincount(levels[:, j], minlength=3)
        if (counts == 0).any() and n >= 3:
            warnings.warn(
                f"factor {j}: heavy ties leave level(s) "
                f"{np.where(counts == 0)[0].tolist()} empty",
                stacklevel=2,
            )
    return ExposureMatrix(T=levels, cutpoints=cuts)
