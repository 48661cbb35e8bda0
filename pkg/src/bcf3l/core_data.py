"""Shared domain types, CSV ingestion, standardization and RNG streams.

All randomness in the package flows through :func:`make_rng`; the generator
family (PCG64 seeded via ``SeedSequence(master_seed, stream_id)``) is fixed so
that runs are reproducible across machines and versions.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np


class DataError(ValueError):
    """Raised for malformed input files or degenerate data."""


@dataclass(frozen=True)
class Dataset:
    """Covariates X (n, d), nonnegative treatments Z (n, p), outcome Y (n,)."""

    X: np.ndarray
    Z: np.ndarray
    Y: np.ndarray
    x_names: list = field(default_factory=list)
    z_names: list = field(default_factory=list)

    def __post_init__(self):
        X = np.atleast_2d(np.asarray(self.X, dtype=float))
        Z = np.atleast_2d(np.asarray(self.Z, dtype=float))
        Y = np.asarray(self.Y, dtype=float).ravel()
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "Z", Z)
        object.__setattr__(self, "Y", Y)
        n = Y.shape[0]
        if n < 1 or Z.shape[1] < 1:
            raise DataError("need n >= 1 and p >= 1")
        if X.shape[0] != n or Z.shape[0] != n:
            raise DataError("X, Z, Y row counts disagree")
        if not (np.isfinite(X).all() and np.isfinite(Z).all() and np.isfinite(Y).all()):
            raise DataError("non-finite values in dataset")
        if (Z < 0).any():
            raise DataError("Z entries must be >= 0")

    @property
    def n(self):
        return self.Y.shape[0]


@dataclass(frozen=True)
class StandardizedMatrix:
    """Column-standardized matrix with the moments needed to invert it."""

    Zstar: np.ndarray
    means: np.ndarray
    sds: np.ndarray

    def destandardize(self):
        return self.Zstar * self.sds + self.means


@dataclass(frozen=True)
class RngSpec:
    """Addressable random stream: one (master_seed, stream_id) per chain/replicate."""

    master_seed: int
    stream_id: int = 0

    def __post_init__(self):
        if self.stream_id < 0:
            raise ValueError("stream_id must be >= 0")

    def child(self, offset):
        return RngSpec(self.master_seed, self.stream_id + offset)


def make_rng(spec):
    """Return the deterministic PCG64 generator for a stream spec."""
    ss = np.random.SeedSequence(entropy=spec.master_seed, spawn_key=(spec.stream_id,))
    return np.random.Generator(np.random.PCG64(ss))


def load_matrix_csv(path, expect_header=True):
    """Load a rectangular numeric CSV.

    Rows containing empty (missing) cells are dropped. Returns
    ``(matrix, labels, dropped_rows)``. Non-numeric non-empty cells or ragged
    rows raise :class:`DataError` naming the row and column.
    """
    try:
        fh = open(path, newline="", encoding="utf-8")
    except OSError as exc:
        raise DataError(f"cannot open {path}: {exc}") from exc
    with fh:
        reader = csv.reader(fh)
        rows = [row for row in reader if row]
    if not rows:
        raise DataError(f"{path}: empty file")
    if expect_header:
        labels = [c.strip() for c in rows[0]]
        body = rows[1:]
        first_data_line = 2
    else:
        labels = [f"c{k}" for k in range(len(rows[0]))]
        body = rows
        first_data_line = 1
    width = len(labels)
    out = []
    dropped = 0
    for r, row in enumerate(body):
        if len(row) != width:
            raise DataError(
                f"{path}: ragged row at line {r + first_data_line} "
                f"(expected {width} cells, got {len(row)})"
            )
        cells = [c.strip() for c in row]
        if any(c == "" for c in cells):
            dropped += 1
            continue
        vals = np.empty(width)
        for c, cell in enumerate(cells):
            try:
                vals[c] = float(cell)
            except ValueError:
                raise DataError(
                    f"{path}: non-numeric cell {cell!r} at line "
                    f"{r + first_data_line}, column {labels[c]!r}"
                ) from None
        out.append(vals)
    if not out:
        raise DataError(f"{path}: no complete rows after dropping missing")
    return np.vstack(out), labels, dropped


def write_matrix_csv(path, matrix, labels=None, fmt="%.12g"):
    """Write a matrix as UTF-8 CSV with a header row; deterministic formatting."""
    matrix = np.atleast_2d(np.asarray(matrix, dtype=float))
    if labels is None:
        labels = [f"c{k}" for k in range(matrix.shape[1])]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        fh.write(",".join(str(l) for l in labels) + "\n")
        for row in matrix:
            fh.write(",".join(fmt % v for v in row) + "\n")


def standardize_columns(Z):
    """Standardize each column to mean 0, sample sd 1 (denominator n-1).

    Constant columns are a hard error: silently dropping or zeroing one would
    desynchronize column indices against downstream loading matrices.
    """
    Z = np.atleast_2d(np.asarray(Z, dtype=float))
    if Z.shape[0] < 2:
        raise DataError("standardize_columns needs n >= 2")
    if not np.isfinite(Z).all():
        raise DataError("standardize_columns: non-finite input")
    means = Z.mean(axis=0)
    sds = Z.std(axis=0, ddof=1)
    bad = np.where(sds == 0)[0]
    if bad.size:
        raise DataError(f"degenerate (zero-variance) columns: {bad.tolist()}")
    return StandardizedMatrix(Zstar=(Z - means) / sds, means=means, sds=sds)
