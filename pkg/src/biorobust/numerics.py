"""Seeded RNG, covariance, symmetric eigendecomposition and line fitting.

Everything here is computed in float64 regardless of what the caller hands
in; spectrum tails span many decades and do not survive float32.
"""

from dataclasses import dataclass

import numpy as np


class DegenerateInputError(ValueError):
    """Input has too few samples or no variation to support the operation."""


class ContractViolationError(ValueError):
    """Caller violated a structural precondition (e.g. asymmetric matrix)."""


class SingularFitError(ValueError):
    """Regression abscissae carry no variation."""


def seeded_rng(seed):
    """Deterministic generator (uniform, standard normal) from a 64-bit seed.

    Backed by the Philox 4x64 counter-based bit generator, so identical
    seeds produce identical streams on every platform. Workers must never
    share a generator; derive one per worker from ``base_seed + index``.
    """
    return np.random.Generator(np.random.Philox(int(seed)))


def covariance(data):
    """Sample covariance (N-1 denominator) of an N x D data matrix.

    Rows are samples, columns are features. Output is symmetrized to kill
    the tiny asymmetry BLAS accumulation order can introduce.
    """
    data = np.asarray(data, dtype=np.float64)
    if data.ndim != 2:
        raise ContractViolationError(f"expected 2-D data, got shape {data.shape}")
    n = data.shape[0]
    if n < 2:
        raise DegenerateInputError(f"covariance needs at least 2 samples, got {n}")
    centered = data - data.mean(axis=0)
    cov = centered.T @ centered / (n - 1)
    return (cov + cov.T) / 2.0


@dataclass
class SymSpectrum:
    """Full eigendecomposition of a symmetric matrix, eigenvalues descending.

    ``eigenvectors[:, i]`` pairs with ``eigenvalues[i]``.
    """

    eigenvalues: np.ndarray
    eigenvectors: np.ndarray


def sym_eig_descending(matrix, sym_tol=1e-10):
    """Eigendecomposition of a real symmetric matrix, ordered descending.

    Uses LAPACK's symmetric solver; asymmetry beyond ``sym_tol`` elementwise
    is a contract violation rather than something to silently symmetrize.
    """
    matrix = np.asarray(matrix, dtype=np.float64)
    if matrix.ndim != 2 or matrix.shape[0] != matrix.shape[1]:
        raise ContractViolationError(f"expected a square matrix, got shape {matrix.shape}")
    asym = np.max(np.abs(matrix - matrix.T)) if matrix.size else 0.0
    if asym > sym_tol:
        raise ContractViolationError(f"matrix is asymmetric: max |C - C^T| = {asym:.3e}")
    vals, vecs = np.linalg.eigh(matrix)
    return SymSpectrum(eigenvalues=np.ascontiguousarray(vals[::-1]),
                       eigenvectors=np.ascontiguousarray(vecs[:, ::-1]))


@dataclass
class LineFit:
    slope: float
    intercept: float
    slope_stderr: float


def linear_fit(xs, ys):
    """Ordinary least squares line fit with the standard slope error.

    Requires at least 3 points and non-constant ``xs``. The slope standard
    error is sqrt(SSR / (n-2) / Sxx); it is exactly 0 for a perfect line.
    """
    xs = np.asarray(xs, dtype=np.float64)
    ys = np.asarray(ys, dtype=np.float64)
    if xs.shape != ys.shape or xs.ndim != 1:
        raise ContractViolationError(f"xs/ys must be equal-length vectors, got {xs.shape} and {ys.shape}")
    n = xs.size
    if n < 3:
        raise DegenerateInputError(f"need at least 3 points, got {n}")
    dx = xs - xs.mean()
    sxx = float(dx @ dx)
    if sxx == 0.0:
        raise SingularFitError("all xs are equal; slope undefined")
    slope = float(dx @ (ys - ys.mean())) / sxx
    intercept = float(ys.mean() - slope * xs.mean())
    resid = ys - (slope * xs + intercept)
    ssr = float(resid @ resid)
    stderr = np.sqrt(max(ssr, 0.0) / (n - 2) / sxx)
    return LineFit(slope=slope, intercept=intercept, slope_stderr=float(stderr))
