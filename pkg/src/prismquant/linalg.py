"""Dense symmetric-matrix primitives.

The eigensolver is a cyclic Jacobi iteration: slow compared with LAPACK for
large ``n`` but fully deterministic, which keeps eigenbases (and therefore
bitstreams) reproducible across machines.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numba import njit
from scipy.linalg import lapack, solve_triangular

from .errors import ConvergenceError, DefinitenessError, InvalidInputError

MAX_SWEEPS = 100
OFF_TOL = 1e-12


@dataclass(frozen=True)
class EigenDecomposition:
    """Eigenvalues sorted descending with matching orthonormal columns."""

    eigvals: np.ndarray
    basis: np.ndarray

    def reconstruct(self) -> np.ndarray:
        return (self.basis * self.eigvals) @ self.basis.T


def _as_symmetric(a, name="matrix") -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] != a.shape[1] or a.shape[0] < 1:
        raise InvalidInputError(f"{name} must be a non-empty square matrix, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise InvalidInputError(f"{name} has non-finite entries")
    scale = max(np.max(np.abs(a)), 1.0)
    if np.max(np.abs(a - a.T)) > 1e-9 * scale:
        raise InvalidInputError(f"{name} is not symmetric")
    return 0.5 * (a + a.T)


@njit(cache=True)
def _jacobi_sweeps(a, v, tol, max_sweeps):
    n = a.shape[0]
    for sweep in range(max_sweeps):
        off = 0.0
        for p in range(n):
            for q in range(p + 1, n):
                off += a[p, q] * a[p, q]
        off = np.sqrt(2.0 * off)
        if off <= tol:
            return sweep, off
        # threshold pass for the first sweeps, plain cyclic afterwards
        thresh = 0.2 * off / (n * n) if sweep < 3 else 0.0
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = a[p, q]
                if apq == 0.0 or abs(apq) < thresh:
                    continue
                theta = (a[q, q] - a[p, p]) / (2.0 * apq)
                if abs(theta) > 1e150:
                    t = 0.5 / theta
                else:
                    t = 1.0 / (abs(theta) + np.sqrt(theta * theta + 1.0))
                    if theta < 0.0:
                        t = -t
                c = 1.0 / np.sqrt(t * t + 1.0)
                s = t * c
                for k in range(n):
                    akp = a[k, p]
                    akq = a[k, q]
                    a[k, p] = c * akp - s * akq
                    a[k, q] = s * akp + c * akq
                for k in range(n):
                    apk = a[p, k]
                    aqk = a[q, k]
                    a[p, k] = c * apk - s * aqk
                    a[q, k] = s * apk + c * aqk
                a[p, q] = 0.0
                a[q, p] = 0.0
                for k in range(n):
                    vkp = v[k, p]
                    vkq = v[k, q]
                    v[k, p] = c * vkp - s * vkq
                    v[k, q] = s * vkp + c * vkq
    off = 0.0
    for p in range(n):
        for q in range(p + 1, n):
            off += a[p, q] * a[p, q]
    return max_sweeps, np.sqrt(2.0 * off)


def sym_eig(a, max_sweeps: int = MAX_SWEEPS) -> EigenDecomposition:
    """Eigendecomposition of a real symmetric matrix by cyclic Jacobi.

    Eigenvalues come back in non-increasing order. Each eigenvector is
    oriented so that its largest-magnitude entry (first one on ties) is
    positive.
    """
    a = _as_symmetric(a)
    n = a.shape[0]
    work = np.array(a, dtype=np.float64, order="C")
    v = np.eye(n)
    tol = OFF_TOL * np.linalg.norm(a)
    sweeps, residual = _jacobi_sweeps(work, v, tol, max_sweeps)
    if residual > tol:
        raise ConvergenceError(
            f"Jacobi did not converge in {max_sweeps} sweeps (off-diagonal norm {residual:.3e})",
            residual=residual,
        )
    vals = np.diag(work).copy()
    order = np.argsort(-vals, kind="stable")
    vals = vals[order]
    basis = v[:, order]
    pivots = np.argmax(np.abs(basis), axis=0)
    signs = np.where(basis[pivots, np.arange(n)] < 0.0, -1.0, 1.0)
    basis = np.ascontiguousarray(basis * signs)
    return EigenDecomposition(eigvals=vals, basis=basis)


def cholesky(a) -> np.ndarray:
    """Lower Cholesky factor; raises DefinitenessError naming the failing pivot."""
    a = _as_symmetric(a)
    factor, info = lapack.dpotrf(a, lower=1, clean=1)
    if info > 0:
        raise DefinitenessError(
            f"matrix is not positive definite (pivot {info - 1} failed)", pivot=info - 1
        )
    if info < 0:
        raise InvalidInputError(f"dpotrf rejected argument {-info}")
    return factor


def log_det_psd(a) -> float:
    """Natural-log determinant of a positive-definite matrix."""
    factor = cholesky(a)
    return float(2.0 * np.sum(np.log(np.diag(factor))))


def mahalanobis_sq(x, mean, cov) -> float:
    """(x - mean)^T cov^{-1} (x - mean) via a triangular solve."""
    factor = cholesky(cov)
    diff = np.asarray(x, dtype=np.float64) - np.asarray(mean, dtype=np.float64)
    if diff.shape != (factor.shape[0],):
        raise InvalidInputError(f"vector shape {diff.shape} does not match covariance {factor.shape}")
    z = solve_triangular(factor, diff, lower=True)
    return float(z @ z)
