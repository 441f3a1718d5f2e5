"""Dense linear algebra used by the GP and PCA code.

Cholesky factorization and triangular solves are delegated to LAPACK through
numpy/scipy; this module adds the jitter-escalation policy, input validation
and the covariance eigendecomposition used for basis selection.
"""
from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_solve

from .errors import DimensionMismatch, InsufficientSamples, NotPositiveDefinite

DEFAULT_JITTER = 1e-9
MAX_JITTER = 1e-5
SYMMETRY_TOL = 1e-9


@dataclass(frozen=True)
class SpdFactorization:
    """Lower Cholesky factor ``L`` of ``source + jitter * I``."""

    lower: np.ndarray
    jitter: float = 0.0

    @property
    def source_dim(self):
        return self.lower.shape[0]

    def reconstruct(self):
        return self.lower @ self.lower.T


def _cholesky(m):
    try:
        lower = np.linalg.cholesky(m)
    except np.linalg.LinAlgError:
        return None
    # LAPACK only checks pivots > 0; reject non-finite factors as well.
    if not np.all(np.isfinite(lower)):
        return None
    return lower


def spd_factorize(m, jitter=DEFAULT_JITTER, escalate=True):
    """Cholesky-factorize ``m + jitter * I``.

    Parameters
    ----------
    m : (n, n) array_like
        Symmetric matrix.
    jitter : float
        Diagonal shift applied before factorizing.
    escalate : bool
        If the factorization fails, retry with the jitter raised
        tenfold (starting from at least ``DEFAULT_JITTER``) until it exceeds
        ``MAX_JITTER``.

    Raises
    ------
    NotPositiveDefinite
        If no admissible jitter yields positive pivots.
    """
    m = np.asarray(m, dtype=float)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise DimensionMismatch(f"expected a square matrix, got shape {m.shape}")
    if not np.all(np.isfinite(m)):
        raise NotPositiveDefinite("matrix has non-finite entries")
    if np.max(np.abs(m - m.T), initial=0.0) > SYMMETRY_TOL:
        raise NotPositiveDefinite("matrix is not symmetric")
    eye = np.eye(m.shape[0])
    lower = _cholesky(m + jitter * eye)
    if lower is not None:
        return SpdFactorization(lower, float(jitter))
    if escalate:
        j = max(jitter * 10.0, DEFAULT_JITTER)
        while j <= MAX_JITTER * (1 + 1e-12):
            lower = _cholesky(m + j * eye)
            if lower is not None:
                return SpdFactorization(lower, float(j))
            j *= 10.0
    raise NotPositiveDefinite(
        f"non-positive pivot in Cholesky factorization (jitter={jitter:g})"
    )


def spd_solve(f, b):
    """Solve ``(L L^T) x = b`` for a vector or matrix right-hand side."""
    b = np.asarray(b, dtype=float)
    if b.shape[0] != f.source_dim:
        raise DimensionMismatch(
            f"right-hand side has {b.shape[0]} rows, factorization is {f.source_dim}x{f.source_dim}"
        )
    return cho_solve((f.lower, True), b)


def covariance_eigendecomposition(samples):
    """Eigenpairs of the mean-centred sample covariance of ``samples`` (N x d).

    Returns eigenvalues in descending order and the matching orthonormal
    eigenvectors as columns.  The covariance uses the unbiased ``N - 1``
    normalization.
    """
    x = np.asarray(samples, dtype=float)
    if x.ndim != 2:
        raise DimensionMismatch(f"samples must be 2-D, got shape {x.shape}")
    if x.shape[0] < 2:
        raise InsufficientSamples(f"need at least 2 samples, got {x.shape[0]}")
    centred = x - x.mean(axis=0)
    cov = centred.T @ centred / (x.shape[0] - 1)
    cov = 0.5 * (cov + cov.T)
    vals, vecs = np.linalg.eigh(cov)
    order = np.argsort(vals, kind="stable")[::-1]
    vals = vals[order]
    vecs = vecs[:, order]
    # eigh can return tiny negatives for PSD input
    return np.maximum(vals, 0.0), vecs
