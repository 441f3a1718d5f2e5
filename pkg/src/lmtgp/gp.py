"""Gaussian-process regression over latent vectors.

A ``GpModel`` holds ``n`` basis latents (rows of an ``n x d`` matrix) picked
from a larger candidate set, plus the Cholesky factor of
``K(B, B) + noise * I`` under the unit-bandwidth RBF kernel
``k(z, z') = exp(-||z - z'||^2 / 2)``.  For a query latent ``z`` the
posterior mean is the d-vector ``k^T (K + noise I)^-1 B`` and the scalar
predictive variance is ``1 - k^T (K + noise I)^-1 k + noise``.
"""
from dataclasses import dataclass

import numpy as np

from .errors import DegenerateVariance, DimensionMismatch, InsufficientCandidates
from .numerics import SpdFactorization, covariance_eigendecomposition, spd_factorize, spd_solve

VARIANCE_ENERGY = 0.95
# Relative tolerance under which two greedy gains count as tied.
GAIN_TIE_RTOL = 1e-9


@dataclass(frozen=True)
class GpConfig:
    basis_size: int = 16
    noise_variance: float = 0.01
    use_full_loss: bool = False

    def __post_init__(self):
        if self.basis_size < 1:
            raise ValueError("basis_size must be >= 1")
        if not self.noise_variance > 0:
            raise ValueError("noise_variance must be > 0")


@dataclass(frozen=True)
class GpModel:
    basis: np.ndarray  # (n, d)
    indices: tuple  # candidate row of each basis vector
    noise_variance: float
    gram: np.ndarray  # K(B, B) + noise * I
    factor: SpdFactorization


@dataclass(frozen=True)
class GpPosterior:
    mean: np.ndarray
    variance: float


def rbf_kernel(z, z2):
    z = np.asarray(z, dtype=float)
    z2 = np.asarray(z2, dtype=float)
    if z.shape != z2.shape:
        raise DimensionMismatch(f"latent shapes differ: {z.shape} vs {z2.shape}")
    diff = z - z2
    return float(np.exp(-0.5 * np.dot(diff, diff)))


def kernel_matrix(a, b):
    """Pairwise RBF kernel between rows of ``a`` (m x d) and ``b`` (n x d)."""
    a = np.atleast_2d(np.asarray(a, dtype=float))
    b = np.atleast_2d(np.asarray(b, dtype=float))
    if a.shape[1] != b.shape[1]:
        raise DimensionMismatch(f"latent dims differ: {a.shape[1]} vs {b.shape[1]}")
    sq = np.sum((a[:, None, :] - b[None, :, :]) ** 2, axis=-1)
    return np.exp(-0.5 * sq)


def principal_subspace(candidates, max_components):
    """Leading principal directions covering ``VARIANCE_ENERGY`` of the variance.

    At most ``max_components`` directions are kept.  Returns (eigenvalues,
    eigenvectors as columns); both may be empty when the candidates have no
    spread.
    """
    vals, vecs = covariance_eigendecomposition(candidates)
    total = vals.sum()
    if total <= 0.0:
        return vals[:0], vecs[:, :0]
    cumulative = np.cumsum(vals) / total
    p = int(np.searchsorted(cumulative, VARIANCE_ENERGY - 1e-12) + 1)
    p = min(p, max_components, int(np.count_nonzero(vals > 0.0)))
    return vals[:p], vecs[:, :p]


def _residual(v, ortho):
    for q in ortho:
        v = v - np.dot(q, v) * q
    return v


def _pick(gains, secondary, available):
    """Index with the largest gain; ties go to ``secondary`` then lowest index."""
    best = max(gains[i] for i in available)
    tol = GAIN_TIE_RTOL * max(abs(best), 1.0)
    tied = [i for i in available if gains[i] >= best - tol]
    if len(tied) == 1:
        return tied[0]
    best2 = max(secondary[i] for i in tied)
    tol2 = GAIN_TIE_RTOL * max(abs(best2), 1.0)
    return min(i for i in tied if secondary[i] >= best2 - tol2)


def greedy_energy_selection(candidates, n):
    """Pick ``n`` candidate rows whose span retains the most principal energy.

    The candidates are centred and projected onto their leading principal
    subspace.  For a selected set S the retained energy is the scatter of
    the projected candidates that lies in span(projected S).  Each round
    adds the candidate with the largest increase; ties (e.g. once the span
    is saturated) fall back to the candidate's raw residual norm outside
    the span of the already-chosen raw vectors, then to the lowest index.
    Exact copies of an already chosen row are only taken when nothing
    else remains.
    """
    x = np.asarray(candidates, dtype=float)
    num = x.shape[0]
    if num < n:
        raise InsufficientCandidates(f"need at least {n} candidates, got {num}")
    if num == n:
        return list(range(n))
    centred = x - x.mean(axis=0)
    _, comps = principal_subspace(x, n)
    proj = centred @ comps  # coordinates in the principal subspace
    scatter = proj.T @ proj
    ortho_p, ortho_raw, chosen = [], [], []
    available = list(range(num))
    for _ in range(n):
        gains = {}
        secondary = {}
        for i in available:
            r = _residual(proj[i], ortho_p)
            rn = np.linalg.norm(r)
            if rn > 1e-10 * max(np.linalg.norm(proj[i]), 1e-300) and rn > 1e-12:
                u = r / rn
                gains[i] = float(u @ scatter @ u)
            else:
                gains[i] = 0.0
            secondary[i] = float(np.linalg.norm(_residual(x[i], ortho_raw)))
        # exact copies of a chosen row add nothing; keep them for last
        fresh = [i for i in available
                 if not any(np.array_equal(x[i], x[c]) for c in chosen)]
        pick = _pick(gains, secondary, fresh or available)
        chosen.append(pick)
        available.remove(pick)
        r = _residual(proj[pick], ortho_p)
        rn = np.linalg.norm(r)
        if gains[pick] > 0.0:
            ortho_p.append(r / rn)
        r = _residual(x[pick], ortho_raw)
        rn = np.linalg.norm(r)
        if rn > 1e-12:
            ortho_raw.append(r / rn)
    return chosen


def retained_energy(candidates, subset, max_components):
    """Principal energy captured by span(subset); used to score selections."""
    x = np.asarray(candidates, dtype=float)
    centred = x - x.mean(axis=0)
    _, comps = principal_subspace(x, max_components)
    proj = centred @ comps
    sel = proj[list(subset)]
    if sel.size == 0:
        return 0.0
    # orthogonal projector onto the row space of sel
    pinv = np.linalg.pinv(sel, rcond=1e-10)
    projector = pinv @ sel
    return float(np.sum((proj @ projector) * proj))


def build_model(basis, noise_variance, indices=None):
    basis = np.atleast_2d(np.asarray(basis, dtype=float))
    gram = kernel_matrix(basis, basis) + noise_variance * np.eye(basis.shape[0])
    factor = spd_factorize(gram)
    if indices is None:
        indices = tuple(range(basis.shape[0]))
    return GpModel(basis, tuple(indices), float(noise_variance), gram, factor)


def select_basis(candidates, config):
    candidates = np.atleast_2d(np.asarray(candidates, dtype=float))
    idx = greedy_energy_selection(candidates, config.basis_size)
    return build_model(candidates[idx], config.noise_variance, idx)


def posterior(model, z):
    z = np.asarray(z, dtype=float)
    if z.shape != (model.basis.shape[1],):
        raise DimensionMismatch(f"query has shape {z.shape}, basis dim is {model.basis.shape[1]}")
    k = kernel_matrix(z[None], model.basis)[0]
    w = spd_solve(model.factor, k)
    mean = w @ model.basis
    variance = 1.0 - float(k @ w) + model.noise_variance
    return GpPosterior(mean, variance)


def posterior_backward(model, z, d_mean, d_variance=0.0):
    """Gradients of a scalar loss through :func:`posterior`.

    Given dL/dmean (d-vector) and dL/dvariance, returns (dL/dz, dL/dbasis).
    """
    z = np.asarray(z, dtype=float)
    basis = model.basis
    kern = kernel_matrix(z[None], basis)[0]
    w = spd_solve(model.factor, kern)
    alpha_g = spd_solve(model.factor, basis @ d_mean)  # (K+s I)^-1 B g
    d_k = alpha_g - 2.0 * d_variance * w
    d_gram = -np.outer(w, alpha_g) + d_variance * np.outer(w, w)
    diff = z[None, :] - basis  # (n, d)
    d_z = -(d_k * kern) @ diff
    d_basis = np.outer(w, d_mean) + (d_k * kern)[:, None] * diff
    kb = model.gram - model.noise_variance * np.eye(basis.shape[0])
    sym = (d_gram + d_gram.T) * kb
    # d/db_i of exp(-|b_i - b_j|^2 / 2) = -k_ij (b_i - b_j)
    d_basis -= sym.sum(axis=1)[:, None] * basis - sym @ basis
    return d_z, d_basis


def _check_pair(posterior_, z_pseudo):
    z_pseudo = np.asarray(z_pseudo, dtype=float)
    if z_pseudo.shape != posterior_.mean.shape:
        raise DimensionMismatch(f"pseudo latent {z_pseudo.shape} vs mean {posterior_.mean.shape}")
    return z_pseudo - posterior_.mean


def gpr_loss_full(posterior_, z_pseudo):
    """Isotropic Gaussian negative log-density: ||r||^2 / v + d log v."""
    r = _check_pair(posterior_, z_pseudo)
    v = posterior_.variance
    if v < 1e-12:
        raise DegenerateVariance(f"posterior variance {v:g} too small")
    return float(r @ r / v + r.size * np.log(v))


def gpr_loss_variant(posterior_, z_pseudo):
    """Squared distance between the pseudo latent and the posterior mean."""
    r = _check_pair(posterior_, z_pseudo)
    return float(r @ r)


def gpr_loss_and_grads(model, z_query, z_pseudo, full=False):
    """Loss for one unlabeled latent plus gradients w.r.t. query and basis.

    The pseudo latent is a fixed target (no gradient).
    """
    post = posterior(model, z_query)
    r = np.asarray(z_pseudo, dtype=float) - post.mean
    if full:
        loss = gpr_loss_full(post, z_pseudo)
        v = post.variance
        d_mean = -2.0 * r / v
        d_var = -(r @ r) / v ** 2 + r.size / v
    else:
        loss = gpr_loss_variant(post, z_pseudo)
        d_mean = -2.0 * r
        d_var = 0.0
    d_z, d_basis = posterior_backward(model, z_query, d_mean, d_var)
    return loss, d_z, d_basis
