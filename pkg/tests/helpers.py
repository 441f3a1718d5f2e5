"""Shared test utilities: central finite differences and a dense GP oracle."""
import numpy as np

FD_STEP = 1e-4
FD_RTOL = 1e-4


def numeric_grad(f, x, index=None, h=FD_STEP):
    """Central differences of scalar ``f`` w.r.t. array ``x`` (modified in place
    and restored).  ``index`` limits the check to a list of flat positions."""
    if not x.flags.c_contiguous:
        raise ValueError("perturbing a non-contiguous view would not reach the caller")
    flat = x.reshape(-1)
    positions = range(flat.size) if index is None else index
    out = {}
    for i in positions:
        old = flat[i]
        flat[i] = old + h
        fp = f()
        flat[i] = old - h
        fm = f()
        flat[i] = old
        out[i] = (fp - fm) / (2 * h)
    return out


def group_rel_error(analytic, numeric):
    """Max abs difference over a parameter group, relative to the group's
    largest gradient magnitude."""
    a = np.asarray(analytic, dtype=float)
    n = np.asarray(numeric, dtype=float)
    scale = max(np.max(np.abs(a)), np.max(np.abs(n)), 1e-12)
    return float(np.max(np.abs(a - n)) / scale)


def check_grad(f, x, analytic, index=None, h=FD_STEP):
    num = numeric_grad(f, x, index, h)
    keys = sorted(num)
    flat = np.asarray(analytic).reshape(-1)
    return group_rel_error(flat[keys], [num[k] for k in keys])


def dense_posterior(basis, noise, z):
    """Posterior mean and variance via an explicit inverse of the gram matrix."""
    basis = np.asarray(basis, dtype=float)
    n = basis.shape[0]
    gram = np.empty((n, n))
    for i in range(n):
        for j in range(n):
            gram[i, j] = np.exp(-0.5 * np.sum((basis[i] - basis[j]) ** 2))
    k = np.array([np.exp(-0.5 * np.sum((z - b) ** 2)) for b in basis])
    inv = np.linalg.inv(gram + noise * np.eye(n))
    return k @ inv @ basis, 1.0 - k @ inv @ k + noise


def power_eigenvalues(sym, iters=5000):
    """Eigenvalues of a small symmetric PSD matrix by power iteration with deflation."""
    a = np.array(sym, dtype=float)
    vals = []
    rng = np.random.default_rng(0)
    for _ in range(a.shape[0]):
        v = rng.normal(size=a.shape[0])
        lam = 0.0
        for _ in range(iters):
            w = a @ v
            norm = np.linalg.norm(w)
            if norm == 0.0:
                break
            v = w / norm
            lam = v @ a @ v
        vals.append(lam)
        a = a - lam * np.outer(v, v)
    return np.sort(np.array(vals))[::-1]
