"""Hot numeric kernels with a numba path and a pure-numpy fallback.

The backend is picked once at import time.  Set ``ENLARGED_NUMBA=0`` to force
the numpy implementations (useful for debugging and on platforms without
numba).  Both backends are always importable through :data:`BACKENDS` so the
benchmark and the test-suite can compare them directly.
"""

import math
import os

import numpy as np
from scipy.linalg import solve_triangular

try:
    import numba
except ImportError:  # pragma: no cover - numba is a declared dependency
    numba = None

LOG_2PI = math.log(2.0 * math.pi)


# --------------------------------------------------------------------------
# numpy implementations
# --------------------------------------------------------------------------


def _gauss_logpdf_np(X, mean, chol):
    d = X.shape[1]
    z = solve_triangular(chol, (X - mean).T, lower=True)
    maha = np.einsum("ij,ij->j", z, z)
    return -0.5 * d * LOG_2PI - np.log(np.diag(chol)).sum() - 0.5 * maha


def _log_mean_exp_np(v):
    m = np.max(v)
    if not np.isfinite(m):
        return m
    return m + math.log(np.mean(np.exp(v - m)))


def _weighted_moments_np(X, w):
    mean = w @ X
    R = X - mean
    return mean, (R * w[:, None]).T @ R


def _solve_normal_np(A, b):
    try:
        c = np.linalg.cholesky(A)
    except np.linalg.LinAlgError:
        return b * np.nan, False
    if np.min(np.diag(c)) ** 2 <= 1e-13 * np.trace(A):
        return b * np.nan, False
    z = solve_triangular(c, b, lower=True)
    return solve_triangular(c.T, z, lower=False), True


def _lts_csteps_np(X, y, subsets, h, n_steps):
    k, p = subsets.shape[0], X.shape[1]
    objs = np.full(k, np.inf)
    betas = np.zeros((k, p))
    for s in range(k):
        idx = subsets[s]
        Xs = X[idx]
        beta, ok = _solve_normal_np(Xs.T @ Xs, Xs.T @ y[idx])
        if not ok:
            continue
        obj = np.inf
        for _ in range(n_steps):
            r2 = (y - X @ beta) ** 2
            keep = np.argsort(r2, kind="mergesort")[:h]
            Xk = X[keep]
            new, ok = _solve_normal_np(Xk.T @ Xk, Xk.T @ y[keep])
            if not ok:
                break
            beta = new
            r2 = np.sort((y - X @ beta) ** 2)
            new_obj = r2[:h].sum()
            if new_obj >= obj:
                obj = min(obj, new_obj)
                break
            obj = new_obj
        objs[s] = obj
        betas[s] = beta
    return objs, betas


NUMPY = {
    "gauss_logpdf": _gauss_logpdf_np,
    "log_mean_exp": _log_mean_exp_np,
    "weighted_moments": _weighted_moments_np,
    "lts_csteps": _lts_csteps_np,
}


# --------------------------------------------------------------------------
# numba implementations
# --------------------------------------------------------------------------


_njit = numba.njit(cache=True) if numba is not None else (lambda f: f)


@_njit
def _gauss_logpdf_nb(X, mean, chol):
    n, d = X.shape
    out = np.empty(n)
    logdet = 0.0
    for j in range(d):
        logdet += math.log(chol[j, j])
    const = -0.5 * d * LOG_2PI - logdet
    z = np.empty(d)
    for i in range(n):
        maha = 0.0
        for j in range(d):
            acc = X[i, j] - mean[j]
            for k in range(j):
                acc -= chol[j, k] * z[k]
            z[j] = acc / chol[j, j]
            maha += z[j] * z[j]
        out[i] = const - 0.5 * maha
    return out

@_njit
def _log_mean_exp_nb(v):
    m = -np.inf
    for x in v:
        if x > m:
            m = x
    if not np.isfinite(m):
        return m
    acc = 0.0
    for x in v:
        acc += math.exp(x - m)
    return m + math.log(acc / v.shape[0])

@_njit
def _weighted_moments_nb(X, w):
    n, d = X.shape
    mean = np.zeros(d)
    for i in range(n):
        for j in range(d):
            mean[j] += w[i] * X[i, j]
    S = np.zeros((d, d))
    r = np.empty(d)
    for i in range(n):
        for j in range(d):
            r[j] = X[i, j] - mean[j]
        for j in range(d):
            wr = w[i] * r[j]
            for k in range(j + 1):
                S[j, k] += wr * r[k]
    for j in range(d):
        for k in range(j):
            S[k, j] = S[j, k]
    return mean, S

@_njit
def _solve_normal_nb(A, b):
    # Cholesky with a relative pivot floor; returns (x, ok).
    p = A.shape[0]
    L = np.zeros((p, p))
    tr = 0.0
    for j in range(p):
        tr += A[j, j]
    for j in range(p):
        s = A[j, j]
        for k in range(j):
            s -= L[j, k] * L[j, k]
        if s <= 1e-13 * tr:
            return b * np.nan, False
        L[j, j] = math.sqrt(s)
        for i in range(j + 1, p):
            s2 = A[i, j]
            for k in range(j):
                s2 -= L[i, k] * L[j, k]
            L[i, j] = s2 / L[j, j]
    z = np.empty(p)
    for i in range(p):
        s = b[i]
        for k in range(i):
            s -= L[i, k] * z[k]
        z[i] = s / L[i, i]
    x = np.empty(p)
    for i in range(p - 1, -1, -1):
        s = z[i]
        for k in range(i + 1, p):
            s -= L[k, i] * x[k]
        x[i] = s / L[i, i]
    return x, True

@_njit
def _fit_rows_nb(X, y, rows):
    p = X.shape[1]
    A = np.zeros((p, p))
    b = np.zeros(p)
    for r in rows:
        for j in range(p):
            xj = X[r, j]
            b[j] += xj * y[r]
            for k in range(j + 1):
                A[j, k] += xj * X[r, k]
    for j in range(p):
        for k in range(j):
            A[k, j] = A[j, k]
    return _solve_normal_nb(A, b)

@_njit
def _sq_resid_nb(X, y, beta):
    n, p = X.shape
    r2 = np.empty(n)
    for i in range(n):
        f = 0.0
        for j in range(p):
            f += X[i, j] * beta[j]
        e = y[i] - f
        r2[i] = e * e
    return r2

@_njit
def _lts_csteps_nb(X, y, subsets, h, n_steps):
    k = subsets.shape[0]
    p = X.shape[1]
    objs = np.full(k, np.inf)
    betas = np.zeros((k, p))
    for s in range(k):
        beta, ok = _fit_rows_nb(X, y, subsets[s])
        if not ok:
            continue
        obj = np.inf
        for _ in range(n_steps):
            r2 = _sq_resid_nb(X, y, beta)
            keep = np.argsort(r2, kind="mergesort")[:h]
            new, ok = _fit_rows_nb(X, y, keep)
            if not ok:
                break
            beta = new
            r2 = np.sort(_sq_resid_nb(X, y, beta))
            new_obj = r2[:h].sum()
            if new_obj >= obj:
                obj = min(obj, new_obj)
                break
            obj = new_obj
        objs[s] = obj
        betas[s] = beta
    return objs, betas


NUMBA = {
    "gauss_logpdf": _gauss_logpdf_nb,
    "log_mean_exp": _log_mean_exp_nb,
    "weighted_moments": _weighted_moments_nb,
    "lts_csteps": _lts_csteps_nb,
}


BACKENDS = {"numpy": NUMPY}
if numba is not None:
    BACKENDS["numba"] = NUMBA

_flag = os.environ.get("ENLARGED_NUMBA", "1").strip().lower()
BACKEND = "numba" if ("numba" in BACKENDS and _flag not in {"0", "false", "no", "off"}) else "numpy"

_impl = BACKENDS[BACKEND]
gauss_logpdf = _impl["gauss_logpdf"]
log_mean_exp = _impl["log_mean_exp"]
weighted_moments = _impl["weighted_moments"]
lts_csteps = _impl["lts_csteps"]
