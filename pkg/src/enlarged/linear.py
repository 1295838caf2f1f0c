"""Weighted least squares and least-absolute-deviation helpers."""

from __future__ import annotations

import numpy as np

from . import kernels
from .errors import DesignSingularError


def add_intercept(x: np.ndarray) -> np.ndarray:
    return np.column_stack([x, np.ones(x.shape[0])])


def check_rank(X: np.ndarray) -> None:
    if X.shape[0] < X.shape[1] or np.linalg.matrix_rank(X) < X.shape[1]:
        raise DesignSingularError("design matrix with intercept is rank deficient")


def wls(X: np.ndarray, y: np.ndarray, w=None) -> np.ndarray:
    """Weighted least squares coefficients; ``w=None`` is ordinary least squares."""
    if w is None:
        coef, _, rank, _ = np.linalg.lstsq(X, y, rcond=None)
    else:
        sw = np.sqrt(w)
        coef, _, rank, _ = np.linalg.lstsq(X * sw[:, None], y * sw, rcond=None)
    if rank < X.shape[1]:
        raise DesignSingularError("weighted design is rank deficient")
    return coef


def mad(v: np.ndarray) -> float:
    """Normal-consistent median absolute deviation about the median."""
    return 1.4826 * float(np.median(np.abs(v - np.median(v))))


def lad_irls(X: np.ndarray, y: np.ndarray, eps: float, max_iter: int = 500, tol: float = 1e-10):
    """Least absolute deviations via IRLS on ``sqrt(r^2 + eps^2)``.

    Returns ``(coef, objective_trace)``.  The smoothed objective is majorized
    by a quadratic at every step, so the trace is non-increasing.
    """
    coef = wls(X, y)
    r = y - X @ coef
    trace = [float(np.sum(np.sqrt(r * r + eps * eps)))]
    for _ in range(max_iter):
        w = 1.0 / np.sqrt(r * r + eps * eps)
        new = wls(X, y, w)
        r = y - X @ new
        obj = float(np.sum(np.sqrt(r * r + eps * eps)))
        step = np.max(np.abs(X @ (new - coef)))
        coef = new
        trace.append(obj)
        if step <= tol * (np.max(np.abs(y)) + eps) or trace[-2] - obj <= 1e-15 * trace[-2]:
            break
    return coef, trace


def random_subsets(rng: np.random.Generator, n: int, p: int, k: int) -> np.ndarray:
    """``k`` random index sets of size ``p`` drawn without replacement from ``range(n)``."""
    return np.argsort(rng.random((k, n)), axis=1)[:, :p].astype(np.int64)


def lts_search(
    X: np.ndarray,
    y: np.ndarray,
    h: int,
    rng: np.random.Generator,
    n_subsets: int = 500,
    n_csteps: int = 10,
    n_refine: int = 10,
):
    """FAST-LTS style search for the coefficients minimizing the ``h`` smallest squared residuals.

    Random ``p``-subsets each get ``n_csteps`` concentration steps; the best
    ``n_refine`` are iterated to convergence.  Returns ``(coef, objective)``.
    """
    p = X.shape[1]
    X = np.ascontiguousarray(X, dtype=float)
    y = np.ascontiguousarray(y, dtype=float)
    subsets = random_subsets(rng, X.shape[0], p, n_subsets)
    objs, coefs = kernels.lts_csteps(X, y, subsets, h, n_csteps)
    order = np.argsort(objs, kind="stable")[:n_refine]
    best_obj, best = np.inf, None
    for k in order:
        if not np.isfinite(objs[k]):
            continue
        # start the refinement from the h-subset implied by the candidate coefficients
        r2 = (y - X @ coefs[k]) ** 2
        keep = np.sort(np.argsort(r2, kind="stable")[:h])
        o, c = kernels.lts_csteps(X, y, keep[None, :], h, 1000)
        if o[0] < best_obj:
            best_obj, best = float(o[0]), c[0]
    if best is None:
        raise DesignSingularError("no non-singular subset found for LTS")
    return best, best_obj
