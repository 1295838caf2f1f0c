"""Reference regression estimators: L2, L1, Huber, LTS and Geman-McClure."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .density import FitOptions
from .errors import DataError, InvalidTrimError
from .linear import check_rank, lad_irls, lts_search, mad, wls
from .regression import RegData, RegParams, l1_start, lts_start

KINDS = ("L2", "L1", "Huber", "LTS", "GemMc")


@dataclass(frozen=True)
class BaselineKind:
    kind: str
    huber_k: float = 1.345
    trim_ratio: Optional[float] = None
    n_subsets: int = 500
    n_csteps: int = 10
    n_refine: int = 10

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown baseline {self.kind!r}; expected one of {KINDS}")
        if self.kind == "Huber" and not self.huber_k > 0:
            raise ValueError("huber_k must be positive")
        if self.kind == "LTS":
            if self.trim_ratio is None:
                raise ValueError("LTS needs trim_ratio")
            if not 0.0 <= self.trim_ratio <= 0.5:
                raise ValueError("trim_ratio must lie in [0, 0.5]")


# --------------------------------------------------------------------------
# M-estimation by IRLS with a per-iteration MAD scale
# --------------------------------------------------------------------------


def huber_rho(u, k):
    a = np.abs(u)
    return np.where(a <= k, 0.5 * u * u, k * a - 0.5 * k * k)


def huber_weight(u, k):
    a = np.abs(u)
    return np.where(a <= k, 1.0, k / np.maximum(a, 1e-300))


def gemmc_rho(u):
    return 0.5 * u * u / (1.0 + u * u)


def gemmc_weight(u):
    return (1.0 + u * u) ** -2


@dataclass
class IrlsResult:
    coef: np.ndarray
    scale: float
    weights: np.ndarray
    # (objective before, objective after) of each step at that step's scale
    steps: list


def irls_m(X, y, coef0, rho, weight, opts: FitOptions, scale_floor: float) -> IrlsResult:
    """M-estimator IRLS; the scale is ``1.4826 * MAD(residuals)`` re-estimated each step.

    At a fixed scale each weighted least-squares step majorizes the
    objective (``rho`` is concave in ``r^2`` for both losses used here), so
    ``after <= before`` for every recorded step.
    """
    coef = coef0
    steps = []
    w = np.ones(len(y))
    s = scale_floor
    for _ in range(opts.max_iter):
        r = y - X @ coef
        s = max(mad(r), scale_floor)
        before = float(np.sum(rho(r / s)))
        w = weight(r / s)
        new = wls(X, y, w)
        after = float(np.sum(rho((y - X @ new) / s)))
        steps.append((before, after))
        change = np.max(np.abs(X @ (new - coef))) / s
        coef = new
        if change < opts.tol:
            break
    r = y - X @ coef
    s = max(mad(r), scale_floor)
    return IrlsResult(coef, s, w, steps)


def _weighted_rms(r, w) -> float:
    sw = float(np.sum(w))
    val = math.sqrt(float(np.sum(w * r * r)) / sw) if sw > 0 else 0.0
    return val if val > 0 else float(np.sqrt(np.mean(r * r)))


def fit_baseline(data: RegData, spec: BaselineKind, opts: FitOptions = FitOptions()) -> RegParams:
    """Fit one of the reference estimators; ``sigma`` is that method's residual scale."""
    X, y = data.design, data.y
    check_rank(X)
    floor = 1e-8 * (mad(y) + 1e-12)
    kind = spec.kind

    if kind == "L2":
        coef = wls(X, y)
        r = y - X @ coef
        return RegParams.from_coef(coef, _weighted_rms(r, np.ones_like(r)))

    if kind == "L1":
        eps = 1e-8 * (mad(y) + 1e-12)
        coef, _ = lad_irls(X, y, eps=eps, max_iter=opts.max_iter)
        r = y - X @ coef
        return RegParams.from_coef(coef, _weighted_rms(r, 1.0 / np.sqrt(r * r + eps * eps)))

    if kind == "Huber":
        res = irls_m(
            X, y, wls(X, y),
            lambda u: huber_rho(u, spec.huber_k),
            lambda u: huber_weight(u, spec.huber_k),
            opts, floor,
        )
        r = y - X @ res.coef
        return RegParams.from_coef(res.coef, _weighted_rms(r, res.weights))

    if kind == "LTS":
        n, p = X.shape
        h = int(math.ceil(n * (1.0 - spec.trim_ratio)))
        if h < p:
            raise InvalidTrimError(f"h = {h} is below the {p} coefficients")
        coef, _ = lts_search(
            X, y, h, np.random.default_rng(opts.seed),
            n_subsets=spec.n_subsets, n_csteps=spec.n_csteps, n_refine=spec.n_refine,
        )
        r2 = np.sort((y - X @ coef) ** 2)[:h]
        return RegParams.from_coef(coef, max(math.sqrt(float(np.mean(r2))), floor))

    # GemMc: IRLS from the L1 and half-coverage LTS starts; keep the smallest final scale
    starts = [l1_start(data).coef]
    if opts.n_starts >= 2:
        starts.append(lts_start(data, opts.seed).coef)
    fits = [irls_m(X, y, c0, gemmc_rho, gemmc_weight, opts, floor) for c0 in starts]
    best = min(range(len(fits)), key=lambda k: (fits[k].scale, k))
    res = fits[best]
    r = y - X @ res.coef
    return RegParams.from_coef(res.coef, _weighted_rms(r, res.weights))


def rmse(params: RegParams, test: RegData) -> float:
    """Root mean squared prediction error on ``test``."""
    if test.n == 0:
        raise DataError("empty test set")
    e = test.y - params.predict(test.x)
    return float(np.sqrt(np.mean(e * e)))
