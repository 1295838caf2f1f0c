"""Robust linear regression with the enlarged location-scale normal model.

The conditional model is ``p(y | x) = N(y; x' beta + b, sigma^2)`` scaled by
``c``.  Because ``integral p(y | x) ** (1 + gamma) dy`` equals
``sigma ** -gamma`` times a constant, the density-power and pseudo-spherical
scores only need the per-sample densities, never a numerical integral.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Union

import numpy as np

from . import kernels
from .density import (
    BOUNDARY,
    DESCENT_SLACK,
    INTERIOR,
    EnlargedFit,
    FitDiagnostics,
    FitOptions,
    lowest_k,
    outlier_count,
)
from .errors import DataError, DegenerateScoreError, ScaleDegenerateError
from .linear import add_intercept, check_rank, lad_irls, lts_search, mad, random_subsets, wls
from .scores import LOG_DENSITY_FLOOR, power_from_stats, sphere_from_stats


def gauss_power_constant(gamma: float) -> float:
    """``integral phi(z) ** (1 + gamma) dz`` for the standard normal ``phi``."""
    return (2.0 * math.pi) ** (-gamma / 2.0) * (1.0 + gamma) ** -0.5


@dataclass(frozen=True, eq=False)
class RegData:
    x: np.ndarray
    y: np.ndarray

    def __post_init__(self):
        x = np.asarray(self.x, dtype=float)
        y = np.asarray(self.y, dtype=float).ravel()
        if x.ndim == 1:
            x = x[:, None]
        if x.ndim != 2 or x.shape[0] != y.shape[0]:
            raise DataError(f"x has shape {x.shape}, y has length {y.shape[0]}")
        if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
            raise DataError("regression data contain NaN or Inf")
        if x.shape[0] < x.shape[1] + 2:
            raise DataError(f"need n >= d + 2 rows, got n={x.shape[0]}, d={x.shape[1]}")
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "y", y)

    @property
    def n(self) -> int:
        return self.y.shape[0]

    @property
    def dim(self) -> int:
        return self.x.shape[1]

    @property
    def design(self) -> np.ndarray:
        return add_intercept(self.x)

    def subset(self, idx) -> "RegData":
        return RegData(self.x[idx], self.y[idx])


@dataclass(frozen=True, eq=False)
class RegParams:
    beta: np.ndarray
    intercept: float
    sigma: float

    def __post_init__(self):
        beta = np.atleast_1d(np.asarray(self.beta, dtype=float))
        object.__setattr__(self, "beta", beta)
        object.__setattr__(self, "intercept", float(self.intercept))
        object.__setattr__(self, "sigma", float(self.sigma))
        if not (self.sigma > 0 and np.isfinite(self.sigma)):
            raise ScaleDegenerateError(f"sigma must be positive and finite, got {self.sigma}")

    @property
    def coef(self) -> np.ndarray:
        """Coefficients in design order: slopes then intercept."""
        return np.append(self.beta, self.intercept)

    @classmethod
    def from_coef(cls, coef: np.ndarray, sigma: float) -> "RegParams":
        return cls(coef[:-1], coef[-1], sigma)

    def predict(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if x.ndim == 1:
            x = x[:, None]
        return x @ self.beta + self.intercept

    def residuals(self, data: RegData) -> np.ndarray:
        return data.y - self.predict(data.x)


@dataclass(frozen=True)
class CondScoreStats:
    A: float
    I: float
    log_A: float


def sigma_floor(data: RegData) -> float:
    return 1e-8 * (mad(data.y) + 1e-12)


def _check_sigma(data: RegData, sigma: float) -> None:
    if sigma <= sigma_floor(data):
        raise ScaleDegenerateError(f"noise scale {sigma:g} hit the floor {sigma_floor(data):g}")


def cond_logpdf(data: RegData, params: RegParams) -> np.ndarray:
    z = params.residuals(data) / params.sigma
    return -0.5 * kernels.LOG_2PI - math.log(params.sigma) - 0.5 * z * z


def cond_stats(
    data: RegData, params: RegParams, gamma: float, s_power_integral: Optional[float] = None
) -> CondScoreStats:
    """Sufficient statistics ``A = mean p(y_i|x_i)^gamma`` and ``I = sigma^-gamma K``.

    ``s_power_integral`` overrides ``K = integral s(z)^(1+gamma) dz``; the
    default is the standard normal value.
    """
    _check_sigma(data, params.sigma)
    logp = cond_logpdf(data, params)
    lw = gamma * logp
    lw[logp < LOG_DENSITY_FLOOR] = -np.inf
    log_a = float(kernels.log_mean_exp(lw))
    K = gauss_power_constant(gamma) if s_power_integral is None else s_power_integral
    return CondScoreStats(math.exp(log_a), params.sigma**-gamma * K, log_a)


def cond_power_score(data: RegData, params: RegParams, c: float, gamma: float) -> float:
    if not c > 0:
        raise ValueError("c must be positive")
    st = cond_stats(data, params, gamma)
    return power_from_stats(st.A, st.I, c, gamma)


def cond_sphere_score(data: RegData, params: RegParams, gamma: float) -> float:
    st = cond_stats(data, params, gamma)
    if st.A <= 0:
        raise DegenerateScoreError("every residual is beyond the density floor")
    return sphere_from_stats(st.A, st.I, gamma)


def c_reg(data: RegData, params: RegParams, gamma: float) -> tuple[float, float]:
    """Profile scale ``A / I`` of the enlarged regression model and its clip at 1."""
    st = cond_stats(data, params, gamma)
    if st.A <= 0:
        raise DegenerateScoreError("every residual is beyond the density floor")
    c_raw = st.A / st.I
    return c_raw, min(1.0, c_raw)


# --------------------------------------------------------------------------
# starting values and IRLS driver
# --------------------------------------------------------------------------


def _screen_scales(R: np.ndarray, data: RegData, gamma: float, skip: int):
    """Profile the pseudo-spherical score over a grid of scales for each residual row.

    The scale grid is the 10%..50% quantiles of ``|r|`` divided by 0.6745,
    ignoring the ``skip`` smallest residuals (exact-fit zeros).  Returns
    ``(best_score, best_sigma)`` per row.
    """
    n = R.shape[1]
    absr = np.sort(np.abs(R), axis=1)
    levels = np.unique(np.clip(skip + (np.array([0.1, 0.2, 0.3, 0.4, 0.5]) * (n - skip)).astype(int), skip, n - 1))
    sig = np.maximum(absr[:, levels] / 0.6745, 2.0 * sigma_floor(data))
    z2 = (R[:, None, :] / sig[:, :, None]) ** 2
    logp = -0.5 * kernels.LOG_2PI - np.log(sig)[:, :, None] - 0.5 * z2
    lw = gamma * logp
    lw[logp < LOG_DENSITY_FLOOR] = -np.inf
    m = lw.max(axis=2, keepdims=True)
    m = np.where(np.isfinite(m), m, 0.0)
    A = np.exp(m[..., 0]) * np.mean(np.exp(lw - m), axis=2)
    I = sig**-gamma * gauss_power_constant(gamma)
    score = -A / I ** (gamma / (1.0 + gamma))
    j = np.argmin(score, axis=1)
    rows = np.arange(R.shape[0])
    return score[rows, j], sig[rows, j]


def _with_profiled_scale(data: RegData, coef: np.ndarray, gamma: float) -> RegParams:
    """``coef`` with the residual scale picked by :func:`_screen_scales`.

    A MAD scale is useless as a start when more than half the residuals are
    outliers; the profiled scale follows the densest residual band instead.
    """
    r = data.y - data.design @ coef
    _, sig = _screen_scales(r[None, :], data, gamma, data.design.shape[1])
    return RegParams.from_coef(coef, float(sig[0]))


def l1_start(data: RegData, gamma: Optional[float] = None) -> RegParams:
    """Least-absolute-deviation fit; MAD residual scale, or a profiled one given ``gamma``."""
    X = data.design
    check_rank(X)
    coef, _ = lad_irls(X, data.y, eps=1e-8 * (mad(data.y) + 1e-12))
    if gamma is not None:
        return _with_profiled_scale(data, coef, gamma)
    r = data.y - X @ coef
    s = mad(r)
    if s <= sigma_floor(data):
        s = float(np.sqrt(np.mean(r * r)))
    return RegParams.from_coef(coef, max(s, 2.0 * sigma_floor(data)))


def lts_start(data: RegData, seed: int, gamma: Optional[float] = None) -> RegParams:
    """Half-coverage LTS fit (high-breakdown start); scale as in :func:`l1_start`."""
    X = data.design
    h = (data.n + X.shape[1] + 1) // 2
    coef, _ = lts_search(X, data.y, h, np.random.default_rng(seed), n_subsets=200)
    if gamma is not None:
        return _with_profiled_scale(data, coef, gamma)
    r = data.y - X @ coef
    s = mad(r)
    if s <= sigma_floor(data):
        s = float(np.sqrt(np.mean(np.sort(r * r)[:h])))
    return RegParams.from_coef(coef, max(s, 2.0 * sigma_floor(data)))


def elemental_starts(data: RegData, gamma: float, k: int, seed: int, n_subsets: int = 500,
                     quantile: float = 0.25) -> list[RegParams]:
    """Best ``k`` exact fits through random ``(d+1)``-point subsets.

    Candidates are ranked by the ``quantile`` point of their absolute
    residuals (least-quantile screening, ignoring the subset's own zeros), so
    the picks are tight fits to a dense part of the data even when most rows
    are outliers.  Ranking by the score itself would favour broad fits that
    straddle moderate outliers.  The scale comes from :func:`_screen_scales`.
    """
    X, y = data.design, data.y
    n, p = X.shape
    idx = random_subsets(np.random.default_rng(seed), n, p, n_subsets)
    Xs, ys = X[idx], y[idx]
    ok = np.abs(np.linalg.det(Xs)) > 1e-12 * np.prod(np.linalg.norm(Xs, axis=1), axis=1)
    if not np.any(ok):
        return []
    coefs = np.linalg.solve(Xs[ok], ys[ok][..., None])[..., 0]
    R = y[None, :] - coefs @ X.T
    q = min(n - 1, p + int(quantile * (n - p)))
    crit = np.sort(np.abs(R), axis=1)[:, q]
    order = np.argsort(crit, kind="stable")[:k]
    _, sig = _screen_scales(R[order], data, gamma, p)
    return [RegParams.from_coef(coefs[i], s) for i, s in zip(order, sig)]


def reg_start_points(data: RegData, opts: FitOptions, gamma: float = 0.1) -> list[RegParams]:
    """Starting values for the regression fixed points.

    Start 0 is the L1 fit.  Start 1 (when ``n_starts >= 2``) is a
    half-coverage LTS fit, which survives leverage outliers that drag the L1
    fit.  Both take the scale from :func:`_with_profiled_scale`.  Remaining
    starts come from :func:`elemental_starts`, which still find the clean
    rows when the realized contamination exceeds one half.  All starts are
    equivariant under ``y -> a y + b``.
    """
    starts = [l1_start(data, gamma)]
    if opts.n_starts >= 2:
        starts.append(lts_start(data, opts.seed, gamma))
    if opts.n_starts >= 3:
        starts.extend(elemental_starts(data, gamma, opts.n_starts - 2, opts.seed))
    return starts


def _reg_change(X: np.ndarray, old: RegParams, new: RegParams) -> float:
    fitted = np.max(np.abs(X @ (new.coef - old.coef)))
    return float(max(fitted, abs(new.sigma - old.sigma)) / old.sigma)


def _irls(data: RegData, init: RegParams, step, objective, opts: FitOptions):
    X = data.design
    cur = init
    f_cur = objective(cur)
    trace = [f_cur]
    backtracks = 0
    converged = False
    it = 0
    for it in range(1, opts.max_iter + 1):
        prop = step(cur)
        accepted = None
        t = 1.0
        for _ in range(40):
            coef = cur.coef + t * (prop.coef - cur.coef)
            sigma = cur.sigma + t * (prop.sigma - cur.sigma)
            cand = RegParams.from_coef(coef, sigma)
            f_cand = objective(cand)
            if f_cand <= f_cur + DESCENT_SLACK * abs(f_cur):
                accepted = cand
                break
            t *= 0.5
            backtracks += 1
        if accepted is None:
            converged = True
            break
        change = _reg_change(X, cur, accepted)
        cur, f_cur = accepted, f_cand
        trace.append(f_cand)
        if change < opts.tol:
            converged = True
            break
    return cur, FitDiagnostics(it, converged, f_cur, score_trace=trace, backtracks=backtracks)


def _weights(data: RegData, params: RegParams, gamma: float) -> np.ndarray:
    logp = cond_logpdf(data, params)
    lw = gamma * logp
    lw[logp < LOG_DENSITY_FLOOR] = -np.inf
    m = np.max(lw)
    if not np.isfinite(m):
        raise DegenerateScoreError("every residual is beyond the density floor")
    w = np.exp(lw - m)
    return w / w.sum()


def _run_starts(data, init, opts, step, objective, gamma):
    if init is None:
        inits = reg_start_points(data, opts, gamma)
    elif isinstance(init, RegParams):
        inits = [init]
    else:
        inits = list(init)
    results = [_irls(data, s, step, objective, opts) for s in inits]
    k = min(range(len(results)), key=lambda j: (results[j][1].score, j))
    params, diag = results[k]
    diag.start = k
    _check_sigma(data, params.sigma)
    return params, diag


# --------------------------------------------------------------------------
# public fitters
# --------------------------------------------------------------------------


def fit_sphere_reg(
    data: RegData,
    gamma: float,
    opts: FitOptions = FitOptions(),
    init: Union[None, RegParams, list] = None,
) -> tuple[RegParams, FitDiagnostics]:
    """Minimize the conditional pseudo-spherical score by IRLS.

    Weights ``exp(-gamma r^2 / (2 sigma^2))``; coefficients from weighted
    least squares; ``sigma^2 = (1 + gamma) sum w r^2 / sum w``.
    """
    X = data.design
    check_rank(X)
    y = data.y

    def step(p):
        w = _weights(data, p, gamma)
        coef = wls(X, y, w)
        r = y - X @ coef
        s2 = (1.0 + gamma) * float(w @ (r * r))
        _check_sigma(data, math.sqrt(s2))
        return RegParams.from_coef(coef, math.sqrt(s2))

    def objective(p):
        st = cond_stats(data, p, gamma)
        return sphere_from_stats(st.A, st.I, gamma)

    return _run_starts(data, init, opts, step, objective, gamma)


def fit_power_reg(
    data: RegData,
    gamma: float,
    opts: FitOptions = FitOptions(),
    init: Union[None, RegParams, list] = None,
) -> tuple[RegParams, FitDiagnostics]:
    """Minimize the conditional density-power score at ``c = 1`` by IRLS.

    Same weights as :func:`fit_sphere_reg`; the ``sigma^-gamma`` normalization
    term changes the scale update to
    ``sigma^2 = (1 + gamma) r / ((1 + gamma) r - gamma) * sum w e^2`` with
    ``r = A / I``.
    """
    X = data.design
    check_rank(X)
    y = data.y

    def step(p):
        w = _weights(data, p, gamma)
        st = cond_stats(data, p, gamma)
        ratio = st.A / st.I
        denom = (1.0 + gamma) * ratio - gamma
        coef = wls(X, y, w)
        r = y - X @ coef
        scatter = float(w @ (r * r))
        if denom > 0:
            s2 = (1.0 + gamma) * ratio / denom * scatter
        else:
            # outside the update's domain: take the sphere step, backtracking guards descent
            s2 = (1.0 + gamma) * scatter
        _check_sigma(data, math.sqrt(s2))
        return RegParams.from_coef(coef, math.sqrt(s2))

    def objective(p):
        st = cond_stats(data, p, gamma)
        return power_from_stats(st.A, st.I, 1.0, gamma)

    return _run_starts(data, init, opts, step, objective, gamma)


def fit_enlarged_reg(data: RegData, gamma: float, opts: FitOptions = FitOptions()) -> EnlargedFit:
    """Fit ``c * p_theta(y | x)`` with ``0 < c <= 1`` under the density-power score.

    Pseudo-spherical IRLS first; if the profile ``c_reg`` at that solution is
    at most 1 it is the answer, otherwise ``c`` is pinned at 1 and the
    density-power IRLS refits the coefficients.  Under heterogeneous
    contamination ``1 - c_hat`` estimates the expected contamination ratio.
    """
    theta, diag = fit_sphere_reg(data, gamma, opts)
    st = cond_stats(data, theta, gamma)
    c_raw = st.A / st.I
    info = {"sphere": diag}
    if c_raw <= 1.0:
        score = power_from_stats(st.A, st.I, c_raw, gamma)
        return EnlargedFit(c_raw, theta, INTERIOR, diag.iterations, diag.converged, score, c_raw, info)

    candidates = [fit_power_reg(data, gamma, opts, init=theta), fit_power_reg(data, gamma, opts)]
    theta_bar, bdiag = min(candidates, key=lambda r: r[1].score)
    score = bdiag.score
    pinned = power_from_stats(st.A, st.I, 1.0, gamma)
    if pinned < score:
        theta_bar, score = theta, pinned
    info["boundary"] = bdiag
    return EnlargedFit(
        1.0,
        theta_bar,
        BOUNDARY,
        diag.iterations + bdiag.iterations,
        diag.converged and bdiag.converged,
        score,
        c_raw,
        info,
    )


def detect_outliers_reg(data: RegData, fit: EnlargedFit) -> np.ndarray:
    """Indices of the ``round(n (1 - c_hat))`` pairs with lowest ``p(y_i | x_i)``."""
    return lowest_k(cond_logpdf(data, fit.theta_hat), outlier_count(data.n, fit.c_hat))
