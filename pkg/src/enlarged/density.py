"""Joint estimation of a normal density and its contamination ratio.

The enlarged model ``c * p_theta`` is fitted in two stages: minimize the
pseudo-spherical score over ``theta`` (scale blind), read off the profile
``c(theta) = A / I``, and only when that exceeds one refit ``theta`` under the
Hölder score with ``c`` pinned at 1.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Union

import numpy as np
from scipy import optimize
from scipy.linalg import solve_triangular

from . import kernels
from .errors import DegenerateScoreError, ModelSingularError
from .scores import (
    GammaScoreConfig,
    MvnParams,
    as_points,
    floored_log_powers,
    holder_from_stats,
    mvn_logpdf,
    nearest_pd,
    power_from_stats,
    profile_c,
    score_stats,
    sphere_from_stats,
)

INTERIOR = "interior"
BOUNDARY = "boundary"
DESCENT_SLACK = 1e-10


@dataclass(frozen=True)
class FitOptions:
    max_iter: int = 500
    tol: float = 1e-8
    n_starts: int = 5
    seed: int = 0

    def __post_init__(self):
        if self.max_iter < 1 or self.n_starts < 1 or not self.tol > 0:
            raise ValueError("need max_iter >= 1, n_starts >= 1 and tol > 0")


@dataclass
class FitDiagnostics:
    iterations: int
    converged: bool
    score: float
    start: int = 0
    score_trace: list = field(default_factory=list, repr=False)
    backtracks: int = 0


@dataclass
class EnlargedFit:
    """Result of fitting ``c * p_theta``.

    ``branch`` is ``"interior"`` when the pseudo-spherical fit gave a profile
    ``c_raw <= 1`` (then ``c_hat = c_raw``), ``"boundary"`` when ``c_hat`` was
    pinned at 1 and ``theta`` refitted.
    """

    c_hat: float
    theta_hat: object
    branch: str
    iterations: int
    converged: bool
    final_score: float
    c_raw: float = math.nan
    diagnostics: dict = field(default_factory=dict, repr=False)

    @property
    def contamination(self) -> float:
        return 1.0 - self.c_hat


# --------------------------------------------------------------------------
# starting values
# --------------------------------------------------------------------------


def _robust_start(X: np.ndarray) -> MvnParams:
    med = np.median(X, axis=0)
    mad = 1.4826 * np.median(np.abs(X - med), axis=0)
    sd = X.std(axis=0)
    scale = np.where(mad > 0, mad, sd)
    if np.any(scale <= 0):
        raise ModelSingularError("a coordinate has zero spread")
    return MvnParams(med, np.diag(scale**2))


def start_points(X: np.ndarray, opts: FitOptions) -> list[MvnParams]:
    """Median/MAD start followed by ``n_starts - 1`` seeded perturbations of it."""
    base = _robust_start(X)
    starts = [base]
    rng = np.random.default_rng(opts.seed)
    sd = np.sqrt(np.diag(base.cov))
    for _ in range(opts.n_starts - 1):
        mean = base.mean + 0.5 * sd * rng.standard_normal(X.shape[1])
        var = sd**2 * np.exp(0.5 * rng.standard_normal(X.shape[1]))
        starts.append(MvnParams(mean, np.diag(var)))
    return starts


# --------------------------------------------------------------------------
# fixed-point machinery
# --------------------------------------------------------------------------


def _param_change(old: MvnParams, new: MvnParams) -> float:
    # Change measured in the metric of the old covariance, so it is affine invariant.
    L = old.chol
    dm = solve_triangular(L, new.mean - old.mean, lower=True)
    dS = solve_triangular(L, new.cov - old.cov, lower=True)
    dS = solve_triangular(L, dS.T, lower=True)
    return float(max(np.max(np.abs(dm)), np.max(np.abs(dS))))


def _gamma_weights(X: np.ndarray, params: MvnParams, gamma: float) -> tuple[np.ndarray, float]:
    lw = floored_log_powers(mvn_logpdf(params, X), gamma)
    m = np.max(lw)
    if not np.isfinite(m):
        raise DegenerateScoreError("all samples have model density below the floor")
    w = np.exp(lw - m)
    return w / w.sum(), m


def _spread(X: np.ndarray) -> float:
    return float(np.mean(np.sum((X - np.median(X, axis=0)) ** 2, axis=1)))


def _checked_cov(cov: np.ndarray, spread: float) -> np.ndarray:
    if not np.all(np.isfinite(cov)) or np.trace(cov) <= 1e-12 * spread:
        raise ModelSingularError("covariance collapsed during fitting")
    return nearest_pd(cov)


def _fixed_point(
    X: np.ndarray,
    init: MvnParams,
    step: Callable[[MvnParams], MvnParams],
    objective: Callable[[MvnParams], float],
    opts: FitOptions,
) -> tuple[MvnParams, FitDiagnostics]:
    """Iterate ``step`` with backtracking so ``objective`` never increases."""
    spread = _spread(X)
    cur = init
    f_cur = objective(cur)
    trace = [f_cur]
    backtracks = 0
    converged = False
    it = 0
    for it in range(1, opts.max_iter + 1):
        try:
            proposal = step(cur)
        except ModelSingularError:
            proposal = None
        t = 1.0
        accepted = None
        for _ in range(40):
            if proposal is not None:
                mean = cur.mean + t * (proposal.mean - cur.mean)
                cov = _checked_cov(cur.cov + t * (proposal.cov - cur.cov), spread)
                cand = MvnParams(mean, cov)
                f_cand = objective(cand)
                if f_cand <= f_cur + DESCENT_SLACK * abs(f_cur):
                    accepted = cand
                    break
            else:
                break
            t *= 0.5
            backtracks += 1
        if accepted is None:
            if proposal is None:
                raise ModelSingularError("covariance collapsed during fitting")
            # no descent direction left along the update: stationary to working precision
            converged = True
            break
        change = _param_change(cur, accepted)
        cur, f_cur = accepted, f_cand
        trace.append(f_cand)
        if change < opts.tol:
            converged = True
            break
    return cur, FitDiagnostics(it, converged, f_cur, score_trace=trace, backtracks=backtracks)


def _best(results: list[tuple[MvnParams, FitDiagnostics]]):
    best_k = min(range(len(results)), key=lambda k: (results[k][1].score, k))
    params, diag = results[best_k]
    diag.start = best_k
    return params, diag


def _as_init(init, X, opts) -> list[MvnParams]:
    if init is None:
        return start_points(X, opts)
    if isinstance(init, MvnParams):
        return [init]
    return list(init)


# --------------------------------------------------------------------------
# public fitters
# --------------------------------------------------------------------------


def fit_sphere_mvn(
    samples,
    cfg: GammaScoreConfig,
    opts: FitOptions = FitOptions(),
    init: Union[None, MvnParams, list] = None,
) -> tuple[MvnParams, FitDiagnostics]:
    """Minimize the empirical pseudo-spherical score over normal models.

    Uses the gamma-weighted fixed point: with weights ``w_i`` proportional to
    ``p(x_i) ** gamma``, set the mean to the weighted mean and the covariance
    to ``(1 + gamma)`` times the weighted scatter.  Each accepted iterate does
    not increase the score.  With ``init=None`` every start from
    :func:`start_points` is run and the lowest final score wins (ties go to the
    lowest start index).
    """
    X = as_points(samples)
    if X.shape[0] <= X.shape[1]:
        raise ModelSingularError("need more samples than dimensions")
    gamma = cfg.gamma
    spread = _spread(X)

    def step(p):
        w, _ = _gamma_weights(X, p, gamma)
        mean, S = kernels.weighted_moments(X, w)
        return MvnParams(mean, _checked_cov((1.0 + gamma) * S, spread))

    def objective(p):
        A, _, I = score_stats(X, p, gamma)
        return sphere_from_stats(A, I, gamma)

    return _best([_fixed_point(X, s, step, objective, opts) for s in _as_init(init, X, opts)])


def fit_power_mvn(
    samples,
    cfg: GammaScoreConfig,
    opts: FitOptions = FitOptions(),
    init: Union[None, MvnParams, list] = None,
) -> tuple[MvnParams, FitDiagnostics]:
    """Minimize the empirical density-power score with ``c`` fixed at 1.

    Stationarity in the covariance includes the gradient of the
    ``integral p ** (1 + gamma)`` term, which turns the weighted-scatter update
    into ``(1 + gamma) S r / ((1 + gamma) r - gamma)`` with ``r = A / I``.
    Steps that increase the score are halved.
    """
    X = as_points(samples)
    if X.shape[0] <= X.shape[1]:
        raise ModelSingularError("need more samples than dimensions")
    gamma = cfg.gamma
    spread = _spread(X)

    def step(p):
        w, _ = _gamma_weights(X, p, gamma)
        mean, S = kernels.weighted_moments(X, w)
        A, _, I = score_stats(X, p, gamma)
        r = A / I
        denom = (1.0 + gamma) * r - gamma
        if not denom > 0:
            raise ModelSingularError("density-power update left its domain")
        return MvnParams(mean, _checked_cov((1.0 + gamma) * r / denom * S, spread))

    def objective(p):
        A, _, I = score_stats(X, p, gamma)
        return power_from_stats(A, I, 1.0, gamma)

    return _best([_fixed_point(X, s, step, objective, opts) for s in _as_init(init, X, opts)])


def _pack(p: MvnParams) -> np.ndarray:
    L = p.chol.copy()
    L[np.diag_indices_from(L)] = np.log(np.diag(L))
    return np.concatenate([p.mean, L[np.tril_indices_from(L)]])


def _unpack(v: np.ndarray, d: int) -> MvnParams:
    L = np.zeros((d, d))
    L[np.tril_indices(d)] = v[d:]
    L[np.diag_indices(d)] = np.exp(L[np.diag_indices(d)])
    return MvnParams(v[:d], L @ L.T)


def fit_holder_mvn(
    samples, cfg: GammaScoreConfig, opts: FitOptions = FitOptions(), init: Optional[MvnParams] = None
) -> tuple[MvnParams, FitDiagnostics]:
    """Minimize ``S_phi(p~, p_theta)`` at ``c = 1`` for an arbitrary generator.

    General-purpose fallback (BFGS on mean and log-Cholesky factor) used for
    custom generators that have no dedicated fixed point.
    """
    X = as_points(samples)
    d = X.shape[1]
    start = init if init is not None else start_points(X, opts)[0]

    def objective(v):
        try:
            p = _unpack(v, d)
        except ModelSingularError:
            return np.inf
        A, _, I = score_stats(X, p, cfg.gamma)
        return holder_from_stats(A, I, 1.0, cfg)

    x0 = _pack(start)
    f0 = objective(x0)
    res = optimize.minimize(objective, x0, method="BFGS", options={"maxiter": opts.max_iter, "gtol": 1e-9})
    best = res.x if res.fun <= f0 else x0
    return _unpack(best, d), FitDiagnostics(int(res.nit), bool(res.success), float(min(res.fun, f0)))


def fit_enlarged(samples, cfg: GammaScoreConfig, opts: FitOptions = FitOptions()) -> EnlargedFit:
    """Fit ``c * N(mu, Sigma)`` with ``0 < c <= 1`` under the Hölder score ``cfg``.

    1. pseudo-spherical fit (best of ``opts.n_starts``) gives ``theta~``;
    2. if ``c(theta~) <= 1`` return ``(c(theta~), theta~)``;
    3. otherwise refit ``theta`` at ``c = 1`` and return ``(1, theta_bar)``.

    For the ``"sphere"`` generator the score is flat in ``c``; ``c`` is then
    reported as ``min(1, c(theta~))`` and flagged ``c_identified=False``.
    """
    X = as_points(samples)
    gamma = cfg.gamma
    theta, diag = fit_sphere_mvn(X, cfg, opts)
    c_raw, _ = profile_c(X, theta, cfg)
    info = {"sphere": diag, "c_identified": cfg.phi != "sphere", "phi": cfg.phi_name}
    A, _, I = score_stats(X, theta, gamma)

    if c_raw <= 1.0 or cfg.phi == "sphere":
        c_hat = min(c_raw, 1.0)
        branch = INTERIOR if c_raw <= 1.0 else BOUNDARY
        score = holder_from_stats(A, I, c_hat, cfg)
        return EnlargedFit(c_hat, theta, branch, diag.iterations, diag.converged, score, c_raw, info)

    if cfg.phi == "power":
        candidates = [fit_power_mvn(X, cfg, opts, init=theta), fit_power_mvn(X, cfg, opts)]
        theta_bar, bdiag = min(candidates, key=lambda r: r[1].score)
    else:
        theta_bar, bdiag = fit_holder_mvn(X, cfg, opts, init=theta)
    A_b, _, I_b = score_stats(X, theta_bar, gamma)
    score = holder_from_stats(A_b, I_b, 1.0, cfg)
    # never worse than pinning c = 1 at the sphere solution
    fallback_score = holder_from_stats(A, I, 1.0, cfg)
    if fallback_score < score:
        theta_bar, score = theta, fallback_score
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


def outlier_count(n: int, c_hat: float) -> int:
    return int(math.floor(n * (1.0 - c_hat) + 0.5))


def lowest_k(values: np.ndarray, k: int) -> np.ndarray:
    """Indices of the ``k`` smallest ``values``; ties resolved by lower index."""
    if k <= 0:
        return np.array([], dtype=int)
    order = np.argsort(values, kind="stable")[:k]
    return np.sort(order)


def detect_outliers(samples, fit: EnlargedFit) -> np.ndarray:
    """Indices of the ``round(n (1 - c_hat))`` samples with lowest fitted density."""
    X = as_points(samples)
    return lowest_k(mvn_logpdf(fit.theta_hat, X), outlier_count(X.shape[0], fit.c_hat))
