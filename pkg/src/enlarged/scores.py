"""Density-power, pseudo-spherical and Hölder scores for multivariate normals.

All scores are functions of two sufficient statistics of a sample against a
model density ``p``::

    A = mean_i p(x_i) ** gamma          (empirical cross term)
    I = integral p(x) ** (1 + gamma) dx (closed form for the normal family)

so every public score here routes through :func:`score_stats`.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Callable, Union

import numpy as np

from . import kernels
from .errors import DataError, DegenerateScoreError, ModelSingularError

#: model density values below this are treated as exactly zero
DENSITY_FLOOR = 1e-300
LOG_DENSITY_FLOOR = math.log(DENSITY_FLOOR)
#: grid on which a custom Hölder generator is validated
PHI_GRID = np.round(np.arange(0.0, 10.0 + 1e-9, 0.01), 10)

PhiLike = Union[str, Callable[[float], float]]


def power_phi(gamma: float) -> Callable:
    return lambda z: gamma - (1.0 + gamma) * np.asarray(z, dtype=float)


def sphere_phi(gamma: float) -> Callable:
    return lambda z: -np.power(np.asarray(z, dtype=float), 1.0 + gamma)


@dataclass(frozen=True)
class GammaScoreConfig:
    """Exponent ``gamma`` and Hölder generator ``phi``.

    ``phi`` is ``"power"`` (density-power score), ``"sphere"`` (lower-bound
    generator, pseudo-spherical score) or a callable ``z -> phi(z)`` on
    ``z >= 0``.  A callable is checked on :data:`PHI_GRID` for ``phi(1) = -1``
    and ``phi(z) >= -z**(1+gamma)``.  Monotonicity of ``z**(1+gamma) phi(u/z)``
    (needed for the profile in ``c`` to be unique) is assumed, not checked.
    """

    gamma: float
    phi: PhiLike = "power"

    def __post_init__(self):
        if not (np.isfinite(self.gamma) and self.gamma > 0):
            raise ValueError(f"gamma must be positive, got {self.gamma!r}")
        if isinstance(self.phi, str):
            if self.phi not in ("power", "sphere"):
                raise ValueError(f"unknown phi {self.phi!r}; use 'power', 'sphere' or a callable")
            return
        if not callable(self.phi):
            raise TypeError("phi must be 'power', 'sphere' or a callable")
        vals = np.array([float(self.phi(z)) for z in PHI_GRID])
        if not np.all(np.isfinite(vals)):
            raise ValueError("custom phi returned non-finite values on the validation grid")
        at_one = float(self.phi(1.0))
        if abs(at_one + 1.0) > 1e-10:
            raise ValueError(f"custom phi must satisfy phi(1) = -1, got {at_one}")
        lower = -np.power(PHI_GRID, 1.0 + self.gamma)
        bad = vals < lower - 1e-12 * np.maximum(1.0, np.abs(lower))
        if np.any(bad):
            z = PHI_GRID[np.argmax(bad)]
            raise ValueError(f"custom phi violates phi(z) >= -z^(1+gamma) at z = {z}")

    @property
    def phi_fn(self) -> Callable:
        if self.phi == "power":
            return power_phi(self.gamma)
        if self.phi == "sphere":
            return sphere_phi(self.gamma)
        return self.phi

    @property
    def phi_name(self) -> str:
        return self.phi if isinstance(self.phi, str) else "custom"


def nearest_pd(cov: np.ndarray, rel_floor: float = 1e-10) -> np.ndarray:
    """Symmetrize ``cov`` and floor its eigenvalues at ``rel_floor * trace / d``."""
    cov = 0.5 * (cov + cov.T)
    d = cov.shape[0]
    tr = np.trace(cov)
    if not np.isfinite(tr) or tr <= 0:
        raise ModelSingularError("covariance has non-positive trace")
    w, V = np.linalg.eigh(cov)
    floor = rel_floor * tr / d
    if np.all(w >= floor):
        return cov
    w = np.maximum(w, floor)
    return (V * w) @ V.T


@dataclass(frozen=True, eq=False)
class MvnParams:
    """Mean vector and covariance of a ``d``-variate normal."""

    mean: np.ndarray
    cov: np.ndarray
    chol: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        mean = np.atleast_1d(np.asarray(self.mean, dtype=float))
        cov = np.atleast_2d(np.asarray(self.cov, dtype=float))
        d = mean.shape[0]
        if mean.ndim != 1 or cov.shape != (d, d):
            raise ValueError(f"shape mismatch: mean {mean.shape}, cov {cov.shape}")
        if not (np.all(np.isfinite(mean)) and np.all(np.isfinite(cov))):
            raise ModelSingularError("non-finite parameters")
        if not np.allclose(cov, cov.T, rtol=1e-10, atol=0.0):
            raise ModelSingularError("covariance is not symmetric")
        cov = 0.5 * (cov + cov.T)
        w = np.linalg.eigvalsh(cov)
        if w[0] <= 1e-14 * max(w[-1], 0.0) or w[-1] <= 0:
            raise ModelSingularError("covariance is not positive definite")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "cov", cov)
        object.__setattr__(self, "chol", np.linalg.cholesky(cov))

    @property
    def dim(self) -> int:
        return self.mean.shape[0]

    @property
    def logdet(self) -> float:
        return 2.0 * float(np.log(np.diag(self.chol)).sum())

    def affine(self, B: np.ndarray, a: np.ndarray) -> "MvnParams":
        """Parameters of ``B x + a`` when ``x`` follows this normal."""
        B = np.atleast_2d(B)
        return MvnParams(B @ self.mean + a, B @ self.cov @ B.T)


@dataclass(frozen=True, eq=False)
class SampleSet:
    points: np.ndarray

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float)
        if pts.ndim == 1:
            pts = pts[:, None]
        if pts.ndim != 2 or pts.shape[0] < 1:
            raise DataError("samples must be a non-empty n x d array")
        if not np.all(np.isfinite(pts)):
            raise DataError("samples contain NaN or Inf")
        object.__setattr__(self, "points", pts)

    @property
    def n(self) -> int:
        return self.points.shape[0]

    @property
    def dim(self) -> int:
        return self.points.shape[1]


@dataclass(frozen=True)
class ScoreValue:
    value: float
    A: float
    I: float
    log_A: float = -math.inf


def as_points(samples) -> np.ndarray:
    if isinstance(samples, SampleSet):
        return samples.points
    return SampleSet(samples).points


def mvn_logpdf(params: MvnParams, X) -> np.ndarray:
    X = np.ascontiguousarray(np.atleast_2d(np.asarray(X, dtype=float)))
    if X.shape[1] != params.dim:
        raise ValueError(f"points have dimension {X.shape[1]}, model has {params.dim}")
    return kernels.gauss_logpdf(X, params.mean, params.chol)


def mvn_density(params: MvnParams, x):
    """Normal density at ``x`` (a single point or an ``n x d`` array)."""
    x = np.asarray(x, dtype=float)
    single = x.ndim <= 1 and (x.size == params.dim)
    out = np.exp(mvn_logpdf(params, x.reshape(1, -1) if single else x))
    return float(out[0]) if single else out


def mvn_power_integral(params: MvnParams, gamma: float) -> float:
    """Closed form of ``integral p(x) ** (1 + gamma) dx`` for a normal ``p``."""
    d = params.dim
    return math.exp(
        -0.5 * gamma * d * kernels.LOG_2PI
        - 0.5 * d * math.log1p(gamma)
        - 0.5 * gamma * params.logdet
    )


def mvn_cross_integral(f: MvnParams, g: MvnParams, gamma: float) -> float:
    """Closed form of ``integral f(x) g(x) ** gamma dx`` for normals ``f``, ``g``."""
    d = f.dim
    # g^gamma is an unnormalized N(mu_g, cov_g / gamma)
    log_scale = (
        -0.5 * gamma * d * kernels.LOG_2PI
        - 0.5 * gamma * g.logdet
        + 0.5 * d * kernels.LOG_2PI
        + 0.5 * (g.logdet - d * math.log(gamma))
    )
    conv = MvnParams(g.mean, f.cov + g.cov / gamma)
    return math.exp(log_scale + float(mvn_logpdf(conv, f.mean[None, :])[0]))


def floored_log_powers(logp: np.ndarray, gamma: float) -> np.ndarray:
    """``gamma * log p`` with densities under :data:`DENSITY_FLOOR` sent to ``-inf``."""
    out = gamma * logp
    out[logp < LOG_DENSITY_FLOOR] = -np.inf
    return out


def score_stats(samples, params: MvnParams, gamma: float) -> tuple[float, float, float]:
    """Return ``(A, log A, I)`` for ``samples`` against ``params``."""
    X = as_points(samples)
    log_a = float(kernels.log_mean_exp(floored_log_powers(mvn_logpdf(params, X), gamma)))
    return math.exp(log_a), log_a, mvn_power_integral(params, gamma)


def holder_from_stats(A: float, I: float, c: float, cfg: GammaScoreConfig) -> float:
    """Hölder score ``phi(A / (c I)) c^(1+gamma) I`` from the sufficient statistics."""
    if c <= 0:
        raise ValueError("c must be positive")
    z = A / (c * I)
    if not z >= 0:
        warnings.warn(f"Hölder generator argument {z} clamped to 0", RuntimeWarning, stacklevel=2)
        z = 0.0
    return float(cfg.phi_fn(z)) * c ** (1.0 + cfg.gamma) * I


def power_from_stats(A: float, I: float, c: float, gamma: float) -> float:
    return gamma * c ** (1.0 + gamma) * I - (1.0 + gamma) * c**gamma * A


def sphere_from_stats(A: float, I: float, gamma: float) -> float:
    return -A / I ** (gamma / (1.0 + gamma))


def power_score(samples, params: MvnParams, c: float, cfg: GammaScoreConfig) -> ScoreValue:
    """Empirical density-power score of the enlarged model ``c * p``."""
    if not c > 0:
        raise ValueError("c must be positive")
    A, log_a, I = score_stats(samples, params, cfg.gamma)
    return ScoreValue(power_from_stats(A, I, c, cfg.gamma), A, I, log_a)


def sphere_score(samples, params: MvnParams, cfg: GammaScoreConfig) -> float:
    """Empirical pseudo-spherical score; blind to any rescaling of the model."""
    A, _, I = score_stats(samples, params, cfg.gamma)
    if A <= 0:
        raise DegenerateScoreError("all samples have model density below the floor")
    return sphere_from_stats(A, I, cfg.gamma)


def holder_score(samples, params: MvnParams, c: float, cfg: GammaScoreConfig) -> float:
    A, _, I = score_stats(samples, params, cfg.gamma)
    return holder_from_stats(A, I, c, cfg)


def profile_c(samples, params: MvnParams, cfg: GammaScoreConfig) -> tuple[float, float]:
    """Optimal scale ``A / I`` for fixed ``params`` and its clip to ``(0, 1]``."""
    A, _, I = score_stats(samples, params, cfg.gamma)
    if A <= 0:
        raise DegenerateScoreError("all samples have model density below the floor")
    c_raw = A / I
    return c_raw, min(1.0, c_raw)
