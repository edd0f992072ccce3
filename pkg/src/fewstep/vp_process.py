"""Variance-preserving diffusion coefficients and noise-level algebra.

The forward process is the linear-beta VP SDE

    dx = -0.5 beta(t) x dt + sqrt(beta(t)) dw,   beta(t) = beta_min + t (beta_max - beta_min).

Writing ``E(t) = 0.5 beta_d t^2 + beta_min t`` with ``beta_d = beta_max - beta_min``,
the marginal of ``x_t`` given ``x_0`` is ``N(alpha x_0, sigma_vp^2 I)`` with

    alpha    = s(t)     = exp(-E/2)
    sigma_vp = s(t) sigma(t) = sqrt(1 - exp(-E))
    sigma(t) = sqrt(exp(E) - 1)          (scaled-variable noise level)
    lambda   = log(alpha / sigma_vp) = -log sigma(t)

Everything is evaluated in float64 through ``expm1``/``log1p`` so the identities
hold to a few ulps over the whole unit interval.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "NoiseScheduleParams",
    "NoiseLevel",
    "PreconditionCoeffs",
    "beta_of_t",
    "sigma_karras",
    "scale_s",
    "sigma_vp_of_t",
    "t_of_sigma",
    "lambda_of_t",
    "t_of_lambda",
    "noise_level",
    "level_from_sigma",
    "perturb",
    "precondition",
]


def _check_unit_interval(t, name="t"):
    arr = np.asarray(t, dtype=np.float64)
    if not np.all(np.isfinite(arr)) or np.any(arr < 0.0) or np.any(arr > 1.0):
        raise ValueError(f"{name} must lie in [0, 1], got {t!r}")
    return arr


def _out(arr):
    return float(arr) if np.ndim(arr) == 0 else arr


@dataclass(frozen=True)
class NoiseScheduleParams:
    """Constants of the linear-beta VP process.

    ``sigma_min``/``sigma_max`` are derived from ``t_min``/``t_max`` and kept
    only as caches.
    """

    beta_min: float = 0.1
    beta_max: float = 20.0
    t_min: float = 1e-3
    t_max: float = 1.0
    sigma_min: float = field(init=False)
    sigma_max: float = field(init=False)

    def __post_init__(self):
        if not 0.0 < self.beta_min < self.beta_max:
            raise ValueError("need 0 < beta_min < beta_max")
        if not 0.0 < self.t_min < self.t_max <= 1.0:
            raise ValueError("need 0 < t_min < t_max <= 1")
        object.__setattr__(self, "sigma_min", sigma_karras(self.t_min, self))
        object.__setattr__(self, "sigma_max", sigma_karras(self.t_max, self))

    @property
    def beta_d(self) -> float:
        return self.beta_max - self.beta_min

    @classmethod
    def from_sigma_range(cls, sigma_min, sigma_max, beta_min=0.1, beta_max=20.0):
        """Build params whose time range maps onto ``[sigma_min, sigma_max]``."""
        probe = cls(beta_min=beta_min, beta_max=beta_max)
        t_lo = t_of_sigma(sigma_min, probe)
        t_hi = t_of_sigma(sigma_max, probe)
        if t_hi > 1.0:
            raise ValueError(
                f"sigma_max={sigma_max} exceeds sigma(1)={probe.sigma_max:.6g} for these betas"
            )
        return cls(beta_min=beta_min, beta_max=beta_max, t_min=t_lo, t_max=t_hi)

    def to_dict(self):
        return {
            "beta_min": self.beta_min,
            "beta_max": self.beta_max,
            "t_min": self.t_min,
            "t_max": self.t_max,
        }


def _exponent(t, p):
    return 0.5 * p.beta_d * t * t + p.beta_min * t


def beta_of_t(t, p: NoiseScheduleParams):
    t = _check_unit_interval(t)
    return _out(p.beta_min + t * (p.beta_max - p.beta_min))


def sigma_karras(t, p: NoiseScheduleParams):
    t = _check_unit_interval(t)
    return _out(np.sqrt(np.expm1(_exponent(t, p))))


def scale_s(t, p: NoiseScheduleParams):
    t = _check_unit_interval(t)
    return _out(np.exp(-0.5 * _exponent(t, p)))


def sigma_vp_of_t(t, p: NoiseScheduleParams):
    t = _check_unit_interval(t)
    return _out(np.sqrt(-np.expm1(-_exponent(t, p))))


def _t_from_log1p_sigma2(L, p):
    # Positive root of 0.5 beta_d t^2 + beta_min t = L, cancellation-free form.
    return 2.0 * L / (p.beta_min + np.sqrt(p.beta_min**2 + 2.0 * p.beta_d * L))


def t_of_sigma(sigma, p: NoiseScheduleParams):
    """Inverse of :func:`sigma_karras`; may return t > 1 for sigma > sigma(1)."""
    sigma = np.asarray(sigma, dtype=np.float64)
    if np.any(~(sigma >= 0.0)):
        raise ValueError(f"sigma must be non-negative, got {sigma!r}")
    return _out(_t_from_log1p_sigma2(np.log1p(sigma * sigma), p))


def lambda_of_t(t, p: NoiseScheduleParams):
    t = _check_unit_interval(t)
    if np.any(t <= 0.0):
        raise ValueError("log-SNR is infinite at t = 0")
    return _out(-0.5 * np.log(np.expm1(_exponent(t, p))))


def t_of_lambda(lam, p: NoiseScheduleParams):
    lam = np.asarray(lam, dtype=np.float64)
    if not np.all(np.isfinite(lam)):
        raise ValueError("lambda must be finite")
    # log(1 + sigma^2) with sigma = exp(-lambda)
    return _out(_t_from_log1p_sigma2(np.logaddexp(0.0, -2.0 * lam), p))


@dataclass(frozen=True)
class NoiseLevel:
    t: float
    sigma: float
    s: float
    alpha: float
    sigma_vp: float
    lam: float


def noise_level(t: float, p: NoiseScheduleParams) -> NoiseLevel:
    """All noise-level quantities at time ``t`` (scalar)."""
    t = float(_check_unit_interval(t))
    e = _exponent(t, p)
    alpha = math.exp(-0.5 * e)
    em1 = math.expm1(e)
    return NoiseLevel(
        t=t,
        sigma=math.sqrt(em1),
        s=alpha,
        alpha=alpha,
        sigma_vp=math.sqrt(-math.expm1(-e)),
        lam=-0.5 * math.log(em1) if em1 > 0.0 else math.inf,
    )


def level_from_sigma(sigma: float, p: NoiseScheduleParams) -> NoiseLevel:
    """Noise level with ``sigma`` taken as exact and ``t`` obtained by inversion."""
    sigma = float(sigma)
    if not sigma > 0.0:
        raise ValueError("sigma must be positive")
    alpha = 1.0 / math.sqrt(1.0 + sigma * sigma)
    return NoiseLevel(
        t=float(t_of_sigma(sigma, p)),
        sigma=sigma,
        s=alpha,
        alpha=alpha,
        sigma_vp=sigma * alpha,
        lam=-math.log(sigma),
    )


def perturb(x0, t, noise, p: NoiseScheduleParams):
    """Draw ``x_t`` from the forward kernel given caller-supplied standard-normal ``noise``."""
    x0 = np.asarray(x0, dtype=np.float64)
    noise = np.asarray(noise, dtype=np.float64)
    if x0.shape != noise.shape:
        raise ValueError(f"shape mismatch: x0 {x0.shape} vs noise {noise.shape}")
    lv = noise_level(t, p)
    return lv.alpha * x0 + lv.sigma_vp * noise


@dataclass(frozen=True)
class PreconditionCoeffs:
    c_skip: float
    c_in: float
    c_out: float
    c_noise: float


def precondition(sigma: float, p: NoiseScheduleParams | None = None) -> PreconditionCoeffs:
    """Network-input preconditioning for the VP configuration.

    ``c_noise`` is the time ``t`` at which the process reaches ``sigma``.
    """
    if not sigma >= 0.0:
        raise ValueError(f"sigma must be non-negative, got {sigma!r}")
    p = p or NoiseScheduleParams()
    return PreconditionCoeffs(
        c_skip=1.0,
        c_in=1.0 / math.sqrt(1.0 + sigma * sigma),
        c_out=-float(sigma),
        c_noise=float(t_of_sigma(sigma, p)),
    )
