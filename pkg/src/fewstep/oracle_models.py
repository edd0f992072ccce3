"""Denoisers with analytic ground truth.

Two families stand in for a trained network:

* Gaussian mixtures in R^d. The perturbed marginal stays a Gaussian mixture, so
  its score and posterior mean are available in closed form.
* Stationary Gaussian fields on an n x n torus. The posterior mean is a per-bin
  Wiener gain in the Fourier domain, which splits cleanly into a low-band
  "backbone" and a high-band "skip" branch.

Models take batched input: vectors of shape ``(..., d)`` or grids ``(..., n, n)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping, Optional

import numpy as np
from scipy.linalg import solve_triangular
from scipy.special import logsumexp

from .errors import OODError
from .vp_process import (
    NoiseLevel,
    NoiseScheduleParams,
    beta_of_t,
    lambda_of_t,
    noise_level,
    t_of_lambda,
)

__all__ = [
    "DenoiserModel",
    "GaussianMixture",
    "GMMModel",
    "ConditionalGMMModel",
    "GridFieldModel",
    "CFGModel",
    "gmm_marginal_score",
    "gmm_log_marginal",
    "gmm_denoiser",
    "cfg_denoiser",
    "pf_ode_field",
    "reference_solve",
    "grid_wiener_denoiser",
    "gaussian_flow_closed_form",
]


class DenoiserModel:
    """Posterior-mean predictor ``D(x; level, condition)``.

    Subclasses set ``event_shape`` and implement :meth:`denoise`. Analytic
    models also implement :meth:`score` and set ``has_score``.
    """

    event_shape: tuple[int, ...] = ()
    has_score = False
    model_id = "model"

    @property
    def dimension(self) -> int:
        return int(np.prod(self.event_shape))

    def denoise(self, x, level: NoiseLevel, condition=None) -> np.ndarray:
        raise NotImplementedError

    def score(self, x, level: NoiseLevel, condition=None) -> np.ndarray:
        raise NotImplementedError(f"{type(self).__name__} has no analytic score")

    def sample_data(self, n: int, rng: np.random.Generator, condition=None) -> np.ndarray:
        raise NotImplementedError


# -- Gaussian mixtures ---------------------------------------------------------


@dataclass(frozen=True)
class GaussianMixture:
    weights: np.ndarray
    means: np.ndarray
    covariances: np.ndarray

    def __post_init__(self):
        w = np.array(self.weights, dtype=np.float64)
        mu = np.array(self.means, dtype=np.float64)
        cov = np.array(self.covariances, dtype=np.float64)
        if mu.ndim != 2 or cov.ndim != 3 or w.ndim != 1:
            raise ValueError("expected weights (K,), means (K,d), covariances (K,d,d)")
        k, d = mu.shape
        if w.shape != (k,) or cov.shape != (k, d, d):
            raise ValueError("inconsistent mixture shapes")
        if np.any(w < 0) or abs(w.sum() - 1.0) > 1e-12:
            raise ValueError("weights must be non-negative and sum to 1")
        if not np.allclose(cov, np.swapaxes(cov, 1, 2), rtol=0, atol=1e-12):
            raise ValueError("covariances must be symmetric")
        np.linalg.cholesky(cov)  # raises LinAlgError if not SPD
        for name, val in (("weights", w), ("means", mu), ("covariances", cov)):
            val.setflags(write=False)
            object.__setattr__(self, name, val)

    @property
    def n_components(self) -> int:
        return self.means.shape[0]

    @property
    def dim(self) -> int:
        return self.means.shape[1]

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        comp = rng.choice(self.n_components, size=n, p=self.weights)
        z = rng.standard_normal((n, self.dim))
        chol = np.linalg.cholesky(self.covariances)
        return self.means[comp] + np.einsum("nij,nj->ni", chol[comp], z)

    def to_dict(self):
        return {
            "weights": self.weights.tolist(),
            "means": self.means.tolist(),
            "covariances": self.covariances.tolist(),
        }

    @classmethod
    def from_dict(cls, d):
        return cls(np.asarray(d["weights"]), np.asarray(d["means"]), np.asarray(d["covariances"]))


def _marginal_terms(x, level, m):
    """Per-component log densities and precision-weighted residuals."""
    x = np.asarray(x, dtype=np.float64)
    lead = x.shape[:-1]
    xf = x.reshape(-1, m.dim)
    d = m.dim
    a, sv = level.alpha, level.sigma_vp
    covs = a * a * m.covariances + sv * sv * np.eye(d)
    chol = np.linalg.cholesky(covs)
    resid = xf[:, None, :] - a * m.means[None, :, :]  # (B,K,d)
    logp = np.empty((xf.shape[0], m.n_components))
    prec_resid = np.empty_like(resid)
    for k in range(m.n_components):
        y = solve_triangular(chol[k], resid[:, k, :].T, lower=True)  # L^{-1} r
        logdet = 2.0 * np.log(np.diag(chol[k])).sum()
        logp[:, k] = -0.5 * (y * y).sum(0) - 0.5 * logdet - 0.5 * d * math.log(2 * math.pi)
        prec_resid[:, k, :] = solve_triangular(chol[k], y, lower=True, trans="T").T  # C^{-1} r
    with np.errstate(divide="ignore"):
        logw = np.log(m.weights)
    return lead, xf, logp + logw, prec_resid


def gmm_log_marginal(x, level: NoiseLevel, m: GaussianMixture) -> np.ndarray:
    lead, _, logjoint, _ = _marginal_terms(x, level, m)
    return logsumexp(logjoint, axis=1).reshape(lead)


def _responsibilities(logjoint):
    return np.exp(logjoint - logsumexp(logjoint, axis=1, keepdims=True))


def gmm_marginal_score(x, level: NoiseLevel, m: GaussianMixture) -> np.ndarray:
    """Gradient of the log density of the perturbed mixture at ``level``."""
    lead, _, logjoint, prec_resid = _marginal_terms(x, level, m)
    r = _responsibilities(logjoint)
    return -np.einsum("bk,bkd->bd", r, prec_resid).reshape(*lead, m.dim)


def gmm_denoiser(x, level: NoiseLevel, m: GaussianMixture) -> np.ndarray:
    """Posterior mean ``E[x0 | x_t = x]``, computed component-wise (not via Tweedie)."""
    lead, _, logjoint, prec_resid = _marginal_terms(x, level, m)
    r = _responsibilities(logjoint)
    # E[x0 | x_t, k] = mu_k + alpha Sigma_k C_k^{-1} (x - alpha mu_k)
    cond_means = m.means[None] + level.alpha * np.einsum("kij,bkj->bki", m.covariances, prec_resid)
    return np.einsum("bk,bkd->bd", r, cond_means).reshape(*lead, m.dim)


class GMMModel(DenoiserModel):
    has_score = True

    def __init__(self, mixture: GaussianMixture, model_id: str = "gmm"):
        self.mixture = mixture
        self.event_shape = (mixture.dim,)
        self.model_id = model_id

    def denoise(self, x, level, condition=None):
        return gmm_denoiser(x, level, self.mixture)

    def score(self, x, level, condition=None):
        return gmm_marginal_score(x, level, self.mixture)

    def sample_data(self, n, rng, condition=None):
        return self.mixture.sample(n, rng)


class ConditionalGMMModel(DenoiserModel):
    """Label-conditional mixtures; ``condition=None`` gives their even mixture."""

    has_score = True

    def __init__(self, mixtures: Mapping[int, GaussianMixture], model_id: str = "cond_gmm"):
        if len(mixtures) < 1:
            raise ValueError("need at least one conditional mixture")
        dims = {m.dim for m in mixtures.values()}
        if len(dims) != 1:
            raise ValueError("conditional mixtures must share dimension")
        self.mixtures = {int(k): v for k, v in mixtures.items()}
        self.event_shape = (dims.pop(),)
        self.model_id = model_id
        n = len(self.mixtures)
        ms = list(self.mixtures.values())
        self.unconditional = GaussianMixture(
            np.concatenate([m.weights / n for m in ms]),
            np.concatenate([m.means for m in ms]),
            np.concatenate([m.covariances for m in ms]),
        )

    def _select(self, condition):
        if condition is None:
            return self.unconditional
        try:
            return self.mixtures[int(condition)]
        except KeyError:
            raise ValueError(f"unknown condition {condition!r}") from None

    def denoise(self, x, level, condition=None):
        return gmm_denoiser(x, level, self._select(condition))

    def score(self, x, level, condition=None):
        return gmm_marginal_score(x, level, self._select(condition))

    def sample_data(self, n, rng, condition=None):
        return self._select(condition).sample(n, rng)


# -- classifier-free guidance -------------------------------------------------


def cfg_denoiser(x, level, cond_model, uncond_model, w, condition=None):
    """Guided prediction ``D_u + w (D_c - D_u)``; ``w`` of 0 or 1 returns a branch verbatim."""
    if cond_model.event_shape != uncond_model.event_shape:
        raise ValueError("conditional and unconditional models differ in dimension")
    if w == 1.0:
        return cond_model.denoise(x, level, condition)
    d_u = uncond_model.denoise(x, level, None)
    if w == 0.0:
        return d_u
    d_c = cond_model.denoise(x, level, condition)
    return d_u + w * (d_c - d_u)


class CFGModel(DenoiserModel):
    """Guided view of a conditional model: the unconditional branch is ``condition=None``."""

    def __init__(self, model: DenoiserModel, w: float):
        if w < 0:
            raise ValueError("guidance scale must be non-negative")
        self.base = model
        self.w = float(w)
        self.event_shape = model.event_shape
        self.model_id = f"{model.model_id}+cfg{self.w:g}"

    def denoise(self, x, level, condition=None):
        return cfg_denoiser(x, level, self.base, self.base, self.w, condition)

    # Decomposable bases stay decomposable: features mix affinely like outputs.
    @property
    def features(self):
        if not hasattr(self.base, "features"):
            raise AttributeError("features")
        return self._guided_features

    @property
    def combine(self):
        if not hasattr(self.base, "combine"):
            raise AttributeError("combine")
        return self.base.combine

    def _guided_features(self, x, level, condition=None):
        if self.w == 1.0:
            return self.base.features(x, level, condition)
        bu, su = self.base.features(x, level, None)
        if self.w == 0.0:
            return bu, su
        bc, sc = self.base.features(x, level, condition)
        return bu + self.w * (bc - bu), su + self.w * (sc - su)


# -- probability-flow ODE -----------------------------------------------------


def _score_of(model, x, level, condition):
    if model.has_score:
        return model.score(x, level, condition)
    d = model.denoise(x, level, condition)
    return (level.alpha * d - x) / (level.sigma_vp**2)


def pf_ode_field(x, t, model: DenoiserModel, p: NoiseScheduleParams, condition=None, level=None):
    """``dx/dt = f(t) x - 0.5 g(t)^2 score`` with ``f = -beta/2``, ``g^2 = beta``."""
    if not t > 0.0:
        raise ValueError("the probability-flow field is singular at t <= 0")
    level = level or noise_level(t, p)
    x = np.asarray(x, dtype=np.float64)
    beta = beta_of_t(t, p)
    return -0.5 * beta * x - 0.5 * beta * _score_of(model, x, level, condition)


def _field_lambda(x, lam, model, p, condition, t=None):
    t = float(np.clip(t_of_lambda(lam, p), 0.0, 1.0)) if t is None else t
    lv = noise_level(t, p)
    dt_dlam = -2.0 * lv.sigma_vp**2 / beta_of_t(t, p)
    return pf_ode_field(x, t, model, p, condition, level=lv) * dt_dlam


def reference_solve(
    x_T,
    model: DenoiserModel,
    p: NoiseScheduleParams,
    n_steps: int = 2000,
    t_from: Optional[float] = None,
    t_to: Optional[float] = None,
    condition=None,
) -> np.ndarray:
    """Classical RK4 on a uniform log-SNR grid from ``t_from`` to ``t_to``."""
    if int(n_steps) != n_steps or n_steps < 1:
        raise ValueError("n_steps must be a positive integer")
    t_from = p.t_max if t_from is None else float(t_from)
    t_to = p.t_min if t_to is None else float(t_to)
    x = np.array(x_T, dtype=np.float64)
    if t_from == t_to:
        return x
    lam0, lam1 = lambda_of_t(t_from, p), lambda_of_t(t_to, p)
    lams = np.linspace(lam0, lam1, int(n_steps) + 1)
    h = (lam1 - lam0) / n_steps
    f = lambda y, lam, t=None: _field_lambda(y, lam, model, p, condition, t)
    for i in range(int(n_steps)):
        la = lams[i]
        ta = t_from if i == 0 else None
        tb = t_to if i == n_steps - 1 else None
        k1 = f(x, la, ta)
        k2 = f(x + 0.5 * h * k1, la + 0.5 * h)
        k3 = f(x + 0.5 * h * k2, la + 0.5 * h)
        k4 = f(x + h * k3, lams[i + 1], tb)
        x = x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        if not np.all(np.isfinite(x)):
            raise OODError(f"non-finite state in reference solve at step {i}")
    return x


def gaussian_flow_closed_form(x_T, mean, cov, t_from, t_to, p):
    """Exact flow map of the ODE for single-Gaussian data ``N(mean, cov)``."""
    evals, evecs = np.linalg.eigh(np.asarray(cov, dtype=np.float64))
    a, b = noise_level(t_from, p), noise_level(t_to, p)
    var_a = a.alpha**2 * evals + a.sigma_vp**2
    var_b = b.alpha**2 * evals + b.sigma_vp**2
    gain = (evecs * np.sqrt(var_b / var_a)) @ evecs.T
    mean = np.asarray(mean, dtype=np.float64)
    return b.alpha * mean + (np.asarray(x_T) - a.alpha * mean) @ gain.T


# -- stationary Gaussian field on a grid --------------------------------------


def _radius_bins(n):
    k = np.fft.fftfreq(n) * n
    return np.hypot(k[:, None], k[None, :])


class GridFieldModel(DenoiserModel):
    """Stationary Gaussian field whose posterior mean splits into two bands.

    ``power_spectrum`` is the per-bin variance in unitary-FFT units (white noise
    of unit variance has spectrum 1). The default is
    ``1 / (1 + (r / corner)^2)^2`` in integer-bin radius ``r``, normalized to
    unit pixel variance. ``split_radius`` is in bins; the backbone band is
    ``r <= split_radius``.
    """

    has_score = True

    def __init__(self, grid_size=32, power_spectrum=None, split_radius=None, corner=2.0,
                 model_id="grid_field"):
        n = int(grid_size)
        if n < 2 or n & (n - 1):
            raise ValueError("grid_size must be a power of two")
        self.grid_size = n
        self.event_shape = (n, n)
        self.model_id = model_id
        r = _radius_bins(n)
        if power_spectrum is None:
            ps = 1.0 / (1.0 + (r / corner) ** 2) ** 2
            ps = ps / ps.mean()
        else:
            ps = np.array(power_spectrum, dtype=np.float64)
            if ps.shape != (n, n):
                raise ValueError("power_spectrum must be n x n")
        if np.any(ps < 0) or not np.all(np.isfinite(ps)):
            raise ValueError("power_spectrum must be non-negative and finite")
        self.power_spectrum = ps
        self.corner = float(corner)
        self.split_radius = float(n / 8 if split_radius is None else split_radius)
        self.backbone_mask = r <= self.split_radius
        self.skip_mask = ~self.backbone_mask

    def _check(self, x):
        x = np.asarray(x, dtype=np.float64)
        if x.shape[-2:] != self.event_shape:
            raise ValueError(f"expected trailing shape {self.event_shape}, got {x.shape}")
        return x

    def gain(self, level):
        a, sv = level.alpha, level.sigma_vp
        P = self.power_spectrum
        return a * P / (a * a * P + sv * sv)

    def features(self, x, level, condition=None):
        """(backbone, skip) spatial features; their sum is the posterior mean."""
        spec = np.fft.fft2(self._check(x)) * self.gain(level)
        backbone = np.fft.ifft2(np.where(self.backbone_mask, spec, 0.0)).real
        skip = np.fft.ifft2(np.where(self.skip_mask, spec, 0.0)).real
        return backbone, skip

    @staticmethod
    def combine(backbone, skip):
        return backbone + skip

    def denoise(self, x, level, condition=None):
        spec = np.fft.fft2(self._check(x)) * self.gain(level)
        return np.fft.ifft2(spec).real

    def score(self, x, level, condition=None):
        a, sv = level.alpha, level.sigma_vp
        var = a * a * self.power_spectrum + sv * sv
        return -np.fft.ifft2(np.fft.fft2(self._check(x)) / var).real

    def sample_data(self, n, rng, condition=None):
        white = rng.standard_normal((n, *self.event_shape))
        return np.fft.ifft2(np.fft.fft2(white) * np.sqrt(self.power_spectrum)).real

    def to_dict(self):
        return {"grid_size": self.grid_size, "corner": self.corner, "split_radius": self.split_radius}


def grid_wiener_denoiser(x, level, gfm: GridFieldModel):
    """Returns ``(output, backbone_feature, skip_feature)``."""
    backbone, skip = gfm.features(x, level)
    return gfm.combine(backbone, skip), backbone, skip
