"""Sample-quality metrics and discretization-error studies."""

from __future__ import annotations

import logging
import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
from sklearn.cluster import KMeans

from .oracle_models import DenoiserModel, reference_solve
from .solvers import SampleSet, SolverKind, SolverState, dpmpp_1s_step, step
from .time_grid import log_snr_grid, uniform_sigma_grid
from .vp_process import NoiseScheduleParams, noise_level, perturb, t_of_lambda

log = logging.getLogger(__name__)

__all__ = [
    "PRDCurve",
    "frechet_gaussian",
    "frechet_from_moments",
    "prd_curve",
    "sliced_w2",
    "local_truncation_rmse",
    "local_error_slope",
    "ConvergenceReport",
    "convergence_order",
]


def _as_matrix(a):
    if isinstance(a, SampleSet):
        a = a.flat
    a = np.asarray(a, dtype=np.float64)
    return a.reshape(len(a), -1) if a.ndim != 2 else a


# -- Frechet distance ------------------------------------------------------------


def _psd_sqrt(m, floor=1e-12):
    w, v = np.linalg.eigh(0.5 * (m + m.T))
    clamped = int(np.sum(w < floor))
    return (v * np.sqrt(np.maximum(w, 0.0))) @ v.T, clamped


def frechet_from_moments(mu_a, cov_a, mu_b, cov_b) -> float:
    mu_a, mu_b = np.atleast_1d(mu_a), np.atleast_1d(mu_b)
    cov_a, cov_b = np.atleast_2d(cov_a), np.atleast_2d(cov_b)
    root_a, na = _psd_sqrt(cov_a)
    # tr (S_a S_b)^{1/2} = tr (S_a^{1/2} S_b S_a^{1/2})^{1/2}
    inner = root_a @ cov_b @ root_a
    w = np.linalg.eigvalsh(0.5 * (inner + inner.T))
    nb = int(np.sum(w < 1e-12))
    if na or nb:
        log.info("frechet: clamped %d + %d near-zero eigenvalues", na, nb)
    tr_cross = np.sqrt(np.maximum(w, 0.0)).sum()
    diff = mu_a - mu_b
    fd = float(diff @ diff + np.trace(cov_a) + np.trace(cov_b) - 2.0 * tr_cross)
    if fd < -1e-8:
        warnings.warn(f"Frechet distance came out negative ({fd:.3g})")
    return max(fd, 0.0)


def frechet_gaussian(a, b) -> float:
    """Frechet distance between Gaussians moment-fitted to two sample sets."""
    a, b = _as_matrix(a), _as_matrix(b)
    if a.shape[1] != b.shape[1]:
        raise ValueError("sample sets differ in dimension")
    d = a.shape[1]
    if len(a) <= d or len(b) <= d:
        raise ValueError("need more samples than dimensions")
    return frechet_from_moments(a.mean(0), np.cov(a, rowvar=False), b.mean(0), np.cov(b, rowvar=False))


# -- PRD -------------------------------------------------------------------------


@dataclass(frozen=True)
class PRDCurve:
    points: np.ndarray  # (m, 2) rows of (recall, precision), recall ascending
    k: int
    num_angles: int

    @property
    def recall(self):
        return self.points[:, 0]

    @property
    def precision(self):
        return self.points[:, 1]


def _envelope(recall, precision):
    order = np.lexsort((-precision, -recall))
    keep, best = [], -np.inf
    for i in order:
        if precision[i] > best:
            keep.append(i)
            best = precision[i]
    pts = np.column_stack([recall[keep], precision[keep]])
    return pts[::-1]


def prd_from_histograms(p, q, num_angles=1001):
    """Precision/recall pairs over slopes ``tan(j pi / (2 (num_angles + 1)))``."""
    j = np.arange(1, num_angles + 1)
    slopes = np.tan(j * (math.pi / 2) / (num_angles + 1))
    precision = np.minimum(slopes[:, None] * p[None, :], q[None, :]).sum(1)
    recall = np.minimum(p[None, :], q[None, :] / slopes[:, None]).sum(1)
    return np.clip(recall, 0, 1), np.clip(precision, 0, 1)


def prd_curve(P, Q, k: int = 20, num_angles: int = 1001, n_init: int = 10, seed: int = 0,
              max_iter: int = 300) -> PRDCurve:
    """PRD of evaluated samples ``Q`` against reference samples ``P``.

    Precision measures how much of ``Q`` is covered by ``P``; recall the converse.
    """
    P, Q = _as_matrix(P), _as_matrix(Q)
    if P.shape[1] != Q.shape[1]:
        raise ValueError("sample sets differ in dimension")
    if len(P) < k or len(Q) < k:
        raise ValueError("need at least k samples in each set")
    data = np.concatenate([P, Q])
    for attempt in range(2):
        km = KMeans(n_clusters=k, n_init=n_init, max_iter=max_iter, random_state=seed + attempt)
        labels = km.fit_predict(data)
        if len(np.unique(labels)) == k:
            break
    else:
        raise RuntimeError("k-means left clusters empty twice")
    p = np.bincount(labels[: len(P)], minlength=k) / len(P)
    q = np.bincount(labels[len(P):], minlength=k) / len(Q)
    recall, precision = prd_from_histograms(p, q, num_angles)
    return PRDCurve(_envelope(recall, precision), k, num_angles)


# -- sliced Wasserstein ----------------------------------------------------------


def _w2_1d(u, v):
    u, v = np.sort(u), np.sort(v)
    if len(u) == len(v):
        return math.sqrt(np.mean((u - v) ** 2))
    m = max(len(u), len(v))
    qs = (np.arange(m) + 0.5) / m

    def quantile(z):  # same as np.quantile's default "linear" rule on sorted input
        return np.interp(qs * (len(z) - 1), np.arange(len(z)), z)

    return math.sqrt(np.mean((quantile(u) - quantile(v)) ** 2))


def sliced_w2(a, b, n_proj: int = 128, seed: int = 0) -> float:
    """Mean over random unit directions of the exact 1-D W2 between projections."""
    a, b = _as_matrix(a), _as_matrix(b)
    if len(a) == 0 or len(b) == 0:
        raise ValueError("sample sets must be non-empty")
    if a.shape[1] != b.shape[1]:
        raise ValueError("sample sets differ in dimension")
    dirs = np.random.default_rng(seed).standard_normal((n_proj, a.shape[1]))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    pa, pb = a @ dirs.T, b @ dirs.T
    return float(np.mean([_w2_1d(pa[:, j], pb[:, j]) for j in range(n_proj)]))


# -- truncation error ----------------------------------------------------------


def local_truncation_rmse(model: DenoiserModel, p: NoiseScheduleParams, N: int = 64, M: int = 256,
                          ref_steps: int = 200, seed: int = 0, sigma_max=None, condition=None,
                          threads: int = 1):
    """One 1s step vs a fine reference over each interval of the uniform-sigma grid.

    Interval ``i`` draws its states from the stream ``(seed, i)``. Returns a list
    of ``(sigma_start, rmse)`` rows, one per interval.
    """
    grid = uniform_sigma_grid(N, p.sigma_max if sigma_max is None else sigma_max, p)

    def interval(i):
        a, b = grid[i], grid[i + 1]
        rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(i,)))
        x0 = model.sample_data(M, rng, condition)
        xa = a.alpha * x0 + a.sigma_vp * rng.standard_normal(x0.shape)
        one = dpmpp_1s_step(SolverState(xa), a, b, model, condition).x
        ref = reference_solve(xa, model, p, ref_steps, t_from=a.t, t_to=b.t, condition=condition)
        return a.sigma, float(np.sqrt(np.mean((one - ref) ** 2)))

    idx = range(len(grid) - 1)
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as ex:
            return list(ex.map(interval, idx))
    return [interval(i) for i in idx]


def local_error_slope(model, p, t_from: float, hs, n_samples: int = 256, seed: int = 0,
                      ref_steps: int = 400, kind=SolverKind.DPMPP_1S):
    """Fit log(one-step error) against log(h) for steps of log-SNR size ``hs`` from ``t_from``."""
    rng = np.random.default_rng(seed)
    a = noise_level(t_from, p)
    x0 = model.sample_data(n_samples, rng)
    xa = perturb(x0, t_from, rng.standard_normal(x0.shape), p)
    errs = []
    for h in hs:
        t_to = float(t_of_lambda(a.lam + h, p))
        b = noise_level(t_to, p)
        one = step(kind, SolverState(xa), a, b, model, p).x
        ref = reference_solve(xa, model, p, ref_steps, t_from=t_from, t_to=t_to)
        errs.append(float(np.sqrt(np.mean((one - ref) ** 2))))
    slope = np.polyfit(np.log(hs), np.log(errs), 1)[0]
    return float(slope), errs


# -- global convergence -------------------------------------------------------


@dataclass(frozen=True)
class ConvergenceReport:
    solver_kind: str
    step_counts: tuple[int, ...]
    errors: tuple[float, ...]
    slope: float
    monotone: bool
    at_floor: bool

    def to_dict(self):
        return {
            "solver_kind": self.solver_kind,
            "step_counts": list(self.step_counts),
            "errors": list(self.errors),
            "slope": self.slope,
            "monotone": self.monotone,
            "at_floor": self.at_floor,
        }


def convergence_order(solver_kind, model: DenoiserModel, step_counts, p=None, n_samples=256,
                      seed=0, ref_steps=2000, t_hi=None, t_lo=None, floor=1e-11,
                      x_T=None) -> ConvergenceReport:
    """Least-squares slope of log endpoint error against log(1/N).

    ``N`` counts solver steps on a log-SNR-uniform grid (``N + 1`` nodes).
    """
    step_counts = tuple(int(n) for n in step_counts)
    if len(step_counts) < 3 or any(b <= a for a, b in zip(step_counts, step_counts[1:])):
        raise ValueError("need at least three strictly increasing step counts")
    p = p or NoiseScheduleParams()
    t_hi = p.t_max if t_hi is None else t_hi
    t_lo = p.t_min if t_lo is None else t_lo
    if x_T is None:
        rng = np.random.default_rng(seed)
        x_T = noise_level(t_hi, p).sigma_vp * rng.standard_normal((n_samples, *model.event_shape))
    ref = reference_solve(x_T, model, p, ref_steps, t_from=t_hi, t_to=t_lo)
    errors = []
    for n in step_counts:
        grid = log_snr_grid(n + 1, p, t_hi, t_lo)
        state = SolverState(np.array(x_T, dtype=np.float64))
        for i in range(n):
            state = step(solver_kind, state, grid[i], grid[i + 1], model, p)
        errors.append(float(np.sqrt(np.mean((state.x - ref) ** 2))))
    errs = np.array(errors)
    at_floor = bool(np.any(errs < floor))
    monotone = bool(np.all(np.diff(errs) < 0))
    if at_floor:
        log.warning("convergence: error floor reached (%s)", errs)
    if not monotone:
        log.warning("convergence: errors not monotone in N (%s)", errs)
    with np.errstate(divide="ignore"):
        slope = float(np.polyfit(np.log(1.0 / np.array(step_counts)), np.log(np.maximum(errs, 1e-300)), 1)[0])
    return ConvergenceReport(SolverKind(solver_kind).value, step_counts, tuple(errors), slope,
                             monotone, at_floor)
