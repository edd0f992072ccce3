"""Discretization schedules for the sampling ODE.

Every constructor returns an immutable :class:`TimeGrid` whose nodes run from
noisiest (index 0) to cleanest, with all noise-level quantities cached.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from types import MappingProxyType
from typing import Mapping

import numpy as np

from .vp_process import (
    NoiseLevel,
    NoiseScheduleParams,
    lambda_of_t,
    level_from_sigma,
    noise_level,
    t_of_lambda,
    t_of_sigma,
)

__all__ = [
    "ScheduleKind",
    "TimeGrid",
    "uniform_sigma_grid",
    "karras_grid",
    "improved_grid",
    "custom_stop_grid",
    "sigma_stop",
    "log_snr_grid",
    "build_grid",
]


class ScheduleKind(str, enum.Enum):
    UNIFORM_SIGMA = "uniform_sigma"
    KARRAS = "karras"
    IMPROVED = "improved"
    CUSTOM_STOP = "custom_stop"
    LOG_SNR = "log_snr"


@dataclass(frozen=True)
class TimeGrid:
    nodes: tuple[NoiseLevel, ...]
    schedule_kind: ScheduleKind
    params_used: Mapping[str, float] = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "nodes", tuple(self.nodes))
        object.__setattr__(self, "params_used", MappingProxyType(dict(self.params_used)))
        sig = self.sigmas
        if len(sig) < 2:
            raise ValueError("a grid needs at least two nodes")
        if not np.all(np.diff(sig) < 0.0):
            raise ValueError("grid must be strictly decreasing in sigma")

    def __len__(self):
        return len(self.nodes)

    def __getitem__(self, i) -> NoiseLevel:
        return self.nodes[i]

    @property
    def ts(self) -> np.ndarray:
        return np.array([n.t for n in self.nodes])

    @property
    def sigmas(self) -> np.ndarray:
        return np.array([n.sigma for n in self.nodes])

    @property
    def lambdas(self) -> np.ndarray:
        return np.array([n.lam for n in self.nodes])

    def table(self) -> np.ndarray:
        """Rows of (index, t, sigma, lambda, alpha, sigma_vp)."""
        return np.array(
            [(i, n.t, n.sigma, n.lam, n.alpha, n.sigma_vp) for i, n in enumerate(self.nodes)]
        )


def _check_n(N):
    if int(N) != N or N < 2:
        raise ValueError(f"N must be an integer >= 2, got {N!r}")
    return int(N)


def _power_interp(start, end, frac, p):
    return (start ** (1.0 / p) + frac * (end ** (1.0 / p) - start ** (1.0 / p))) ** p


def uniform_sigma_grid(N: int, sigma_max: float, sched: NoiseScheduleParams | None = None) -> TimeGrid:
    """Evenly spaced sigma from ``sigma_max`` down; the zero endpoint is clamped to ``sigma_min``."""
    N = _check_n(N)
    sched = sched or NoiseScheduleParams()
    if not sigma_max > sched.sigma_min:
        raise ValueError("sigma_max must exceed sigma_min")
    sig = np.arange(N - 1, -1, -1) / (N - 1) * sigma_max
    sig[-1] = sched.sigma_min
    if N > 2 and sig[-2] <= sched.sigma_min:
        raise ValueError("grid too fine: interior node falls below sigma_min")
    nodes = [level_from_sigma(s, sched) for s in sig]
    return TimeGrid(
        nodes,
        ScheduleKind.UNIFORM_SIGMA,
        {"N": N, "sigma_max": float(sigma_max), "sigma_min": sched.sigma_min, **sched.to_dict()},
    )


def karras_grid(
    N: int,
    p: float,
    sigma_min: float,
    sigma_max: float,
    sched: NoiseScheduleParams | None = None,
    literal: bool = False,
) -> TimeGrid:
    """Power-law interpolation of ``sigma**(1/p)`` between ``sigma_max`` and ``sigma_min``.

    ``literal=True`` evaluates the printed variant that starts from ``sigma_min``
    and moves away from it; it only yields a valid grid for ``N`` and ``p``
    where the base stays positive, and exists for comparison only.
    """
    N = _check_n(N)
    if not p > 0:
        raise ValueError("p must be positive")
    if not 0.0 < sigma_min < sigma_max:
        raise ValueError("need 0 < sigma_min < sigma_max")
    sched = sched or NoiseScheduleParams()
    frac = np.arange(N) / (N - 1)
    if literal:
        base = sigma_min ** (1.0 / p) + frac * (sigma_min ** (1.0 / p) - sigma_max ** (1.0 / p))
        if np.any(base <= 0.0):
            raise ValueError("literal reading yields non-positive sigma for these parameters")
        sig = base**p
    else:
        sig = _power_interp(sigma_max, sigma_min, frac, p)
        sig[0], sig[-1] = sigma_max, sigma_min
    nodes = [level_from_sigma(s, sched) for s in sig]
    return TimeGrid(
        nodes,
        ScheduleKind.KARRAS,
        {"N": N, "p": float(p), "sigma_min": float(sigma_min), "sigma_max": float(sigma_max),
         "literal": bool(literal), **sched.to_dict()},
    )


def improved_grid(
    N: int, p: float, t_min: float, t_max: float, sched: NoiseScheduleParams | None = None
) -> TimeGrid:
    """Power-law interpolation in time rather than in sigma."""
    N = _check_n(N)
    if not p > 0:
        raise ValueError("p must be positive")
    if not 0.0 < t_min < t_max <= 1.0:
        raise ValueError("need 0 < t_min < t_max <= 1")
    sched = sched or NoiseScheduleParams()
    ts = _power_interp(t_max, t_min, np.arange(N) / (N - 1), p)
    ts[0], ts[-1] = t_max, t_min
    nodes = [noise_level(t, sched) for t in ts]
    return TimeGrid(
        nodes,
        ScheduleKind.IMPROVED,
        {"N": N, "p": float(p), "t_min": float(t_min), "t_max": float(t_max),
         "beta_min": sched.beta_min, "beta_max": sched.beta_max},
    )


def sigma_stop(N: int, p2: float, stop: int, sigma_min: float, sigma_max: float) -> float:
    """Noise level at which the custom schedule's time interpolation is anchored."""
    return float(_power_interp(sigma_max, sigma_min, stop / (N + stop + 1), p2))


def custom_stop_grid(
    N: int, p1: float, p2: float, stop: int, sched: NoiseScheduleParams | None = None
) -> TimeGrid:
    """Time grid anchored at ``t(sigma_stop)``; node ``i`` uses fraction ``i/N``.

    Only indices ``0..N-1`` are produced, so the final node sits strictly above
    ``t(sigma_stop)``.
    """
    N = _check_n(N)
    if not (p1 > 0 and p2 > 0):
        raise ValueError("p1 and p2 must be positive")
    if int(stop) != stop or stop < 0:
        raise ValueError("stop must be a non-negative integer")
    sched = sched or NoiseScheduleParams()
    s_stop = sigma_stop(N, p2, stop, sched.sigma_min, sched.sigma_max)
    if stop == 0 or s_stop >= sched.sigma_max:
        raise ValueError("degenerate stop: sigma_stop equals sigma_max")
    if s_stop <= sched.sigma_min:
        raise ValueError("degenerate stop: sigma_stop <= sigma_min")
    t_stop = float(t_of_sigma(s_stop, sched))
    ts = _power_interp(sched.t_max, t_stop, np.arange(N) / N, p1)
    ts[0] = sched.t_max
    nodes = [noise_level(t, sched) for t in ts]
    return TimeGrid(
        nodes,
        ScheduleKind.CUSTOM_STOP,
        {"N": N, "p1": float(p1), "p2": float(p2), "stop": int(stop), "sigma_stop": s_stop,
         "t_stop": t_stop, "sigma_min": sched.sigma_min, "sigma_max": sched.sigma_max,
         **sched.to_dict()},
    )


def log_snr_grid(N: int, sched: NoiseScheduleParams | None = None, t_max=None, t_min=None) -> TimeGrid:
    """Nodes evenly spaced in log-SNR; used for convergence studies."""
    N = _check_n(N)
    sched = sched or NoiseScheduleParams()
    t_max = sched.t_max if t_max is None else float(t_max)
    t_min = sched.t_min if t_min is None else float(t_min)
    lams = np.linspace(lambda_of_t(t_max, sched), lambda_of_t(t_min, sched), N)
    ts = np.clip(t_of_lambda(lams, sched), 0.0, 1.0)
    ts[0], ts[-1] = t_max, t_min
    nodes = [noise_level(t, sched) for t in ts]
    return TimeGrid(
        nodes,
        ScheduleKind.LOG_SNR,
        {"N": N, "t_min": t_min, "t_max": t_max, "beta_min": sched.beta_min,
         "beta_max": sched.beta_max},
    )


def build_grid(kind: str, sched: NoiseScheduleParams | None = None, **kw) -> TimeGrid:
    """Dispatch on schedule kind; missing parameters fall back to ``sched`` ranges."""
    sched = sched or NoiseScheduleParams()
    kind = ScheduleKind(kind)
    n = kw.pop("n")
    if kind is ScheduleKind.UNIFORM_SIGMA:
        grid = uniform_sigma_grid(n, kw.pop("sigma_max", sched.sigma_max), sched)
    elif kind is ScheduleKind.KARRAS:
        grid = karras_grid(
            n,
            kw.pop("p", 7.0),
            kw.pop("sigma_min", sched.sigma_min),
            kw.pop("sigma_max", sched.sigma_max),
            sched,
            literal=kw.pop("literal", False),
        )
    elif kind is ScheduleKind.LOG_SNR:
        grid = log_snr_grid(n, sched, kw.pop("t_max", None), kw.pop("t_min", None))
    elif kind is ScheduleKind.IMPROVED:
        grid = improved_grid(
            n, kw.pop("p", 1.2), kw.pop("t_min", sched.t_min), kw.pop("t_max", sched.t_max), sched
        )
    else:
        grid = custom_stop_grid(n, kw.pop("p1", 7.0), kw.pop("p2", 1.2), kw.pop("stop", 3), sched)
    if kw:
        raise ValueError(f"unexpected parameters for {kind.value}: {sorted(kw)}")
    return grid
