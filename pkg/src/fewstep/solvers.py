"""Exponential-integrator steps and the grid sampling driver.

All steps work in VP variables: the state ``x`` satisfies
``x ~ alpha x0 + sigma_vp eps`` and step sizes are log-SNR differences
``h = lambda_to - lambda_from``.
"""

from __future__ import annotations

import enum
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from .errors import OODError
from .oracle_models import CFGModel, DenoiserModel, pf_ode_field
from .time_grid import TimeGrid
from .vp_process import NoiseLevel, NoiseScheduleParams

__all__ = [
    "SolverKind",
    "SolverState",
    "SamplerConfig",
    "SampleSet",
    "dpmpp_1s_step",
    "dpmpp_2m_step",
    "euler_step",
    "step",
    "noise_for_samples",
    "sample",
    "CHUNK_SIZE",
]

# Fixed batch size for evaluation: results never depend on the thread count.
CHUNK_SIZE = 512


class SolverKind(str, enum.Enum):
    EULER = "euler"
    DPMPP_1S = "dpmpp_1s"
    DPMPP_2M = "dpmpp_2m"


@dataclass(frozen=True)
class SolverState:
    x: np.ndarray
    node_index: int = 0
    prev_denoised: Optional[np.ndarray] = None
    prev_level: Optional[NoiseLevel] = None


def _finite_or_raise(x, check):
    if check and not np.all(np.isfinite(x)):
        raise OODError("solver produced a non-finite state")
    return x


def _log_snr_step(frm, to):
    h = to.lam - frm.lam
    if not h >= 0.0:
        raise ValueError(f"step must move toward lower noise (h = {h:.3g})")
    return h


def _exp_update(x, frm, to, h, d):
    # x_to = (sigma_to / sigma_from) x - alpha_to (e^{-h} - 1) D
    return (to.sigma_vp / frm.sigma_vp) * x - to.alpha * math.expm1(-h) * d


def dpmpp_1s_step(state: SolverState, frm: NoiseLevel, to: NoiseLevel, model: DenoiserModel,
                  condition=None, literal=False, check_finite=True, denoised=None) -> SolverState:
    """First-order data-prediction update.

    ``literal=True`` uses ``x_to = (sigma_to/sigma_from) x - sigma_to e^h D`` as
    printed in the source formula, for comparison only.
    """
    h = _log_snr_step(frm, to)
    if h == 0.0:
        return replace(state, node_index=state.node_index + 1)
    d = model.denoise(state.x, frm, condition) if denoised is None else denoised
    if literal:
        x = (to.sigma_vp / frm.sigma_vp) * state.x - to.sigma_vp * math.exp(h) * d
    else:
        x = _exp_update(state.x, frm, to, h, d)
    return SolverState(_finite_or_raise(x, check_finite), state.node_index + 1)


def dpmpp_2m_step(state: SolverState, frm: NoiseLevel, to: NoiseLevel, model: DenoiserModel,
                  condition=None, check_finite=True, denoised=None) -> SolverState:
    """Second-order multistep update; without a cache it bootstraps with the 1s update."""
    h = _log_snr_step(frm, to)
    d = model.denoise(state.x, frm, condition) if denoised is None else denoised
    if h == 0.0:
        return SolverState(state.x, state.node_index + 1, d, frm)
    if state.prev_denoised is None:
        d_i = d
    else:
        h_prev = frm.lam - state.prev_level.lam
        if not h_prev > 0.0:
            raise ValueError("cached level must be noisier than the current one")
        r = h_prev / h
        d_i = (1.0 + 0.5 / r) * d - (0.5 / r) * state.prev_denoised
    x = _exp_update(state.x, frm, to, h, d_i)
    return SolverState(_finite_or_raise(x, check_finite), state.node_index + 1, d, frm)


def euler_step(state: SolverState, frm: NoiseLevel, to: NoiseLevel, model: DenoiserModel,
               sched: NoiseScheduleParams | None = None, condition=None,
               check_finite=True) -> SolverState:
    """Explicit Euler in ``t`` on the probability-flow field."""
    dt = to.t - frm.t
    if dt == 0.0:
        return replace(state, node_index=state.node_index + 1)
    sched = sched or NoiseScheduleParams()
    x = state.x + dt * pf_ode_field(state.x, frm.t, model, sched, condition, level=frm)
    return SolverState(_finite_or_raise(x, check_finite), state.node_index + 1)


def step(kind, state, frm, to, model, sched=None, condition=None, check_finite=True):
    kind = SolverKind(kind)
    if kind is SolverKind.EULER:
        return euler_step(state, frm, to, model, sched, condition, check_finite)
    if kind is SolverKind.DPMPP_1S:
        return dpmpp_1s_step(state, frm, to, model, condition, check_finite=check_finite)
    return dpmpp_2m_step(state, frm, to, model, condition, check_finite=check_finite)


# -- driver --------------------------------------------------------------------


@dataclass(frozen=True)
class SamplerConfig:
    grid: TimeGrid
    solver_kind: SolverKind = SolverKind.DPMPP_2M
    guidance_scale: float = 1.0
    freeu: Optional[object] = None  # FreeUParams
    seed: int = 0
    sched: NoiseScheduleParams = field(default_factory=NoiseScheduleParams)

    def __post_init__(self):
        object.__setattr__(self, "solver_kind", SolverKind(self.solver_kind))
        if not self.guidance_scale >= 0.0:
            raise ValueError("guidance scale must be >= 0")
        if self.freeu is not None and not 0 <= self.freeu.t_aug < len(self.grid):
            raise ValueError(f"t_aug={self.freeu.t_aug} is not a valid grid index")


@dataclass
class SampleSet:
    vectors: np.ndarray
    meta: dict = field(default_factory=dict)
    trajectories: Optional[np.ndarray] = None  # (n, n_nodes, *event_shape)
    ood_indices: tuple[int, ...] = ()
    sample_ids: Optional[np.ndarray] = None

    def __post_init__(self):
        self.vectors = np.asarray(self.vectors, dtype=np.float64)
        if self.sample_ids is None:
            self.sample_ids = np.arange(len(self.vectors))
        if self.vectors.ndim < 2 and self.vectors.size:
            raise ValueError("vectors must be (n, ...)")
        if not np.all(np.isfinite(self.vectors)):
            raise ValueError("sample sets hold finite entries only")

    def __len__(self):
        return len(self.vectors)

    @property
    def flat(self) -> np.ndarray:
        return self.vectors.reshape(len(self.vectors), -1)


def noise_for_samples(seed: int, indices, shape) -> np.ndarray:
    """Per-sample terminal noise from a Philox stream keyed by ``(seed, index)``."""
    out = np.empty((len(indices), *shape))
    for j, i in enumerate(indices):
        ss = np.random.SeedSequence(int(seed), spawn_key=(int(i),))
        out[j] = np.random.Generator(np.random.Philox(ss)).standard_normal(shape)
    return out


def _run_chunk(config, model, decorated, condition, x, record):
    grid = config.grid
    kind = config.solver_kind
    n = len(x)
    alive = np.ones(n, dtype=bool)
    traj = [x.copy()] if record else None
    state = SolverState(x)
    axes = tuple(range(1, x.ndim))
    for i in range(len(grid) - 1):
        use = decorated if (decorated is not None and i >= config.freeu.t_aug) else model
        with np.errstate(all="ignore"):
            state = step(kind, state, grid[i], grid[i + 1], use, config.sched, condition,
                         check_finite=False)
        bad = ~np.all(np.isfinite(state.x), axis=axes)
        if bad.any():
            alive &= ~bad
            # Park dead rows at zero so they cannot poison later evaluations.
            xs = state.x.copy()
            xs[~alive] = 0.0
            pd = state.prev_denoised
            if pd is not None:
                pd = pd.copy()
                pd[~alive] = 0.0
            state = SolverState(xs, state.node_index, pd, state.prev_level)
        if record:
            traj.append(state.x.copy())
    return state.x, alive, (np.stack(traj, axis=1) if record else None)


def sample(config: SamplerConfig, model: DenoiserModel, condition=None, n_samples: int = 1,
           record_trajectories=False, threads: int = 1) -> SampleSet:
    """Integrate ``n_samples`` terminal draws down the grid.

    The FreeU-decorated model replaces ``model`` from node ``freeu.t_aug`` on.
    Guidance wraps the model whenever ``guidance_scale != 1``. Samples whose
    state turns non-finite are dropped and listed in ``ood_indices``.
    """
    from .freeu import decorate

    base = CFGModel(model, config.guidance_scale) if config.guidance_scale != 1.0 else model
    decorated = decorate(base, config.freeu) if config.freeu is not None else None
    shape = model.event_shape
    meta = {
        "seed": config.seed,
        "schedule_kind": config.grid.schedule_kind.value,
        "solver_kind": config.solver_kind.value,
        "model_id": model.model_id,
        "w": config.guidance_scale,
        "freeu": config.freeu is not None,
        "condition": condition,
        "n_nodes": len(config.grid),
    }
    if n_samples == 0:
        meta["n_ood"] = 0
        return SampleSet(np.empty((0, *shape)), meta)

    starts = list(range(0, n_samples, CHUNK_SIZE))
    sv_max = config.grid[0].sigma_vp

    def work(lo):
        idx = range(lo, min(lo + CHUNK_SIZE, n_samples))
        x_T = sv_max * noise_for_samples(config.seed, idx, shape)
        return _run_chunk(config, base, decorated, condition, x_T, record_trajectories)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as ex:
            results = list(ex.map(work, starts))
    else:
        results = [work(lo) for lo in starts]
    xs = np.concatenate([r[0] for r in results])
    alive = np.concatenate([r[1] for r in results])
    traj = np.concatenate([r[2] for r in results]) if record_trajectories else None
    ood = tuple(int(i) for i in np.flatnonzero(~alive))
    meta["n_ood"] = len(ood)
    return SampleSet(xs[alive], meta, traj[alive] if traj is not None else None, ood,
                     np.flatnonzero(alive))
