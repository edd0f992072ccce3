"""Experiment configuration and on-disk formats.

Config documents are strict JSON: unknown keys anywhere are rejected. Model
specifications use a ``kind`` discriminator::

    {"kind": "gmm", "weights": [...], "means": [[...]], "covariances": [[[...]]]}
    {"kind": "conditional_gmm", "components": {"0": {<gmm>}, "1": {<gmm>}}}
    {"kind": "grid_field", "grid_size": 32, "corner": 2.0, "split_radius": 4}

CSV outputs start with ``#`` comment lines carrying the effective config as
JSON, then a header row. Floats are written with 17 significant digits.
"""

from __future__ import annotations

import contextlib
import csv
import io
import json
import os
import tempfile
from importlib import resources
from pathlib import Path
from typing import Annotated, Dict, Literal, Optional, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from .freeu import FreeUParams
from .oracle_models import ConditionalGMMModel, GaussianMixture, GMMModel, GridFieldModel
from .solvers import SampleSet
from .time_grid import TimeGrid, build_grid
from .vp_process import NoiseScheduleParams

__all__ = [
    "ExperimentConfig",
    "ScheduleSpec",
    "load_model",
    "model_from_spec",
    "atomic_writer",
    "fmt",
    "write_grid_csv",
    "write_sampleset",
    "read_sampleset",
    "write_trajectories",
    "shipped",
]

SCHEDULE_ALIASES = {"custom": "custom_stop", "uniform": "uniform_sigma"}


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid")


class ProcessSpec(_Strict):
    beta_min: float = 0.1
    beta_max: float = 20.0
    t_min: float = 1e-3
    t_max: float = 1.0

    def params(self) -> NoiseScheduleParams:
        return NoiseScheduleParams(self.beta_min, self.beta_max, self.t_min, self.t_max)


class ScheduleSpec(_Strict):
    kind: str
    n: int
    p: Optional[float] = None
    p1: Optional[float] = None
    p2: Optional[float] = None
    stop: Optional[int] = None
    sigma_min: Optional[float] = None
    sigma_max: Optional[float] = None
    t_min: Optional[float] = None
    t_max: Optional[float] = None
    literal: Optional[bool] = None

    def build(self, sched: NoiseScheduleParams) -> TimeGrid:
        kw = self.model_dump(exclude_none=True)
        kind = SCHEDULE_ALIASES.get(kw.pop("kind"), self.kind)
        return build_grid(kind, sched, **kw)


class GMMSpec(_Strict):
    kind: Literal["gmm"] = "gmm"
    model_id: str = "gmm"
    weights: list[float]
    means: list[list[float]]
    covariances: list[list[list[float]]]


class _ComponentSpec(_Strict):
    weights: list[float]
    means: list[list[float]]
    covariances: list[list[list[float]]]


class ConditionalGMMSpec(_Strict):
    kind: Literal["conditional_gmm"]
    model_id: str = "cond_gmm"
    components: Dict[str, _ComponentSpec]


class GridFieldSpec(_Strict):
    kind: Literal["grid_field"]
    model_id: str = "grid_field"
    grid_size: int = 32
    corner: float = 2.0
    split_radius: Optional[float] = None
    power_spectrum: Optional[list[list[float]]] = None


ModelSpec = Annotated[Union[GMMSpec, ConditionalGMMSpec, GridFieldSpec], Field(discriminator="kind")]


class _ModelDoc(_Strict):
    model: ModelSpec


class FreeUSpec(_Strict):
    b1: float = 1.0
    b2: float = 1.0
    s1: float = 1.0
    s2: float = 1.0
    radius_threshold: float = 0.25
    t_aug: int = 0

    def params(self) -> FreeUParams:
        return FreeUParams(**self.model_dump())


class ExperimentConfig(_Strict):
    schedule: ScheduleSpec
    solver: Literal["euler", "dpmpp_1s", "dpmpp_2m"] = "dpmpp_2m"
    model: Union[ModelSpec, str]
    process: ProcessSpec = ProcessSpec()
    w: float = Field(1.0, ge=0.0)
    condition: Optional[int] = None
    freeu: Optional[FreeUSpec] = None
    n_samples: int = Field(1000, ge=0)
    seed: int = 0
    out: Optional[str] = None
    trajectory_out: Optional[str] = None


def model_from_spec(spec):
    if isinstance(spec, dict):
        spec = _ModelDoc(model=spec).model
    if isinstance(spec, GMMSpec):
        return GMMModel(GaussianMixture(spec.weights, spec.means, spec.covariances), spec.model_id)
    if isinstance(spec, ConditionalGMMSpec):
        mix = {int(k): GaussianMixture(c.weights, c.means, c.covariances)
               for k, c in spec.components.items()}
        return ConditionalGMMModel(mix, spec.model_id)
    return GridFieldModel(spec.grid_size, spec.power_spectrum, spec.split_radius, spec.corner,
                          spec.model_id)


def shipped(name: str) -> Path:
    """Path of a data file shipped with the package."""
    return Path(str(resources.files("fewstep") / "data" / name))


def load_model_doc(path) -> dict:
    with open(path) as fh:
        return json.load(fh)


def load_model(path_or_spec):
    if isinstance(path_or_spec, (str, os.PathLike)):
        p = Path(path_or_spec)
        if not p.exists() and shipped(str(path_or_spec)).exists():
            p = shipped(str(path_or_spec))
        return model_from_spec(load_model_doc(p))
    return model_from_spec(path_or_spec)


# -- writing ---------------------------------------------------------------------


def fmt(x) -> str:
    return format(float(x), ".17g")


@contextlib.contextmanager
def atomic_writer(path):
    """Write to a temp file beside ``path`` and rename on success; remove it on failure."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", dir=path.parent)
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            yield fh
        os.replace(tmp, path)
    except BaseException:
        with contextlib.suppress(FileNotFoundError):
            os.unlink(tmp)
        raise


def _header_lines(kind: str, config: dict) -> str:
    blob = json.dumps(config, sort_keys=True, separators=(",", ":"))
    return f"# fewstep {kind} v1\n# config: {blob}\n"


def write_grid_csv(fh, grid: TimeGrid, config: dict, compare: TimeGrid | None = None):
    fh.write(_header_lines("schedule", config))
    cols = ["index", "t", "sigma", "lambda", "alpha", "sigma_vp"]
    w = csv.writer(fh, lineterminator="\n")
    if compare is None:
        w.writerow(cols)
    else:
        w.writerow(cols + ["cmp_" + c for c in cols[1:]])
    rows = max(len(grid), len(compare) if compare is not None else 0)
    for i in range(rows):
        row = [str(i)]
        for g in (grid, compare) if compare is not None else (grid,):
            if i < len(g):
                n = g[i]
                row += [fmt(n.t), fmt(n.sigma), fmt(n.lam), fmt(n.alpha), fmt(n.sigma_vp)]
            else:
                row += [""] * 5
        w.writerow(row)


def write_sampleset(fh, ss: SampleSet, config: dict):
    fh.write(_header_lines("samples", config))
    meta = dict(ss.meta)
    meta["event_shape"] = list(ss.vectors.shape[1:])
    meta["ood_indices"] = list(ss.ood_indices)
    fh.write("# meta: " + json.dumps(meta, sort_keys=True, separators=(",", ":")) + "\n")
    flat = ss.flat
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(["sample_id"] + [f"x{j}" for j in range(flat.shape[1])])
    for sid, row in zip(ss.sample_ids, flat):
        w.writerow([str(int(sid))] + [fmt(v) for v in row])


def read_sampleset(path) -> SampleSet:
    meta, rows, ids = {}, [], []
    with open(path, newline="") as fh:
        body = []
        for line in fh:
            if line.startswith("# meta: "):
                meta = json.loads(line[len("# meta: "):])
            elif not line.startswith("#"):
                body.append(line)
    reader = csv.reader(io.StringIO("".join(body)))
    header = next(reader, None)
    if not header or header[0] != "sample_id":
        raise ValueError(f"{path}: not a sample-set file")
    for rec in reader:
        ids.append(int(rec[0]))
        rows.append([float(v) for v in rec[1:]])
    vec = np.array(rows, dtype=np.float64).reshape(len(rows), len(header) - 1)
    shape = tuple(meta.get("event_shape", [vec.shape[1]]))
    if len(rows):
        vec = vec.reshape(len(rows), *shape)
    ood = tuple(meta.pop("ood_indices", ()))
    return SampleSet(vec, meta, ood_indices=ood, sample_ids=np.array(ids, dtype=int))


def write_trajectories(fh, ss: SampleSet, grid: TimeGrid, config: dict):
    fh.write(_header_lines("trajectory", config))
    traj = ss.trajectories.reshape(len(ss), len(grid), -1)
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(["sample_id", "node_index", "t", "sigma"] + [f"x{j}" for j in range(traj.shape[2])])
    for sid, tr in zip(ss.sample_ids, traj):
        for k, node in enumerate(grid.nodes):
            w.writerow([str(int(sid)), str(k), fmt(node.t), fmt(node.sigma)] + [fmt(v) for v in tr[k]])
