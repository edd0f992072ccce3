"""Regenerate the fixtures shipped in ``fewstep/data``.

    python -m fewstep.golden [--data-dir DIR]

Writes the conditional and grid model files, the 8-step sample config, the
mode-drop sample pair and ``golden.json``. The golden FD threshold comes from
the fine reference ODE solve over the full time range, started from the same
terminal noise the sampler draws.
"""

from __future__ import annotations

import argparse
import json
from pathlib import Path

import numpy as np

from . import formats
from .metrics import frechet_gaussian
from .oracle_models import reference_solve
from .solvers import SampleSet, noise_for_samples
from .vp_process import NoiseScheduleParams, noise_level

GOLDEN_N = 10_000
GOLDEN_SEED = 0
TRUTH_SEED = 20_240_917
REF_STEPS = 1000
# Threshold = reference FD times this factor, plus an absolute slack that covers
# moment-estimation noise at 1e4 samples in 2-D.
FD_FACTOR = 2.0
FD_SLACK = 0.01

COND_GMM = {
    "kind": "conditional_gmm",
    "model_id": "cond_gmm",
    "components": {
        "0": {"weights": [0.5, 0.5], "means": [[-1.5, 0.5], [-0.5, 1.5]],
              "covariances": [[[0.2, 0.0], [0.0, 0.2]], [[0.3, 0.1], [0.1, 0.2]]]},
        "1": {"weights": [0.7, 0.3], "means": [[1.25, -0.5], [0.5, -1.5]],
              "covariances": [[[0.25, -0.05], [-0.05, 0.3]], [[0.2, 0.0], [0.0, 0.2]]]},
    },
}

GRID_FIELD = {"kind": "grid_field", "model_id": "grid_field", "grid_size": 32, "corner": 2.0}

SAMPLE_CUSTOM8 = {
    "schedule": {"kind": "custom_stop", "n": 8, "p1": 7.0, "p2": 1.2, "stop": 3},
    "solver": "dpmpp_2m",
    "model": "two_gmm.json",
    "n_samples": GOLDEN_N,
    "seed": GOLDEN_SEED,
}

# Four equal well-separated modes; the candidate keeps two of them.
MODE_CENTERS = [[-4.0, -4.0], [-4.0, 4.0], [4.0, -4.0], [4.0, 4.0]]
MODE_STD = 0.5
MODE_N = 4000


def truth_samples(n=GOLDEN_N, seed=TRUTH_SEED):
    model = formats.load_model("two_gmm.json")
    return model.sample_data(n, np.random.default_rng(seed))


def reference_baseline(n=GOLDEN_N, seed=GOLDEN_SEED, ref_steps=REF_STEPS):
    """Fine ODE solve from the sampler's terminal noise down to ``t_min``."""
    p = NoiseScheduleParams()
    model = formats.load_model("two_gmm.json")
    x_T = noise_level(p.t_max, p).sigma_vp * noise_for_samples(seed, range(n), model.event_shape)
    return reference_solve(x_T, model, p, ref_steps)


def mode_drop_pair(seed=7):
    rng = np.random.default_rng(seed)
    centers = np.array(MODE_CENTERS)
    ref = centers[np.arange(MODE_N) % 4] + MODE_STD * rng.standard_normal((MODE_N, 2))
    cand = centers[np.arange(MODE_N) % 2] + MODE_STD * rng.standard_normal((MODE_N, 2))
    return ref, cand


def _dump(path, payload):
    with formats.atomic_writer(path) as fh:
        fh.write(json.dumps(payload, indent=2, sort_keys=True) + "\n")


def regenerate(data_dir: Path):
    data_dir = Path(data_dir)
    _dump(data_dir / "cond_gmm.json", COND_GMM)
    _dump(data_dir / "grid_field.json", GRID_FIELD)
    _dump(data_dir / "sample_custom8.json", SAMPLE_CUSTOM8)

    ref, cand = mode_drop_pair()
    for name, arr, kept in (("modes4.csv", ref, 4), ("modes2.csv", cand, 2)):
        ss = SampleSet(arr, {"fixture": "mode_drop", "modes_kept": kept})
        with formats.atomic_writer(data_dir / name) as fh:
            formats.write_sampleset(fh, ss, {"centers": MODE_CENTERS[:kept], "std": MODE_STD,
                                             "n": MODE_N})

    fd_ref = frechet_gaussian(reference_baseline(), truth_samples())
    _dump(data_dir / "golden.json", {
        "fd_reference": fd_ref,
        "fd_threshold": FD_FACTOR * fd_ref + FD_SLACK,
        "truth_seed": TRUTH_SEED,
        "n_samples": GOLDEN_N,
        "seed": GOLDEN_SEED,
        "ref_steps": REF_STEPS,
        "config": "sample_custom8.json",
    })


def main(argv=None):
    ap = argparse.ArgumentParser(description="regenerate shipped fixtures")
    ap.add_argument("--data-dir", default=str(formats.shipped("")))
    regenerate(Path(ap.parse_args(argv).data_dir))
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
