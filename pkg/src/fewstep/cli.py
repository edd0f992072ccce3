"""Command-line harness: ``fewstep {schedule,sample,truncation,convergence,metrics}``.

Every subcommand is deterministic in its arguments, config file and seed, and
writes its output atomically (temp file, then rename). On failure the exit code
is nonzero and no output file is left behind.

Experiment config (``--config``, strict JSON; flags override values)::

    {"schedule": {"kind": "custom_stop", "n": 8, "p1": 7, "p2": 1.2, "stop": 3},
     "solver": "dpmpp_2m", "model": "two_gmm.json", "w": 1.0, "condition": null,
     "freeu": {"b1": 1.1, "b2": 1.1, "s1": 0.9, "s2": 0.2,
               "radius_threshold": 0.25, "t_aug": 0},
     "process": {"beta_min": 0.1, "beta_max": 20, "t_min": 0.001, "t_max": 1},
     "n_samples": 1000, "seed": 0, "out": "samples.csv", "trajectory_out": null}

Model documents, inline under ``model`` or in a file (names of shipped files
such as ``two_gmm.json``, ``cond_gmm.json`` and ``grid_field.json`` also work)::

    {"kind": "gmm", "model_id": "...", "weights": [...], "means": [[...]],
     "covariances": [[[...]]]}
    {"kind": "conditional_gmm", "components": {"0": {"weights": ..., "means": ...,
     "covariances": ...}, "1": {...}}}
    {"kind": "grid_field", "grid_size": 32, "corner": 2.0, "split_radius": 4,
     "power_spectrum": null}

Sample files are CSV: ``#`` lines with the effective config and sampler metadata,
then ``sample_id,x0,x1,...`` rows with 17 significant digits. Output paths and
``--threads`` are not part of the echoed config, so reruns are byte-identical.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from concurrent.futures import ThreadPoolExecutor

import numpy as np
from pydantic import ValidationError

from . import formats
from .formats import ExperimentConfig, ScheduleSpec, atomic_writer, fmt
from .metrics import convergence_order, frechet_gaussian, local_truncation_rmse, prd_curve, sliced_w2
from .solvers import SamplerConfig, sample
from .vp_process import NoiseScheduleParams

log = logging.getLogger("fewstep")

SCHEDULE_FLAGS = ("p", "p1", "p2", "stop", "sigma_min", "sigma_max", "t_min", "t_max")


class CLIError(Exception):
    pass


def _step_list(text):
    try:
        vals = [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"malformed step list {text!r}") from None
    if len(vals) < 3 or any(b <= a for a, b in zip(vals, vals[1:])) or vals[0] < 1:
        raise argparse.ArgumentTypeError("need >= 3 strictly increasing positive step counts")
    return vals


def _add_common(sp):
    sp.add_argument("--config", help="JSON config document")
    sp.add_argument("--seed", type=int)
    sp.add_argument("--out", help="output path")
    sp.add_argument("--threads", type=int, default=1)


def _add_process(sp):
    sp.add_argument("--beta-min", type=float)
    sp.add_argument("--beta-max", type=float)
    sp.add_argument("--process-t-min", type=float)
    sp.add_argument("--process-t-max", type=float)


def _add_schedule(sp, required_kind=False):
    sp.add_argument("--kind", required=required_kind,
                    choices=["uniform_sigma", "uniform", "karras", "improved", "custom_stop", "custom",
                             "log_snr"])
    sp.add_argument("--n", type=int)
    for f in ("p", "p1", "p2", "sigma_min", "sigma_max", "t_min", "t_max"):
        sp.add_argument("--" + f.replace("_", "-"), dest=f, type=float)
    sp.add_argument("--stop", type=int)
    sp.add_argument("--literal", action="store_true", help="printed (non-standard) karras reading")


def build_parser():
    ap = argparse.ArgumentParser(prog="fewstep", description=__doc__.splitlines()[0])
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("schedule", help="write a discretization grid as CSV")
    _add_common(sp)
    _add_process(sp)
    _add_schedule(sp)
    sp.add_argument("--compare", choices=["uniform_sigma", "uniform", "karras", "improved",
                                          "custom_stop", "custom", "log_snr"],
                    help="second schedule (same N) written side by side")

    sp = sub.add_parser("sample", help="run the sampler")
    _add_common(sp)
    _add_process(sp)
    _add_schedule(sp)
    sp.add_argument("--solver", choices=["euler", "dpmpp_1s", "dpmpp_2m"])
    sp.add_argument("--model", help="model JSON path (or shipped file name)")
    sp.add_argument("--w", type=float)
    sp.add_argument("--condition", type=int)
    sp.add_argument("--freeu", help="b1,b2,s1,s2 (or 'recommended')")
    sp.add_argument("--freeu-radius", type=float)
    sp.add_argument("--t-aug", type=int)
    sp.add_argument("--n-samples", type=int)
    sp.add_argument("--trajectory", help="trajectory CSV path")

    sp = sub.add_parser("truncation", help="per-interval one-step truncation error")
    _add_common(sp)
    _add_process(sp)
    sp.add_argument("--model", default="two_gmm.json")
    sp.add_argument("--n", type=int, default=64)
    sp.add_argument("--m", type=int, default=256, help="states per interval")
    sp.add_argument("--ref-steps", type=int, default=200)
    sp.add_argument("--sigma-max", type=float)

    sp = sub.add_parser("convergence", help="empirical global order of accuracy")
    _add_common(sp)
    _add_process(sp)
    sp.add_argument("--model", default="two_gmm.json")
    sp.add_argument("--solvers", default="euler,dpmpp_1s,dpmpp_2m")
    sp.add_argument("--steps", type=_step_list, default=[8, 16, 32, 64])
    sp.add_argument("--n-samples", type=int, default=256)
    sp.add_argument("--ref-steps", type=int, default=2000)

    sp = sub.add_parser("metrics", help="compare two sample files")
    _add_common(sp)
    sp.add_argument("reference")
    sp.add_argument("candidate")
    sp.add_argument("--k", type=int, default=20)
    sp.add_argument("--num-angles", type=int, default=1001)
    sp.add_argument("--n-proj", type=int, default=128)
    return ap


def _read_config(path):
    if not path:
        return {}
    try:
        with open(path) as fh:
            return json.load(fh)
    except (OSError, json.JSONDecodeError) as e:
        raise CLIError(f"cannot read config {path}: {e}") from None


def _process(args, doc):
    proc = dict(doc.get("process", {}))
    for flag, key in (("beta_min", "beta_min"), ("beta_max", "beta_max"),
                      ("process_t_min", "t_min"), ("process_t_max", "t_max")):
        v = getattr(args, flag, None)
        if v is not None:
            proc[key] = v
    return proc


def _schedule_doc(args, doc, kind_override=None):
    sch = dict(doc.get("schedule", {}))
    kind = kind_override or args.kind
    if kind is not None:
        if kind_override is not None or sch.get("kind") not in (kind, formats.SCHEDULE_ALIASES.get(kind)):
            sch = {k: v for k, v in sch.items() if k == "n"}
        sch["kind"] = formats.SCHEDULE_ALIASES.get(kind, kind)
    if args.n is not None:
        sch["n"] = args.n
    kind = formats.SCHEDULE_ALIASES.get(sch.get("kind"), sch.get("kind"))
    relevant = {
        "uniform_sigma": ("sigma_max",),
        "karras": ("p", "sigma_min", "sigma_max"),
        "improved": ("p", "t_min", "t_max"),
        "custom_stop": ("p1", "p2", "stop"),
        "log_snr": ("t_min", "t_max"),
    }.get(kind, SCHEDULE_FLAGS)
    for f in relevant:
        v = getattr(args, f, None)
        if v is not None:
            sch[f] = v
    if kind == "karras" and getattr(args, "literal", False):
        sch["literal"] = True
    return sch


def _emit_json(path, payload):
    text = json.dumps(payload, indent=2, sort_keys=True) + "\n"
    if path:
        with atomic_writer(path) as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


def _open_out(path):
    if path:
        return atomic_writer(path)
    import contextlib

    return contextlib.nullcontext(sys.stdout)


def cmd_schedule(args):
    doc = _read_config(args.config)
    proc = _process(args, doc)
    spec = ScheduleSpec(**_schedule_doc(args, doc))
    sched = formats.ProcessSpec(**proc).params()
    grid = spec.build(sched)
    effective = {"schedule": spec.model_dump(exclude_none=True), "process": sched.to_dict()}
    cmp_grid = None
    if args.compare:
        cspec = ScheduleSpec(**_schedule_doc(args, {}, kind_override=args.compare))
        cmp_grid = cspec.build(sched)
        effective["compare"] = cspec.model_dump(exclude_none=True)
    with _open_out(args.out) as fh:
        formats.write_grid_csv(fh, grid, effective, cmp_grid)
    return 0


def _experiment(args):
    doc = _read_config(args.config)
    merged = {k: v for k, v in doc.items() if k not in ("schedule", "process")}
    merged["schedule"] = _schedule_doc(args, doc)
    merged["process"] = _process(args, doc)
    for flag, key in (("solver", "solver"), ("model", "model"), ("w", "w"),
                      ("condition", "condition"), ("n_samples", "n_samples"), ("seed", "seed"),
                      ("out", "out"), ("trajectory", "trajectory_out")):
        v = getattr(args, flag, None)
        if v is not None:
            merged[key] = v
    if args.freeu is not None or args.freeu_radius is not None or args.t_aug is not None:
        fu = dict(merged.get("freeu") or {})
        if args.freeu:
            vals = [1.1, 1.1, 0.9, 0.2] if args.freeu == "recommended" else [float(v) for v in args.freeu.split(",")]
            if len(vals) != 4:
                raise CLIError("--freeu takes four numbers b1,b2,s1,s2")
            fu.update(zip(("b1", "b2", "s1", "s2"), vals))
        if args.freeu_radius is not None:
            fu["radius_threshold"] = args.freeu_radius
        if args.t_aug is not None:
            fu["t_aug"] = args.t_aug
        merged["freeu"] = fu
    if "model" not in merged:
        merged["model"] = "two_gmm.json"
    return ExperimentConfig(**merged)


def cmd_sample(args):
    cfg = _experiment(args)
    sched = cfg.process.params()
    grid = cfg.schedule.build(sched)
    if isinstance(cfg.model, str):
        try:
            model = formats.load_model(cfg.model)
        except (OSError, json.JSONDecodeError, ValidationError) as e:
            raise CLIError(f"cannot load model {cfg.model}: {e}") from None
    else:
        model = formats.model_from_spec(cfg.model)
    sc = SamplerConfig(grid, cfg.solver, cfg.w, cfg.freeu.params() if cfg.freeu else None,
                       cfg.seed, sched)
    ss = sample(sc, model, cfg.condition, cfg.n_samples,
                record_trajectories=cfg.trajectory_out is not None, threads=args.threads)
    effective = cfg.model_dump(mode="json", exclude_none=True, exclude={"out", "trajectory_out"})
    with _open_out(cfg.out) as fh:
        formats.write_sampleset(fh, ss, effective)
    if cfg.trajectory_out:
        with atomic_writer(cfg.trajectory_out) as fh:
            formats.write_trajectories(fh, ss, grid, effective)
    print(f"sampled {len(ss)} of {cfg.n_samples} ({len(ss.ood_indices)} OOD)"
          + (f" -> {cfg.out}" if cfg.out else ""), file=sys.stderr)
    return 0


def cmd_truncation(args):
    doc = _read_config(args.config)
    sched = formats.ProcessSpec(**_process(args, doc)).params()
    model = formats.load_model(doc.get("model", args.model) if isinstance(doc.get("model"), str)
                               else args.model)
    seed = args.seed if args.seed is not None else doc.get("seed", 0)
    rows = local_truncation_rmse(model, sched, args.n, args.m, args.ref_steps, seed,
                                 args.sigma_max, threads=args.threads)
    effective = {"model": args.model, "n": args.n, "m": args.m, "ref_steps": args.ref_steps,
                 "seed": seed, "sigma_max": args.sigma_max, "process": sched.to_dict()}
    with _open_out(args.out) as fh:
        fh.write(f"# fewstep truncation v1\n# config: {json.dumps(effective, sort_keys=True)}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["interval", "sigma", "rmse"])
        for i, (s, r) in enumerate(rows):
            w.writerow([str(i), fmt(s), fmt(r)])
    return 0


def cmd_convergence(args):
    doc = _read_config(args.config)
    sched = formats.ProcessSpec(**_process(args, doc)).params()
    model = formats.load_model(args.model)
    seed = args.seed if args.seed is not None else doc.get("seed", 0)
    kinds = [k.strip() for k in args.solvers.split(",") if k.strip()]

    def run(kind):
        return convergence_order(kind, model, args.steps, sched, args.n_samples, seed, args.ref_steps)

    if args.threads > 1:
        with ThreadPoolExecutor(max_workers=args.threads) as ex:
            reports = list(ex.map(run, kinds))
    else:
        reports = [run(k) for k in kinds]
    payload = {
        "config": {"model": args.model, "steps": args.steps, "n_samples": args.n_samples,
                   "ref_steps": args.ref_steps, "seed": seed, "process": sched.to_dict(),
                   "grid": "log_snr"},
        "results": [r.to_dict() for r in reports],
    }
    _emit_json(args.out, payload)
    return 0


def cmd_metrics(args):
    try:
        a = formats.read_sampleset(args.reference)
        b = formats.read_sampleset(args.candidate)
    except OSError as e:
        raise CLIError(str(e)) from None
    if a.flat.shape[1] != b.flat.shape[1]:
        raise CLIError("sample files differ in dimension")
    seed = args.seed if args.seed is not None else 0
    prd = prd_curve(a, b, k=args.k, num_angles=args.num_angles, seed=seed)
    payload = {
        "fd": frechet_gaussian(a, b),
        "fd_label": "FD (no embedding)",
        "sliced_w2": sliced_w2(a, b, n_proj=args.n_proj, seed=seed),
        "prd": prd.points.tolist(),
        "prd_max_recall": float(prd.recall.max()),
        "prd_max_precision": float(prd.precision.max()),
        "config": {"reference": args.reference, "candidate": args.candidate, "k": args.k,
                   "num_angles": args.num_angles, "n_proj": args.n_proj, "seed": seed},
    }
    _emit_json(args.out, payload)
    return 0


COMMANDS = {
    "schedule": cmd_schedule,
    "sample": cmd_sample,
    "truncation": cmd_truncation,
    "convergence": cmd_convergence,
    "metrics": cmd_metrics,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except (CLIError, ValueError, ValidationError, FileNotFoundError) as e:
        print(f"fewstep {args.command}: error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
