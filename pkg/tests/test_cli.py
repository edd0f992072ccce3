import csv
import json
import subprocess
import sys

import numpy as np
import pytest

from fewstep import formats
from fewstep.cli import main
from fewstep.metrics import frechet_gaussian

DATA = formats.shipped("")


def rows(path):
    with open(path) as fh:
        return list(csv.DictReader(line for line in fh if not line.startswith("#")))


def run(*argv):
    return main([str(a) for a in argv])


def test_schedule_custom(tmp_path):
    out = tmp_path / "g.csv"
    assert run("schedule", "--kind", "custom", "--n", 8, "--p1", 7, "--p2", 1.2, "--stop", 3, "--out", out) == 0
    r = rows(out)
    assert len(r) == 8
    sig = [float(x["sigma"]) for x in r]
    assert all(b < a for a, b in zip(sig, sig[1:]))
    assert list(r[0]) == ["index", "t", "sigma", "lambda", "alpha", "sigma_vp"]
    header = out.read_text().splitlines()[1]
    assert json.loads(header[len("# config: "):])["schedule"]["stop"] == 3


def test_schedule_karras_two_nodes(tmp_path):
    out = tmp_path / "k.csv"
    assert run("schedule", "--kind", "karras", "--n", 2, "--sigma-min", 0.002, "--sigma-max", 80, "--out", out) == 0
    assert [float(x["sigma"]) for x in rows(out)] == [80.0, 0.002]


def test_schedule_compare_side_by_side(tmp_path):
    out = tmp_path / "c.csv"
    assert run("schedule", "--kind", "custom", "--n", 8, "--compare", "karras", "--out", out) == 0
    r = rows(out)
    assert "cmp_sigma" in r[0] and len(r) == 8


def test_schedule_degenerate_stop(tmp_path, capsys):
    out = tmp_path / "bad.csv"
    assert run("schedule", "--kind", "custom", "--n", 8, "--stop", 0, "--out", out) != 0
    assert "degenerate stop" in capsys.readouterr().err
    assert not out.exists()
    assert list(tmp_path.iterdir()) == []


def test_schedule_via_subprocess(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "fewstep", "schedule", "--kind", "karras", "--n", "3"],
                          capture_output=True, text=True)
    assert proc.returncode == 0 and proc.stdout.startswith("# fewstep schedule v1")


def test_sample_is_byte_identical(tmp_path, capsys):
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    args = ["sample", "--kind", "karras", "--n", 6, "--n-samples", 700, "--seed", 3]
    assert run(*args, "--out", a) == 0
    assert "0 OOD" in capsys.readouterr().err
    assert run(*args, "--out", b, "--threads", 4) == 0
    assert a.read_bytes() == b.read_bytes()
    ss = formats.read_sampleset(a)
    assert ss.vectors.shape == (700, 2) and ss.meta["seed"] == 3


def test_sample_config_file_and_flag_override(tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"schedule": {"kind": "karras", "n": 5}, "model": "two_gmm.json",
                               "n_samples": 20, "seed": 1}))
    out = tmp_path / "s.csv"
    assert run("sample", "--config", cfg, "--seed", 9, "--out", out) == 0
    assert formats.read_sampleset(out).meta["seed"] == 9


def test_sample_rejects_unknown_key(tmp_path, capsys):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"schedule": {"kind": "karras", "n": 5}, "model": "two_gmm.json", "colour": 1}))
    assert run("sample", "--config", cfg, "--out", tmp_path / "s.csv") != 0
    assert "colour" in capsys.readouterr().err
    assert not (tmp_path / "s.csv").exists()


def test_sample_bad_model_file(tmp_path, capsys):
    m = tmp_path / "m.json"
    m.write_text("{not json")
    assert run("sample", "--kind", "karras", "--n", 4, "--model", m, "--out", tmp_path / "s.csv") != 0
    assert "cannot load model" in capsys.readouterr().err


def test_guidance_one_matches_conditional_only_model(tmp_path):
    cond = json.loads((DATA / "cond_gmm.json").read_text())
    only = dict(kind="gmm", model_id="cond0", **cond["components"]["0"])
    (tmp_path / "only.json").write_text(json.dumps(only))
    common = ["sample", "--kind", "custom", "--n", 8, "--n-samples", 300, "--seed", 4]
    assert run(*common, "--model", "cond_gmm.json", "--condition", 0, "--w", 1.0, "--out", tmp_path / "g.csv") == 0
    assert run(*common, "--model", tmp_path / "only.json", "--out", tmp_path / "o.csv") == 0
    g = formats.read_sampleset(tmp_path / "g.csv").vectors
    o = formats.read_sampleset(tmp_path / "o.csv").vectors
    assert g.tobytes() == o.tobytes()


def test_sample_trajectory_and_freeu(tmp_path):
    out, traj = tmp_path / "s.csv", tmp_path / "t.csv"
    assert run("sample", "--kind", "karras", "--n", 4, "--model", "grid_field.json", "--n-samples", 3,
               "--freeu", "recommended", "--t-aug", 1, "--out", out, "--trajectory", traj) == 0
    r = rows(traj)
    assert len(r) == 3 * 4
    assert len(r[0]) == 4 + 32 * 32
    assert formats.read_sampleset(out).vectors.shape == (3, 32, 32)


def test_golden_fd_custom_8_step(tmp_path):
    golden = json.loads((DATA / "golden.json").read_text())
    out = tmp_path / "s.csv"
    assert run("sample", "--config", DATA / golden["config"], "--out", out) == 0
    from fewstep.golden import truth_samples

    fd = frechet_gaussian(formats.read_sampleset(out), truth_samples())
    assert fd < golden["fd_threshold"], f"FD {fd:.4g} vs golden threshold {golden['fd_threshold']:.4g}"


def test_truncation_commands(tmp_path):
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    assert run("truncation", "--n", 2, "--m", 16, "--ref-steps", 20, "--out", a) == 0
    assert len(rows(a)) == 1
    assert run("truncation", "--n", 8, "--m", 32, "--out", a) == 0
    assert run("truncation", "--n", 8, "--m", 32, "--ref-steps", 400, "--out", b) == 0
    ra = np.array([float(x["rmse"]) for x in rows(a)])
    rb = np.array([float(x["rmse"]) for x in rows(b)])
    assert np.max(np.abs(ra - rb) / rb) < 0.01
    assert ra[-1] > ra[0]


def test_convergence_command(tmp_path):
    out = tmp_path / "c.json"
    assert run("convergence", "--solvers", "dpmpp_2m", "--steps", "8,16,32", "--n-samples", 32,
               "--ref-steps", 400, "--out", out) == 0
    rep = json.loads(out.read_text())
    assert rep["results"][0]["solver_kind"] == "dpmpp_2m"
    assert len(rep["results"][0]["errors"]) == 3


@pytest.mark.parametrize("steps", ["8,x,32", "8,16", "16,8,32"])
def test_convergence_malformed_steps(steps):
    with pytest.raises(SystemExit) as e:
        run("convergence", "--steps", steps)
    assert e.value.code == 2


def test_metrics_self_and_mode_drop(tmp_path):
    out = tmp_path / "m.json"
    ref, cand = DATA / "modes4.csv", DATA / "modes2.csv"
    assert run("metrics", ref, ref, "--out", out) == 0
    rep = json.loads(out.read_text())
    assert rep["fd"] == pytest.approx(0.0, abs=1e-9)
    assert rep["fd_label"] == "FD (no embedding)"
    assert min(np.hypot(1 - r, 1 - p) for r, p in rep["prd"]) < 0.02
    assert run("metrics", ref, cand, "--out", out) == 0
    rep = json.loads(out.read_text())
    assert rep["prd_max_recall"] == pytest.approx(0.5, abs=0.05)
    assert rep["prd_max_precision"] == pytest.approx(1.0, abs=0.05)


def test_metrics_errors(tmp_path, capsys):
    out = tmp_path / "m.json"
    assert run("metrics", tmp_path / "missing.csv", DATA / "modes2.csv", "--out", out) != 0
    assert run("sample", "--kind", "karras", "--n", 3, "--model", "grid_field.json", "--n-samples", 2,
               "--out", tmp_path / "g.csv") == 0
    assert run("metrics", tmp_path / "g.csv", DATA / "modes2.csv", "--out", out) != 0
    assert "dimension" in capsys.readouterr().err
    assert not out.exists()


def test_atomic_writer_cleans_up(tmp_path):
    target = tmp_path / "x.txt"
    with pytest.raises(RuntimeError):
        with formats.atomic_writer(target) as fh:
            fh.write("partial")
            raise RuntimeError("boom")
    assert list(tmp_path.iterdir()) == []


def test_sampleset_round_trip(tmp_path, two_gmm, sched):
    from fewstep.solvers import SamplerConfig, sample
    from fewstep.time_grid import karras_grid

    ss = sample(SamplerConfig(karras_grid(4, 7.0, 0.1, 10.0, sched), sched=sched), two_gmm, n_samples=9)
    with formats.atomic_writer(tmp_path / "s.csv") as fh:
        formats.write_sampleset(fh, ss, {})
    back = formats.read_sampleset(tmp_path / "s.csv")
    assert back.vectors.tobytes() == ss.vectors.tobytes()
