import numpy as np
import pytest

import oracle
from fewstep.time_grid import (
    ScheduleKind,
    TimeGrid,
    build_grid,
    custom_stop_grid,
    improved_grid,
    karras_grid,
    log_snr_grid,
    sigma_stop,
    uniform_sigma_grid,
)
from fewstep.vp_process import NoiseScheduleParams, sigma_karras, t_of_sigma


def rel(a, b):
    return abs(float(a) - float(b)) / abs(float(b))


@pytest.mark.parametrize("sigma_range", [None, (0.002, 80.0), (0.0292, 14.6)])
def test_custom_stop_matches_high_precision(sigma_range):
    p = NoiseScheduleParams() if sigma_range is None else NoiseScheduleParams.from_sigma_range(*sigma_range)
    g = custom_stop_grid(8, 7.0, 1.2, 3, p)
    s_stop, ts, sigs = oracle.custom_stop(8, 7, 1.2, 3, p.t_min, p.t_max)
    assert len(g) == 8
    assert rel(g.params_used["sigma_stop"], s_stop) < 1e-10
    for node, t, s in zip(g.nodes, ts, sigs):
        assert rel(node.t, t) < 1e-10
        assert rel(node.sigma, s) < 1e-10


def test_custom_stop_structure(sched):
    g = custom_stop_grid(8, 7.0, 1.2, 3, sched)
    assert g.schedule_kind is ScheduleKind.CUSTOM_STOP
    assert np.all(np.diff(g.sigmas) < 0)
    assert g[0].t == sched.t_max
    # indices stop at N-1, so the last node is still above sigma_stop
    assert g[-1].sigma > g.params_used["sigma_stop"]
    k = karras_grid(8, 7.0, sched.sigma_min, sched.sigma_max, sched)
    assert g[-1].sigma > k[-1].sigma


def test_sigma_stop_formula():
    assert sigma_stop(8, 1.2, 0, 0.002, 80.0) == pytest.approx(80.0, rel=1e-15)
    assert sigma_stop(8, 1.0, 3, 0.0, 12.0) == pytest.approx(12.0 * (1 - 3 / 12))


def test_custom_stop_zero_is_degenerate(sched):
    with pytest.raises(ValueError, match="degenerate stop"):
        custom_stop_grid(8, 7.0, 1.2, 0, sched)


@pytest.mark.parametrize("N", [2, 5, 20])
def test_karras_endpoints_exact(sched, N):
    g = karras_grid(N, 7.0, 0.002, 80.0, sched)
    assert g[0].sigma == 80.0
    assert g[-1].sigma == 0.002
    assert len(g) == N


def test_karras_matches_high_precision(sched):
    g = karras_grid(20, 7.0, 0.002, 80.0, sched)
    for node, s in zip(g.nodes, oracle.karras(20, 7, 0.002, 80.0)):
        assert rel(node.sigma, s) < 1e-12


def test_karras_p1_is_uniform(sched):
    g = karras_grid(11, 1.0, 0.5, 10.5, sched)
    assert np.max(np.abs(g.sigmas - np.linspace(10.5, 0.5, 11))) < 1e-9


def test_karras_tail_crowds_near_clean(sd_sched):
    g = karras_grid(20, 7.0, 0.002, 80.0, sd_sched)
    tail = g.sigmas[-4:]
    # discrete scaled-linear betas (sqrt-linspace 0.00085..0.012, 1000 steps): sigma after 6 steps
    betas = np.linspace(0.00085**0.5, 0.012**0.5, 1000) ** 2
    abar = np.cumprod(1 - betas)
    s6 = np.sqrt((1 - abar) / abar)[5]
    assert np.all(tail < s6)
    assert g.sigmas[-5] > s6
    # continuous process read: sigma at t = 6/1000 of the way toward t_max
    s_cont = sigma_karras(0.006 * sd_sched.t_max, sd_sched)
    assert np.sum(g.sigmas < s_cont) == 3


def test_karras_literal_reading_rejected_when_invalid(sched):
    with pytest.raises(ValueError, match="non-positive"):
        karras_grid(8, 7.0, 0.002, 80.0, sched, literal=True)


def test_uniform_sigma_grid(sched):
    g = uniform_sigma_grid(64, 80.0, sched)
    d = -np.diff(g.sigmas[:-1])
    assert np.allclose(d, 80 / 63, rtol=1e-12)
    assert g[-1].sigma == sched.sigma_min
    g2 = uniform_sigma_grid(2, 80.0, sched)
    assert list(g2.sigmas) == [80.0, sched.sigma_min]


def test_improved_grid(sched):
    g = improved_grid(8, 1.2, sched.t_min, sched.t_max, sched)
    assert g[0].t == sched.t_max and g[-1].t == sched.t_min
    u = improved_grid(5, 1.0, 0.2, 1.0, sched)
    assert np.allclose(u.ts, np.linspace(1.0, 0.2, 5), atol=1e-15)


def test_improved_gaps_exceed_karras_at_both_ends(sched):
    imp = improved_grid(8, 1.2, sched.t_min, sched.t_max, sched)
    kar = karras_grid(8, 7.0, sched.sigma_min, sched.sigma_max, sched)
    k_ts = t_of_sigma(kar.sigmas, sched)
    gi, gk = -np.diff(imp.ts), -np.diff(k_ts)
    assert gi[0] > gk[0]
    assert gi[-1] > gk[-1]


def test_log_snr_grid_uniform_in_lambda(sched):
    g = log_snr_grid(9, sched)
    assert np.allclose(np.diff(g.lambdas), np.diff(g.lambdas)[0], rtol=1e-9)


def test_grid_invariants():
    p = NoiseScheduleParams()
    good = karras_grid(3, 7.0, 0.1, 10.0, p)
    with pytest.raises(ValueError):
        TimeGrid(good.nodes[::-1], ScheduleKind.KARRAS)
    with pytest.raises(ValueError):
        TimeGrid(good.nodes[:1], ScheduleKind.KARRAS)
    with pytest.raises(TypeError):
        good.params_used["N"] = 4
    assert good.table().shape == (3, 6)


@pytest.mark.parametrize("bad", [dict(N=1), dict(N=2.5)])
def test_rejects_bad_N(sched, bad):
    with pytest.raises(ValueError):
        karras_grid(bad["N"], 7.0, 0.1, 10.0, sched)


def test_build_grid_dispatch(sched):
    g = build_grid("custom_stop", sched, n=8, p1=7.0, p2=1.2, stop=3)
    assert len(g) == 8
    with pytest.raises(ValueError, match="unexpected"):
        build_grid("karras", sched, n=4, stop=3)
    with pytest.raises(ValueError):
        build_grid("nonsense", sched, n=4)
