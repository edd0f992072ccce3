import numpy as np
import pytest
from scipy.linalg import sqrtm

from fewstep import formats
from fewstep.metrics import (
    PRDCurve,
    convergence_order,
    frechet_from_moments,
    frechet_gaussian,
    local_truncation_rmse,
    prd_curve,
    prd_from_histograms,
    sliced_w2,
)


class Const:
    has_score = False
    event_shape = (2,)
    model_id = "const"

    def denoise(self, x, level, condition=None):
        return np.broadcast_to([0.25, -0.5], np.shape(x)).copy()


def test_frechet_identical_is_zero(rng):
    a = rng.normal(size=(500, 3))
    assert frechet_gaussian(a, a) == pytest.approx(0.0, abs=1e-10)


def test_frechet_matches_scipy_sqrtm(rng):
    A = rng.normal(size=(4, 4))
    B = rng.normal(size=(4, 4))
    ca, cb = A @ A.T + np.eye(4), B @ B.T + 0.5 * np.eye(4)
    mu = rng.normal(size=4)
    want = mu @ mu + np.trace(ca + cb - 2 * sqrtm(ca @ cb).real)
    assert frechet_from_moments(mu, ca, np.zeros(4), cb) == pytest.approx(want, rel=1e-9)


def test_frechet_mean_shift():
    rng = np.random.default_rng(0)
    a = rng.normal(size=(10**5, 2))
    b = rng.normal(size=(10**5, 2)) + [3.0, 0.0]
    assert frechet_gaussian(a, b) == pytest.approx(9.0, rel=0.05)


def test_frechet_commuting_covariances():
    rng = np.random.default_rng(1)
    a = rng.normal(size=(10**5, 2))
    b = 2.0 * rng.normal(size=(10**5, 2))
    assert frechet_gaussian(a, b) == pytest.approx(2.0, rel=0.05)


def test_frechet_singular_and_errors(rng):
    a = np.column_stack([rng.normal(size=200), np.zeros(200)])
    assert frechet_gaussian(a, a) == pytest.approx(0.0, abs=1e-9)
    with pytest.raises(ValueError):
        frechet_gaussian(rng.normal(size=(2, 3)), rng.normal(size=(50, 3)))
    with pytest.raises(ValueError):
        frechet_gaussian(rng.normal(size=(50, 3)), rng.normal(size=(50, 2)))


def test_prd_histogram_arithmetic():
    p = np.array([0.25, 0.25, 0.25, 0.25])
    q = np.array([0.5, 0.5, 0.0, 0.0])
    recall, precision = prd_from_histograms(p, q, 1001)
    assert recall.max() == pytest.approx(0.5, abs=1e-3)
    assert precision.max() == pytest.approx(1.0, abs=1e-12)


def test_prd_identical_sets(rng):
    a = rng.normal(size=(3000, 2))
    curve = prd_curve(a, a)
    assert isinstance(curve, PRDCurve)
    dist = np.min(np.hypot(1 - curve.recall, 1 - curve.precision))
    assert dist < 0.02
    assert np.all(np.diff(curve.recall) > 0)


def test_prd_disjoint_supports(rng):
    a = rng.normal(size=(2000, 2))
    b = rng.normal(size=(2000, 2)) + 50.0
    curve = prd_curve(a, b)
    assert curve.recall.max() < 0.05 and curve.precision.max() < 0.05


def test_prd_shipped_mode_drop():
    ref = formats.read_sampleset(formats.shipped("modes4.csv"))
    cand = formats.read_sampleset(formats.shipped("modes2.csv"))
    curve = prd_curve(ref, cand)
    assert curve.recall.max() == pytest.approx(0.5, abs=0.05)
    assert curve.precision.max() == pytest.approx(1.0, abs=0.05)


def test_prd_rejects_small_sets(rng):
    with pytest.raises(ValueError):
        prd_curve(rng.normal(size=(10, 2)), rng.normal(size=(100, 2)))


def test_sliced_w2_basic():
    rng = np.random.default_rng(2)
    a = rng.normal(size=(10**5, 1))
    b = rng.normal(size=(10**5, 1)) + 1.0
    assert sliced_w2(a, a) == 0.0
    assert sliced_w2(a, b, n_proj=4) == pytest.approx(1.0, rel=0.03)
    c = rng.normal(size=(7000, 1)) + 1.0  # unequal sizes
    assert sliced_w2(a, c, n_proj=4) == pytest.approx(1.0, rel=0.03)


def test_sliced_w2_seeded(rng):
    a, b = rng.normal(size=(500, 3)), rng.normal(size=(400, 3))
    assert sliced_w2(a, b, seed=3) == sliced_w2(a, b, seed=3)


def test_truncation_small_grid(sched, two_gmm):
    rows = local_truncation_rmse(two_gmm, sched, N=2, M=16, ref_steps=20)
    assert len(rows) == 1 and rows[0][0] == sched.sigma_max


def test_truncation_zero_width_interval(sched, two_gmm):
    from fewstep.oracle_models import reference_solve
    from fewstep.solvers import SolverState, dpmpp_1s_step
    from fewstep.vp_process import noise_level

    lv = noise_level(0.4, sched)
    x = np.random.default_rng(0).normal(size=(8, 2))
    one = dpmpp_1s_step(SolverState(x), lv, lv, two_gmm).x
    ref = reference_solve(x, two_gmm, sched, 10, t_from=0.4, t_to=0.4)
    assert np.sqrt(np.mean((one - ref) ** 2)) == 0.0


def test_truncation_threads_and_reference_adequacy(sched, two_gmm):
    a = local_truncation_rmse(two_gmm, sched, N=8, M=64, ref_steps=200)
    b = local_truncation_rmse(two_gmm, sched, N=8, M=64, ref_steps=200, threads=3)
    assert a == b
    c = local_truncation_rmse(two_gmm, sched, N=8, M=64, ref_steps=400)
    r = np.array([x[1] for x in a]), np.array([x[1] for x in c])
    assert np.max(np.abs(r[0] - r[1]) / r[1]) < 0.01
    assert r[0][-1] > r[0][0]


def test_convergence_input_validation(sched, two_gmm):
    with pytest.raises(ValueError):
        convergence_order("euler", two_gmm, [8, 16], sched)
    with pytest.raises(ValueError):
        convergence_order("euler", two_gmm, [8, 16, 16], sched)


def test_convergence_exact_case_flagged(sched):
    rep = convergence_order("dpmpp_1s", Const(), [4, 8, 16], sched, n_samples=32, ref_steps=2000)
    assert rep.at_floor
    assert max(rep.errors) < 1e-11


@pytest.mark.slow
@pytest.mark.parametrize("kind, lo, hi", [("euler", 0.8, 1.3), ("dpmpp_2m", 1.6, 2.4)])
def test_global_slopes(sched, two_gmm, kind, lo, hi):
    rep = convergence_order(kind, two_gmm, [8, 16, 32, 64], sched)
    assert lo <= rep.slope <= hi
    assert rep.monotone and not rep.at_floor
