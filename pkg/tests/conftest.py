import numpy as np
import pytest

from fewstep import formats
from fewstep.oracle_models import GaussianMixture, GMMModel
from fewstep.vp_process import NoiseScheduleParams


@pytest.fixture(scope="session")
def sched():
    return NoiseScheduleParams()


@pytest.fixture(scope="session")
def sd_sched():
    """Sigma range 0.002..80 mapped onto the same linear-beta process."""
    return NoiseScheduleParams.from_sigma_range(0.002, 80.0)


@pytest.fixture(scope="session")
def two_gmm():
    return formats.load_model("two_gmm.json")


@pytest.fixture(scope="session")
def cond_gmm():
    return formats.load_model("cond_gmm.json")


@pytest.fixture(scope="session")
def grid_model():
    return formats.load_model("grid_field.json")


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def random_mixture(rng, k=2, d=2):
    w = rng.uniform(0.2, 1.0, k)
    means = rng.normal(0, 1.5, (k, d))
    covs = []
    for _ in range(k):
        a = rng.normal(0, 0.5, (d, d))
        covs.append(a @ a.T + 0.2 * np.eye(d))
    return GMMModel(GaussianMixture(w / w.sum(), means, np.array(covs)))


def pytest_terminal_summary(terminalreporter):
    try:
        from test_acceptance import RESULTS
    except ImportError:
        return
    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for n in sorted(RESULTS):
            terminalreporter.write_line(RESULTS[n])
