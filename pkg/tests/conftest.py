import numpy as np
import pytest

from tpsds.diffusion import build_schedule
from tpsds.oracle import GaussianMixture, MixtureDenoiser, bimodal_far

# filled by test_acceptance.py, printed at the end of the session
ACCEPTANCE_RESULTS: list[tuple[str, bool, str]] = []


@pytest.fixture(scope="session")
def linear_schedule():
    return build_schedule("ddpm_linear", 1000)


@pytest.fixture(scope="session")
def cosine_schedule():
    return build_schedule("cosine", 1000)


@pytest.fixture(scope="session")
def bimodal():
    return bimodal_far()


@pytest.fixture
def rng():
    return np.random.default_rng(20240518)


def single_gaussian(mu, var=1.0):
    mu = np.atleast_1d(np.asarray(mu, dtype=float))
    return GaussianMixture(weights=[1.0], means=[mu], variances=[var])


@pytest.fixture(scope="session")
def unit_gaussian_denoiser(linear_schedule):
    mu = np.array([1.5, -0.5, 2.0])
    return MixtureDenoiser(single_gaussian(mu), linear_schedule), mu


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for name, ok, detail in ACCEPTANCE_RESULTS:
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'}  {name}: {detail}")
