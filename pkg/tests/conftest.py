import warnings

import pytest
from hypothesis import settings

settings.register_profile("default", deadline=None, max_examples=50)
settings.load_profile("default")


@pytest.fixture(autouse=True)
def _quiet_numerics():
    with warnings.catch_warnings():
        warnings.filterwarnings("ignore", category=RuntimeWarning)
        yield


@pytest.fixture(scope="session")
def small_sim():
    """A small generated panel (80 plants, 8 years) for fast end-to-end checks."""
    from cesmarkdown.dgp import DgpConfig, simulate_panel

    return simulate_panel(DgpConfig(seed=11, n_plants=80, n_years=8, n_markets=5))


@pytest.fixture(scope="session")
def small_fit(small_sim):
    """Production steps fitted on :func:`small_sim` at the generator's baseline."""
    from cesmarkdown.estim import GmmOptions, Step1Options, step1_estimate, step2_estimate, step3_estimate

    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        s1 = step1_estimate(small_sim.frame, small_sim.truth.means, Step1Options(gmm=GmmOptions(n_starts=2)))
        s2 = step2_estimate(small_sim.frame, s1)
        s3 = step3_estimate(s2)
    return s1, s2, s3


def pytest_terminal_summary(terminalreporter):
    import sys

    acceptance = sys.modules.get("test_acceptance")
    results = getattr(acceptance, "RESULTS", None)
    if results:
        terminalreporter.section("acceptance criteria")
        for number in sorted(results):
            terminalreporter.write_line(results[number])
