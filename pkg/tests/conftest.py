import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile(
    "cmflow", deadline=None, max_examples=25,
    suppress_health_check=[HealthCheck.too_slow, HealthCheck.data_too_large])
settings.load_profile("cmflow")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def random_L(n, rng, kind="U"):
    """Random anti-Hermitian zero-diagonal L: ``U`` complex, ``O`` real, ``I`` imaginary."""
    A = rng.standard_normal((n, n))
    B = rng.standard_normal((n, n))
    if kind == "O":
        L = (A - A.T).astype(complex)
    elif kind == "I":
        L = 1j * (A + A.T)
    else:
        L = (A - A.T) + 1j * (B + B.T)
    np.fill_diagonal(L, 0.0)
    return L


def spaced_positions(n, rng, gap=0.4):
    return np.cumsum(gap + rng.uniform(0, 1, n)) - n / 2


def pytest_terminal_summary(terminalreporter):
    import sys
    mod = sys.modules.get("test_acceptance") or sys.modules.get("tests.test_acceptance")
    if mod is None or not mod.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(mod.RESULTS):
        terminalreporter.write_line(mod.RESULTS[k])
