import numpy as np
import pytest
from hypothesis import strategies as st

from loopsoup.fixtures import g2, grid3, k3, random_energy, sq1


@pytest.fixture
def G2():
    return g2()


@pytest.fixture
def K3():
    return k3()


@pytest.fixture
def SQ1():
    return sq1()


@pytest.fixture
def GRID3():
    return grid3()


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@st.composite
def energy_forms(draw, max_n: int = 8):
    seed = draw(st.integers(0, 2**32 - 1))
    n = draw(st.integers(1, max_n))
    return random_energy(np.random.default_rng(seed), n=n)


def zscore(samples, exact):
    samples = np.asarray(samples, dtype=float)
    se = samples.std(ddof=1) / np.sqrt(len(samples))
    return (samples.mean() - exact) / se if se > 0 else 0.0


def pytest_terminal_summary(terminalreporter):
    import sys

    mod = sys.modules.get("tests.test_acceptance")
    if mod is None or not mod.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for line in mod.summary_lines():
        terminalreporter.write_line(line)
