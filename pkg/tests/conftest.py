import numpy as np
import pytest

from graphsvgd.model import GaussianMrfParams, gaussian_model


def gaussian(A, b=None, name="gauss"):
    A = np.asarray(A, dtype=float)
    b = np.zeros(len(A)) if b is None else np.asarray(b, dtype=float)
    return gaussian_model(GaussianMrfParams(A, b), name)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def std_normal_1d():
    return gaussian(np.eye(1))


@pytest.fixture
def chain3():
    A = np.array([[1.0, 0.4, 0.0], [0.4, 1.2, -0.3], [0.0, -0.3, 0.9]])
    return gaussian(A, [0.2, -0.1, 0.3], "chain3")


# criterion number -> (passed, detail, seconds, budget)
ACCEPTANCE = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE):
        passed, detail, seconds, budget = ACCEPTANCE[number]
        verdict = "PASS" if passed else "FAIL"
        terminalreporter.write_line(
            f"criterion {number:2d}: {verdict}  {detail}  [{seconds:.1f} s, budget {budget:g} s]")
