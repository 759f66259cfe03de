from importlib.resources import files

import numpy as np
import pytest

from bbgp.design import load_spec
from bbgp.model import DesignSet, ParamVector, RepeatedCountData

FINAL_SPEC = str(files("bbgp") / "data" / "parkinson_final.yaml")

# filled by tests/test_acceptance.py, echoed at the end of the run
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def final_spec():
    return load_spec(FINAL_SPEC)


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)


def random_problem(rng, M=4, p=3, max_n=8, kmu=2, ktheta=2, klam=2, kalpha=2, kdelta=2,
                   scale=0.5):
    """Small random data set with dense random designs and moderate coefficients.

    Every design has a leading intercept column; the rest are standard normal.
    """

    def design(rows, k):
        Z = rng.normal(size=(rows, k))
        Z[:, 0] = 1.0
        return Z

    designs = DesignSet(design(M * p, kmu), design(M * p, ktheta), design(M * p, klam),
                        design(M, kalpha), design(M, kdelta))
    params = ParamVector(
        mu=rng.normal(scale=scale, size=kmu),
        theta=rng.normal(-1.0, scale, size=ktheta),
        lam=rng.normal(1.0, scale, size=klam),
        alpha=rng.normal(0.5, scale, size=kalpha),
        delta=rng.normal(-1.0, scale, size=kdelta),
    )
    n = rng.integers(0, max_n + 1, size=(M, p))
    x = rng.binomial(n, rng.uniform(0.1, 0.9, size=(M, p)))
    return params, RepeatedCountData(x, n), designs


def richardson(f, x, h=1e-3):
    """Central-difference Jacobian of ``f`` at ``x`` with one Richardson step (O(h^4))."""
    x = np.asarray(x, dtype=float)
    f0 = np.asarray(f(x), dtype=float)
    out = np.empty(f0.shape + x.shape)
    for i in range(x.size):
        e = np.zeros_like(x)
        e[i] = 1.0

        def cd(step):
            return (np.asarray(f(x + step * e)) - np.asarray(f(x - step * e))) / (2 * step)

        out[..., i] = (4.0 * cd(h / 2) - cd(h)) / 3.0
    return out
