import math

import numpy as np
import pytest
from hypothesis import settings

from coldamp import params as P

settings.register_profile("coldamp", deadline=None, max_examples=40)
settings.load_profile("coldamp")


@pytest.fixture(scope="session")
def desk():
    return P.desk_params()


@pytest.fixture(scope="session")
def lab():
    return P.lab_params()


def random_density(dim, rng, rank=None):
    """Random full-rank (or given rank) density matrix."""
    rank = rank or dim
    g = rng.standard_normal((dim, rank)) + 1j * rng.standard_normal((dim, rank))
    rho = g @ g.conj().T
    return rho / np.trace(rho).real


def sem(x):
    x = np.asarray(x, dtype=float)
    return x.std(ddof=1) / math.sqrt(x.size)


# one line per acceptance criterion, echoed at the end of the run
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
