from __future__ import annotations

import warnings

import numpy as np
import pytest

from noisychain.chain import ChainState, build_phi, sample_disorder
from noisychain.errors import DegeneracyWarning
from noisychain.quadforms import QuadraticForm


def random_form(rng: np.random.Generator, n: int, scale: float = 1.0) -> QuadraticForm:
    return QuadraticForm(
        scale * rng.standard_normal((n, n)),
        scale * rng.standard_normal((n, n)),
        scale * rng.standard_normal((n, n)),
        float(rng.standard_normal()),
    )


def random_state(rng: np.random.Generator, n: int, rows: int | None = None) -> ChainState:
    shape = (n,) if rows is None else (rows, n)
    return ChainState(rng.standard_normal(shape), rng.standard_normal(shape))


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture
def chain8():
    d = sample_disorder(8, 1.0, 2.0, seed=11)
    return d, build_phi(d, "fixed")


@pytest.fixture(autouse=True)
def _quiet_degeneracy():
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", DegeneracyWarning)
        yield


def pytest_terminal_summary(terminalreporter):
    from test_acceptance import RESULTS

    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in RESULTS:
            terminalreporter.write_line(line)
