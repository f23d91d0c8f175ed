from pathlib import Path

import numpy as np
import pytest

from ecnn import data

FIXTURE = Path(__file__).parent / "data" / "fer_fixture.csv"


@pytest.fixture
def fixture_csv():
    return FIXTURE


@pytest.fixture(scope="session")
def fixture_splits():
    return data.load_fer_csv(FIXTURE)


@pytest.fixture
def rng():
    return np.random.default_rng(0)


def numeric_grad_array(f, x, dout, h=1e-5):
    """Central-difference gradient of sum(f(x) * dout) w.r.t. x (x modified in place)."""
    grad = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"], op_flags=["readwrite"])
    while not it.finished:
        ix = it.multi_index
        old = x[ix]
        x[ix] = old + h
        pos = f(x).copy()
        x[ix] = old - h
        neg = f(x).copy()
        x[ix] = old
        grad[ix] = np.sum((pos - neg) * dout) / (2 * h)
        it.iternext()
    return grad


def numeric_grad_scalar(f, x, h=1e-5):
    grad = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"], op_flags=["readwrite"])
    while not it.finished:
        ix = it.multi_index
        old = x[ix]
        x[ix] = old + h
        pos = f(x)
        x[ix] = old - h
        neg = f(x)
        x[ix] = old
        grad[ix] = (pos - neg) / (2 * h)
        it.iternext()
    return grad


def rel_error(a, b):
    return float(np.max(np.abs(a - b) / np.maximum(np.abs(a) + np.abs(b), 1e-8)))
