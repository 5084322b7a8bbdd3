import numpy as np
import pytest

from infoilqr.plants import Cartpole, LinearPlant, Pendulum


@pytest.fixture
def pendulum():
    return Pendulum()


@pytest.fixture
def cartpole():
    return Cartpole()


@pytest.fixture
def stable_linear_plant():
    a = np.array([[1.0, 0.1], [-0.02, 0.97]])
    b = np.array([[0.0], [0.1]])
    return LinearPlant(a, b)


def rel_err(value, reference):
    return abs(value - reference) / max(abs(reference), 1e-300)
