"""Shared fixtures: builtin model pairs and a fast RNG helper."""

import numpy as np
import pytest

from adhmc import make_kinetic, make_potential

BUILTIN_PAIRS = [
    ("gauss-iso", "kin-gauss"),
    ("gauss-iso", "kin-logcosh"),
    ("gauss-aniso", "kin-gauss"),
    ("logistic-ridge", "kin-gauss"),
    ("logistic-ridge", "kin-logcosh"),
]


def models(potential_id: str, kinetic_id: str, dim: int):
    return make_potential(potential_id, dim), make_kinetic(kinetic_id, dim)


@pytest.fixture
def rng():
    return np.random.default_rng(20240817)
