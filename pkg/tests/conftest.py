import numpy as np
import pytest

from mslod import fem
from mslod.mesh import build_uniform_mesh, refine


@pytest.fixture(scope="session")
def unit_coefficient():
    return fem.CoefficientField.constant(1.0)


@pytest.fixture(scope="session")
def pair_2_4():
    return refine(build_uniform_mesh(2), 2)


@pytest.fixture(scope="session")
def ops_2_4(pair_2_4, unit_coefficient):
    S = fem.assemble_stiffness(pair_2_4.fine, unit_coefficient)
    M = fem.assemble_mass(pair_2_4.fine)
    return S, M


def rough_coefficient(epsilon_exponent, contrast=10.0, seed=2024):
    """Fixed-seed log-uniform field with the given contrast."""
    rng = np.random.default_rng(seed)
    n = 2 ** epsilon_exponent
    lo, hi = np.log(1.0 / np.sqrt(contrast)), np.log(np.sqrt(contrast))
    values = np.clip(np.exp(rng.uniform(lo, hi, (n, n))), np.exp(lo), np.exp(hi))
    return fem.CoefficientField(epsilon_exponent, values, float(np.exp(lo)), float(np.exp(hi)))
