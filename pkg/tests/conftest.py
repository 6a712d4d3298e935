import numpy as np
import pytest

from tsgemm.core import Matrix, Precision, load_catalog


@pytest.fixture(scope="session")
def catalog():
    return load_catalog()


@pytest.fixture(scope="session")
def k40c(catalog):
    return catalog["K40c"]


@pytest.fixture(scope="session")
def m40(catalog):
    return catalog["M40"]


@pytest.fixture(scope="session")
def p100(catalog):
    return catalog["P100"]


@pytest.fixture(scope="session")
def v100(catalog):
    return catalog["V100"]


@pytest.fixture(scope="session")
def a100(catalog):
    return catalog["A100"]


def random_problem(m, k, n, precision=Precision.DOUBLE, seed=0):
    rng = np.random.default_rng(seed)
    A = Matrix.random(m, k, precision, rng)
    B = Matrix.random(k, n, precision, rng)
    C0 = Matrix.zeros(m, n, precision)
    return A, B, C0
