import numpy as np
import pytest

from parasource import Coefficients, assemble, build_unit_square_mesh


@pytest.fixture(scope="session")
def mesh2():
    return build_unit_square_mesh(2)


@pytest.fixture(scope="session")
def op2(mesh2):
    return assemble(mesh2, Coefficients.constants(k=1.0, c=10.0, mu=0.0))


@pytest.fixture(scope="session")
def mesh10():
    return build_unit_square_mesh(10)


@pytest.fixture(scope="session")
def op10(mesh10):
    return assemble(mesh10, Coefficients.constants(k=1.0, c=10.0, mu=0.0))


@pytest.fixture()
def rng():
    return np.random.default_rng(42)
