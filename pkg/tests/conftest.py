import numpy as np
import pytest

from aniso_heat import (
    BlockPartition,
    SymbolField,
    build_profile,
    fractional_laplacian_measure,
    product_profile,
    sum_of_laplacians_measure,
)


@pytest.fixture(scope="session")
def cauchy_symbol():
    return SymbolField(fractional_laplacian_measure(1, 1.0), 1.0)


@pytest.fixture(scope="session")
def cauchy(cauchy_symbol):
    return build_profile(cauchy_symbol)


@pytest.fixture(scope="session")
def iso2d():
    return build_profile(SymbolField(fractional_laplacian_measure(2, 1.0), 1.0))


@pytest.fixture(scope="session")
def sumlap_symbol():
    return SymbolField(sum_of_laplacians_measure([1, 1], 1.0), 1.0)


@pytest.fixture(scope="session")
def sumlap_grid(sumlap_symbol):
    return build_profile(sumlap_symbol)


@pytest.fixture(scope="session")
def product():
    return product_profile(BlockPartition((1, 1), 1.0))


@pytest.fixture
def rng():
    return np.random.default_rng(7)
