import pytest

from tiltvae.tilted import TiltedPrior


@pytest.fixture(scope="session")
def prior_10_10():
    return TiltedPrior.fit(10.0, 10)


@pytest.fixture(scope="session")
def prior_15_10():
    return TiltedPrior.fit(15.0, 10)


@pytest.fixture(scope="session")
def prior_0_10():
    return TiltedPrior.fit(0.0, 10)
