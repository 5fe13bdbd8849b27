import pytest

from voltguard import GovernorConfig, build_lenet, precompute_weight_checksums


@pytest.fixture(scope="session")
def lenet():
    return build_lenet(1)


@pytest.fixture(scope="session")
def lenet_cks(lenet):
    return precompute_weight_checksums(lenet)


@pytest.fixture(scope="session")
def gov_cfg():
    return GovernorConfig(parallel=False)
