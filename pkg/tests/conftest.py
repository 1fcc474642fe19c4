import pytest

from helpers import make_pattern_dataset


@pytest.fixture(scope="session")
def pattern_root(tmp_path_factory):
    return make_pattern_dataset(tmp_path_factory.mktemp("patterns"))
