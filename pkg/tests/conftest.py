import pytest
from hypothesis import settings

from stefan_gauge.field_core import build_grid, unit_disk

settings.register_profile("default", deadline=None, max_examples=25)
settings.load_profile("default")


@pytest.fixture(scope="session")
def disk64():
    return build_grid(unit_disk(), 64, 64)


@pytest.fixture(scope="session")
def disk32():
    return build_grid(unit_disk(), 32, 32)


@pytest.fixture(scope="session")
def coupled():
    """The shared coupled run (default configuration, extended past T_end)."""
    from stefan_gauge.acceptance import coupled_run

    return coupled_run()
