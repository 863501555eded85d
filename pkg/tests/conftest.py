import numpy as np
import pytest

from ugp.field import FieldConfig, generate_shadowing_field


@pytest.fixture(scope="session")
def default_config():
    return FieldConfig()


@pytest.fixture(scope="session")
def small_config():
    # 1 m grid keeps dense factorizations cheap
    return FieldConfig(extent_min=(20.0,), extent_max=(120.0,), resolution=1.0)


@pytest.fixture(scope="session")
def default_field(default_config):
    return generate_shadowing_field(default_config, np.random.default_rng(0))


@pytest.fixture(scope="session")
def small_field(small_config):
    return generate_shadowing_field(small_config, np.random.default_rng(1))


def pytest_terminal_summary(terminalreporter):
    import sys

    for mod in list(sys.modules.values()):
        results = getattr(mod, "ACCEPTANCE_RESULTS", None)
        if results:
            terminalreporter.section("acceptance criteria")
            for key in sorted(results):
                terminalreporter.write_line(results[key])
            break
