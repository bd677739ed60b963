import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from probescope.geometry import Disk, ImpedanceSpec, ObstacleSpec
from probescope.mesh import mesh_domain
from probescope.probe import ProbeContext

settings.register_profile("default", deadline=None, max_examples=25,
                          suppress_health_check=[HealthCheck.too_slow, HealthCheck.function_scoped_fixture])
settings.load_profile("default")

UNIT = Disk((0.0, 0.0), 1.0)


@pytest.fixture(scope="session")
def unit_disk():
    return UNIT


@pytest.fixture(scope="session")
def disk_obstacle():
    return ObstacleSpec((Disk((0.1, 0.05), 0.3),), ImpedanceSpec(0.5, 1.0))


@pytest.fixture(scope="session")
def coarse_mesh(disk_obstacle):
    return mesh_domain(UNIT, disk_obstacle, 0.08)


@pytest.fixture(scope="session")
def free_mesh():
    return mesh_domain(UNIT, None, 0.06)


@pytest.fixture(scope="session")
def bench_ctx():
    """Unit disk, centred obstacle r = 0.3 with small impedance; the smallness conditions hold."""
    obs = ObstacleSpec((Disk((0.0, 0.0), 0.3),), ImpedanceSpec(0.0, 0.01))
    return ProbeContext(UNIT, obs, 0.5, h=0.05, h_interface=0.02)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = getattr(config, "_acceptance_lines", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
