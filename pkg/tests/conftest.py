import numpy as np
import pytest

from pfmprune.gcn import GcnArchitecture, build_model


def central_diff(f, x, eps=1e-5):
    """Independent central-difference gradient of scalar f over array x."""
    x = np.array(x, dtype=np.float64)
    g = np.zeros_like(x)
    flat, gf = x.reshape(-1), g.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        up = f(x)
        flat[i] = orig - eps
        down = f(x)
        flat[i] = orig
        gf[i] = (up - down) / (2 * eps)
    return g


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def toy_arch():
    return GcnArchitecture(n_nodes=4, in_channels=6, heads=1, conv_filters=8, n_classes=3)


@pytest.fixture
def small_model():
    arch = GcnArchitecture(n_nodes=5, in_channels=4, heads=2, conv_filters=3, n_classes=3)
    return build_model(arch, seed=7)


# One "PASS/FAIL" line per acceptance criterion, echoed after the run.
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
