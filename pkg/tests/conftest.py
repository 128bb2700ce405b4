import numpy as np
import pytest

from digrap.models import Batch, ModelSpec
from digrap.paramspace import capture_snapshot, init_params


@pytest.fixture
def mlp_spec():
    return ModelSpec.mlp(4, (8,), 3)


@pytest.fixture
def mlp_space(mlp_spec):
    return init_params(mlp_spec.layer_sizes, seed=3)


@pytest.fixture
def snap_space(mlp_space):
    """A space whose values have drifted away from the captured snapshot."""
    s = capture_snapshot(mlp_space)
    rng = np.random.default_rng(11)
    for g in s.groups:
        g.values += 0.05 * rng.standard_normal(g.size)
    return s


@pytest.fixture
def small_batch():
    rng = np.random.default_rng(5)
    return Batch(rng.standard_normal((6, 4)), rng.integers(0, 3, 6))


ACCEPTANCE = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE, key=lambda s: int(s.split()[0][1:])):
            terminalreporter.write_line(line)
