import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from polyct.core import FanBeamGeometry, bundled_phantom, bundled_table, preset_config  # noqa: E402


@pytest.fixture(scope="session")
def small_case():
    """16 x 16, two materials, case (a) noise levels."""
    table = bundled_table(2)
    geom = FanBeamGeometry.default(16, n_views=30, n_det=31)
    phantom = bundled_phantom("phantom_2mat", 16, 2)
    return table, geom, phantom, preset_config("a")


def random_feasible(rng, shape, n):
    w = rng.random(tuple(shape) + (n,)) + 0.05
    return w / w.sum(-1, keepdims=True)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    for name, mod in list(sys.modules.items()):
        if name.endswith("test_acceptance") and getattr(mod, "RESULTS", None):
            terminalreporter.section("acceptance criteria")
            for line in mod.RESULTS:
                terminalreporter.write_line(line)
