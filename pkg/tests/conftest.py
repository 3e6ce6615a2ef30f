import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from polcvnn.synth import generate_scene, separated_classes  # noqa: E402


def random_complex(rng, shape, scale=1.0):
    return scale * (rng.standard_normal(shape) + 1j * rng.standard_normal(shape))


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture(scope="session")
def small_scene():
    """3-class 24x24 stripes scene."""
    return generate_scene(separated_classes(3), "stripes", 24, 24, seed=3)


def pytest_terminal_summary(terminalreporter):
    module = sys.modules.get("test_acceptance")
    if module and module.VERDICTS:
        terminalreporter.section("acceptance criteria")
        for line in sorted(module.VERDICTS):
            terminalreporter.write_line(line)
