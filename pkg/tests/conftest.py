import numpy as np
import pytest

from lensrect.scenes import make_scene
from lensrect.synthesis import group_rng, synthesize_group


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    """Echo the acceptance-criteria verdict lines into the terminal report."""
    import sys
    test_acceptance = next(
        (m for name, m in sys.modules.items()
         if name.rsplit(".", 1)[-1] == "test_acceptance" and m is not None
         and getattr(m, "VERDICTS", None)),
        None,
    )
    if test_acceptance is not None:
        terminalreporter.section("acceptance criteria")
        for line in test_acceptance.VERDICTS:
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def scene():
    return make_scene(42)


@pytest.fixture(scope="session")
def small_scene():
    return make_scene(3, size=65)


@pytest.fixture(scope="session")
def group(scene):
    """One synthesized six-image group with known parameters."""
    return synthesize_group(scene, group_rng(0, 0))
