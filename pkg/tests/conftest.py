import sys

import numpy as np
import pytest

from floorloc.geo import FloorplanRaster, GeoRegistration, PixelClass


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    mod = sys.modules.get("test_acceptance") or sys.modules.get("tests.test_acceptance")
    results = getattr(mod, "RESULTS", None) if mod else None
    if results:
        terminalreporter.section("acceptance criteria")
        for line in results:
            terminalreporter.write_line(line)


@pytest.fixture
def identity_reg():
    return GeoRegistration(origin_world=np.zeros(2), pixels_per_meter=2.5)


@pytest.fixture
def open_plan(identity_reg):
    """All-corridor 625x625 plan covering a 250x250 m area at 2.5 px/m."""
    rgb = np.full((625, 625, 3), 255, dtype=np.uint8)
    classes = np.full((625, 625), PixelClass.CORRIDOR, dtype=np.uint8)
    return FloorplanRaster(classes=classes, rgb=rgb, registration=identity_reg,
                           legend={PixelClass.CORRIDOR: (255, 255, 255),
                                   PixelClass.BACKGROUND: (0, 0, 0)})
