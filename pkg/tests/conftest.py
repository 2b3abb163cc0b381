import os
from pathlib import Path

import pytest


@pytest.fixture(scope="session")
def cal_cache() -> Path:
    """Calibration cache shared by the slow tests (records are checksummed and context-checked)."""
    root = Path(os.environ.get("SHAPEBAND_TEST_CACHE", Path(__file__).parent.parent / ".cache"))
    root.mkdir(parents=True, exist_ok=True)
    return root
