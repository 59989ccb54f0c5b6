import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).resolve().parent.parent))

from bundle_fields import build_bundle  # noqa: E402
from torus_geometry import TorusGeometry  # noqa: E402


@pytest.fixture
def line_geometry():
    return TorusGeometry(1, 16)


@pytest.fixture
def surface_geometry():
    return TorusGeometry(2, 16)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def split_spec(line_geometry):
    return build_bundle(line_geometry, (1, 1), (1, -1), "direct_sum")


@pytest.fixture
def extension_spec(line_geometry):
    return build_bundle(line_geometry, (1, 1), (0, 1), "extension", seed=3, amplitude=0.5)


@pytest.fixture(autouse=True)
def isolated_output(tmp_path, monkeypatch):
    monkeypatch.setenv("HEATFLOW_OUT_DIR", str(tmp_path / "runs"))


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: full preset runs on the 32-point extension bundles")
