import json
from pathlib import Path

import numpy as np
import pytest

from osad import _pykernels

DATA = Path(__file__).parent / "data"

try:
    from osad import _ckernels
except ImportError:  # extension not built
    _ckernels = None

BACKENDS = [pytest.param(_pykernels, id="python")]
if _ckernels is not None:
    BACKENDS.append(pytest.param(_ckernels, id="cython"))


@pytest.fixture(params=BACKENDS)
def kernels(request, monkeypatch):
    """Run a test once per available kernel backend."""
    import osad.evaluation
    import osad.geometry

    monkeypatch.setattr(osad.geometry, "kernels", request.param)
    monkeypatch.setattr(osad.evaluation, "kernels", request.param)
    return request.param


@pytest.fixture
def fixture_data():
    return json.loads((DATA / "three_scene_fixture.json").read_text())


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter):
    try:
        from test_acceptance import RESULTS
    except ImportError:
        return
    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in RESULTS:
            terminalreporter.write_line(line)
