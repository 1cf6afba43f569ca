import numpy as np
import pytest

from hugesture.echosim import GestureScript, Scatterer, render_echo
from hugesture.params import default_params
from hugesture.rdproc import FrameProcessor


@pytest.fixture(scope="session")
def params():
    return default_params()


@pytest.fixture(scope="session")
def processor(params):
    return FrameProcessor(params)


def static_script(scatterers, frames=1, label="finger-press"):
    """Script holding the same scatterers in every frame."""
    scatterers = tuple(s if isinstance(s, Scatterer) else Scatterer(*s) for s in scatterers)
    return GestureScript(label, frames, tuple(scatterers for _ in range(frames)))


def render_static(params, scatterers, frames=1, snr_db=None, seed=0, **kw):
    return render_echo(static_script(scatterers, frames), params, snr_db, seed, **kw)


def on_grid_range(params, k):
    """Range whose round-trip delay is exactly k fast-time samples."""
    return k * params.sound_speed / (2 * params.fast_time_rate)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
