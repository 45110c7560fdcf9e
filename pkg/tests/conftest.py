import numpy as np
import pytest
from PIL import Image

from zerodce.network import ArchConfig, NetworkWeights, init_weights


def save_png(path, rgb):
    Image.fromarray(np.asarray(rgb, dtype=np.uint8)).save(path)
    return path


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def default_weights():
    return init_weights(ArchConfig(), seed=0)


@pytest.fixture
def identity_weights():
    """Default weights with the last layer zeroed, so every map is 0."""
    w = init_weights(ArchConfig(), seed=3)
    kernels, biases = w.arrays()[0::2], w.arrays()[1::2]
    kernels[-1] = np.zeros_like(kernels[-1])
    biases[-1] = np.zeros_like(biases[-1])
    return NetworkWeights.from_arrays(w.config, kernels, biases)


@pytest.fixture
def gradient_png(tmp_path):
    h, w = 37, 53
    yy, xx = np.mgrid[0:h, 0:w]
    rgb = np.stack([xx * 255 // (w - 1), yy * 255 // (h - 1), (xx + yy) % 256], axis=-1)
    return save_png(tmp_path / "ramp.png", rgb)


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
