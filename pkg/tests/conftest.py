import struct
from pathlib import Path

import numpy as np
import pytest

from genattrib.network import Layer, MlpGenerator

ROOT = Path(__file__).resolve().parents[1]
MNIST_DIR = ROOT / "data" / "mnist"


def random_network(rng, dims, activations=None, scale=1.0, id="net"):
    """Small network with normal weights and biases."""
    acts = activations or ["sigmoid"] * (len(dims) - 1)
    layers = [Layer(scale * rng.standard_normal((o, i)), scale * rng.standard_normal(o), a)
              for i, o, a in zip(dims, dims[1:], acts)]
    return MlpGenerator(tuple(layers), id=id)


def idx_pair_bytes(images_u8, labels, magic_images=2051, magic_labels=2049):
    n, rows, cols = images_u8.shape
    img = struct.pack(">IIII", magic_images, n, rows, cols) + images_u8.astype(np.uint8).tobytes()
    lab = struct.pack(">II", magic_labels, len(labels)) + np.asarray(labels, np.uint8).tobytes()
    return img, lab


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def tiny_idx(tmp_path):
    """Two 28x28 images of constant bytes 0 and 255 with labels 3 and 7."""
    images = np.stack([np.zeros((28, 28), np.uint8), np.full((28, 28), 255, np.uint8)])
    img, lab = idx_pair_bytes(images, [3, 7])
    ip, lp = tmp_path / "img.idx", tmp_path / "lab.idx"
    ip.write_bytes(img)
    lp.write_bytes(lab)
    return ip, lp, img, lab


@pytest.fixture(scope="session")
def mnist_dir():
    if not (MNIST_DIR / "train-images-idx3-ubyte.gz").exists():
        pytest.skip("MNIST files not present")
    return MNIST_DIR


_CRITERIA = {}


@pytest.fixture(scope="session")
def criteria():
    """Criterion number -> one-line verdict, echoed in the terminal summary."""
    return _CRITERIA


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_CRITERIA):
        terminalreporter.write_line(_CRITERIA[n])
