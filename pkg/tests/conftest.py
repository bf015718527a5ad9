import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest

REPO = Path(__file__).resolve().parents[1]
sys.path.insert(0, str(REPO / "src"))

from shakeout.data import load_mnist_idx  # noqa: E402


@pytest.fixture(scope="session")
def data_dir() -> Path:
    """MNIST IDX quartet; built once via scripts/fetch_mnist.py if missing."""
    d = REPO / "data"
    if not (d / "train-images-idx3-ubyte").exists():
        subprocess.run(
            [sys.executable, str(REPO / "scripts" / "fetch_mnist.py"), "--out", str(d)],
            check=True,
        )
    return d


@pytest.fixture(scope="session")
def mnist_train(data_dir):
    return load_mnist_idx(data_dir / "train-images-idx3-ubyte",
                          data_dir / "train-labels-idx1-ubyte", split="train")


@pytest.fixture(scope="session")
def mnist_test(data_dir):
    return load_mnist_idx(data_dir / "t10k-images-idx3-ubyte",
                          data_dir / "t10k-labels-idx1-ubyte", split="test")


@pytest.fixture(scope="session")
def cache_dir() -> Path:
    """Disk cache for expensive trained models shared between tests."""
    d = REPO / "tests" / "_cache"
    d.mkdir(exist_ok=True)
    return d


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
