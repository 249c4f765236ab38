import os
from pathlib import Path

import numpy as np
import pytest

from noisylab.data import make_blobs, split
from noisylab.noise import build_transition_matrix, corrupt_labels

MNIST_DIR = Path(os.environ.get("NOISYLAB_MNIST_DIR", "data/mnist"))


def central_diff(f, x, h=1e-5):
    """Central finite-difference gradient of scalar ``f`` at array ``x``."""
    x = np.array(x, dtype=np.float64)
    grad = np.zeros_like(x)
    flat = x.reshape(-1)
    g = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        up = f(x)
        flat[i] = orig - h
        down = f(x)
        flat[i] = orig
        g[i] = (up - down) / (2 * h)
    return grad


def max_rel_err(analytic, numeric, floor=1e-6):
    a = np.asarray(analytic, dtype=np.float64).ravel()
    n = np.asarray(numeric, dtype=np.float64).ravel()
    scale = np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)
    return float(np.max(np.abs(a - n) / scale))


def random_simplex(rng, rows, cols, floor=0.02):
    x = rng.dirichlet(np.ones(cols), size=rows) + floor
    return x / x.sum(axis=1, keepdims=True)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def noisy_blobs():
    ds = make_blobs(60, 3, 2, 0.3, seed=5)
    train, test = split(ds, 0.75, seed=5)
    record = corrupt_labels(train.labels, build_transition_matrix("symmetric", 0.4, 3), seed=5)
    return train, test, record


def mnist_available():
    return all((MNIST_DIR / n).is_file() for n in (
        "train-images-idx3-ubyte", "train-labels-idx1-ubyte",
        "t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte"))


# criterion number -> (passed or None when skipped, detail); filled by test_acceptance
ACCEPTANCE = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE):
        passed, detail = ACCEPTANCE[number]
        status = "SKIP" if passed is None else ("PASS" if passed else "FAIL")
        terminalreporter.write_line(f"criterion {number:2d}: {status}  {detail}")
