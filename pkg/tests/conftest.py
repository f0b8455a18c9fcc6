import numpy as np
import pytest

from convexity_lab.data import write_idx
from convexity_lab.net import fixture_t1


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def t1():
    return fixture_t1()


@pytest.fixture(scope="session")
def mnist_idx(tmp_path_factory):
    """IDX files built from the 5000-image MNIST subset shipped with mlxtend, shuffled with a fixed seed."""
    mlx = pytest.importorskip("mlxtend.data")
    X, y = mlx.mnist_data()
    perm = np.random.default_rng(2024).permutation(X.shape[0])
    d = tmp_path_factory.mktemp("mnist")
    images, labels = d / "images.idx3-ubyte", d / "labels.idx1-ubyte"
    write_idx(images, labels, X[perm].reshape(-1, 28, 28).astype(np.uint8), y[perm].astype(np.uint8))
    return images, labels


_ACCEPTANCE = []


@pytest.fixture
def criterion(request):
    """Record a named acceptance result; the terminal summary prints one line per criterion."""

    def record(number, title, passed, detail=""):
        _ACCEPTANCE.append((number, title, bool(passed), detail))
        assert passed, f"criterion {number} ({title}) failed: {detail}"

    return record


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number, title, passed, detail in sorted(_ACCEPTANCE, key=lambda r: r[0]):
        terminalreporter.write_line(f"{'PASS' if passed else 'FAIL'} criterion {number:>2}: {title} | {detail}")
