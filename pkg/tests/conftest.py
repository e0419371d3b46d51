import importlib.util
import os
from pathlib import Path

import numpy as np
import pytest

from landscape_hessian import data

ROOT = Path(__file__).resolve().parent.parent
IMAGES = "train-images-idx3-ubyte"
LABELS = "train-labels-idx1-ubyte"

# criterion lines collected by test_acceptance, echoed in the terminal summary
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture
def record_criterion():
    def record(label: str, passed: bool, detail: str) -> None:
        line = f"{'PASS' if passed else 'FAIL'} {label}: {detail}"
        ACCEPTANCE_LINES.append(line)
        print(line)

    return record


def _load_script(name: str):
    spec = importlib.util.spec_from_file_location(name, ROOT / "scripts" / f"{name}.py")
    module = importlib.util.module_from_spec(spec)
    spec.loader.exec_module(module)
    return module


@pytest.fixture(scope="session")
def mnist_paths(tmp_path_factory):
    """IDX image/label paths for real MNIST digits.

    Looks under ``$LANDSCAPE_DATA_DIR/mnist`` first, then builds the files from
    the sample shipped with mlxtend, and skips when neither is available.
    """
    root = os.environ.get(data.DATA_DIR_ENV)
    if root:
        d = Path(root) / "mnist"
        if (d / IMAGES).exists() and (d / LABELS).exists():
            return d / IMAGES, d / LABELS
    if importlib.util.find_spec("mlxtend") is None:
        pytest.skip("no MNIST files and mlxtend is not installed")
    return _load_script("make_mnist_subset").build(tmp_path_factory.mktemp("mnist"))


@pytest.fixture(scope="session")
def mnist_2000(mnist_paths):
    return data.load_idx(*mnist_paths, limit=2000, name="mnist-2000")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
