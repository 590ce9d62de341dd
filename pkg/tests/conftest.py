"""Shared fixtures.

Real MNIST comes from the 5,000-image sample bundled with mlxtend (500 per
digit). Each digit is split 400 train / 100 test after a fixed-seed shuffle,
and the splits are written out as IDX files so the whole ingest path is
exercised.
"""

from pathlib import Path

import numpy as np
import pytest

from plae.data import write_idx

MNIST_SPLIT_SEED = 12345


def _mnist_arrays():
    mlxtend_data = pytest.importorskip("mlxtend.data")
    x, y = mlxtend_data.mnist_data()
    x = x.reshape(-1, 28, 28).astype(np.uint8)
    y = y.astype(np.uint8)
    rng = np.random.default_rng(MNIST_SPLIT_SEED)
    train_idx, test_idx = [], []
    for digit in range(10):
        idx = rng.permutation(np.flatnonzero(y == digit))
        train_idx.append(idx[:400])
        test_idx.append(idx[400:500])
    # interleave classes so any prefix is roughly balanced
    train_idx = rng.permutation(np.concatenate(train_idx))
    test_idx = rng.permutation(np.concatenate(test_idx))
    return (x[train_idx], y[train_idx]), (x[test_idx], y[test_idx])


@pytest.fixture(scope="session")
def mnist_idx(tmp_path_factory) -> dict:
    """Paths to train/test IDX files built from the mlxtend MNIST sample."""
    (trx, try_), (tex, tey) = _mnist_arrays()
    root = tmp_path_factory.mktemp("mnist")
    paths = {
        "train_images": root / "train-images-idx3-ubyte",
        "train_labels": root / "train-labels-idx1-ubyte",
        "test_images": root / "t10k-images-idx3-ubyte",
        "test_labels": root / "t10k-labels-idx1-ubyte",
    }
    write_idx(paths["train_images"], paths["train_labels"], trx, try_)
    write_idx(paths["test_images"], paths["test_labels"], tex, tey)
    return paths


def write_config(path: Path, text: str, **values) -> Path:
    lines = [text.strip()] + [f"{k} = {v}" for k, v in values.items()]
    path.write_text("\n".join(lines) + "\n")
    return path


@pytest.fixture
def make_config(tmp_path):
    def make(name="run.cfg", text="", **values):
        return write_config(tmp_path / name, text, **values)

    return make


# --------------------------------------------------------------------------- acceptance reporting

ACCEPTANCE_LINES: list = []


@pytest.fixture
def acceptance(request):
    """``acceptance(cid, passed, detail)`` prints one PASS/FAIL line and keeps it for the summary."""
    capman = request.config.pluginmanager.getplugin("capturemanager")

    def report(cid, passed: bool, detail: str, gated: bool = True):
        tag = "PASS" if passed else "FAIL"
        suffix = "" if gated else " (reported, not gated)"
        line = f"[{tag}] criterion {cid:>2}: {detail}{suffix}"
        ACCEPTANCE_LINES.append(line)
        with capman.global_and_fixture_disabled():
            print("\n" + line, flush=True)
        return passed

    return report


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
