import os
from pathlib import Path

import numpy as np
import pytest

from digitocr.data import Dataset, encode_idx_images, encode_idx_labels, render_digit

ROOT = Path(__file__).resolve().parents[1]


def mnist_dir() -> Path | None:
    """MNIST location from $DIGITOCR_MNIST_DIR, else ./data/mnist if present."""
    env = os.environ.get("DIGITOCR_MNIST_DIR")
    path = Path(env) if env else ROOT / "data" / "mnist"
    names = ("train-images-idx3-ubyte", "t10k-images-idx3-ubyte")
    if all((path / n).exists() or (path / f"{n}.gz").exists() for n in names):
        return path
    return None


def rendered_dataset(n: int, seed: int) -> Dataset:
    rng = np.random.default_rng(seed)
    labels = rng.integers(0, 10, n)
    return Dataset(np.stack([render_digit(int(d), rng) for d in labels]), labels, "rendered")


def write_idx_dir(path: Path, train: Dataset, test: Dataset) -> Path:
    """Store two datasets in the standard four-file MNIST layout."""
    path.mkdir(parents=True, exist_ok=True)
    for prefix, ds in (("train", train), ("t10k", test)):
        pixels = np.floor(ds.images * 255 + 0.5).astype(np.uint8)
        (path / f"{prefix}-images-idx3-ubyte").write_bytes(encode_idx_images(pixels))
        (path / f"{prefix}-labels-idx1-ubyte").write_bytes(encode_idx_labels(ds.labels))
    return path


@pytest.fixture(scope="session")
def small_idx_dir(tmp_path_factory):
    """A tiny stand-in for MNIST built from rendered digits."""
    root = tmp_path_factory.mktemp("idx")
    return write_idx_dir(root, rendered_dataset(600, 1), rendered_dataset(200, 2))


ACCEPTANCE_RESULTS: list[tuple[int, str, bool, str]] = []


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for number, title, ok, note in sorted(ACCEPTANCE_RESULTS):
        line = f"[{'PASS' if ok else 'FAIL'}] {number:>2}. {title}"
        terminalreporter.write_line(line + (f" -- {note}" if note else ""))
