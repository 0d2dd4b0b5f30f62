import os
from pathlib import Path

import numpy as np
import pytest

MNIST_DIR = Path(os.environ.get("PRIVPART_MNIST", "/root/data/mnist"))


def mnist_available() -> bool:
    return all((MNIST_DIR / f"{p}-{k}-idx{n}-ubyte").exists() or
               (MNIST_DIR / f"{p}-{k}-idx{n}-ubyte.gz").exists()
               for p in ("train", "t10k") for k, n in (("images", 3), ("labels", 1)))


requires_mnist = pytest.mark.skipif(not mnist_available(),
                                    reason=f"MNIST files not found in {MNIST_DIR}")


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def numeric_grad(f, x: np.ndarray, step: float = 1e-6) -> np.ndarray:
    """Central-difference gradient of a scalar function of one float64 array."""
    x = np.array(x, dtype=np.float64)
    g = np.zeros_like(x)
    for idx in np.ndindex(x.shape):
        old = x[idx]
        x[idx] = old + step
        hi = f(x)
        x[idx] = old - step
        lo = f(x)
        x[idx] = old
        g[idx] = (hi - lo) / (2 * step)
    return g


ACCEPTANCE_LINES: list[str] = []


def record_criterion(number: int, passed: bool, detail: str) -> None:
    line = f"criterion {number:>2}: {'PASS' if passed else 'FAIL'}  {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line, flush=True)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
