import numpy as np
import pytest

from qsr import ClusteringConfig, synth_dataset


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def fast_cfg():
    return ClusteringConfig(iterations=8, seed=0)


@pytest.fixture(scope="session")
def small_clustered():
    """4000 clustered points in 16-D, split into train / base / queries."""
    x = synth_dataset(4000, 16, "clustered", seed=3, centers=40, spread=0.3).data
    return x[:1500], x[1500:3900], x[3900:]


def unit_rows(a):
    a = np.asarray(a, dtype=np.float64)
    return a / np.linalg.norm(a, axis=-1, keepdims=True)


ACCEPTANCE_LINES: list[str] = []


def report(criterion: str, ok: bool, detail: str) -> None:
    line = f"criterion {criterion}: {'PASS' if ok else 'FAIL'}  {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
