import numpy as np
import pytest

from lidarseg.synthetic import write_kitti_layout

ACCEPTANCE_RESULTS: list[tuple[int, bool, str]] = []


def record_acceptance(number: int, ok: bool, detail: str) -> None:
    ACCEPTANCE_RESULTS.append((number, bool(ok), detail))


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for number, ok, detail in sorted(ACCEPTANCE_RESULTS):
        terminalreporter.write_line(f"criterion {number:>2}: {'PASS' if ok else 'FAIL'}  {detail}")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def kitti_dir(tmp_path_factory):
    """Six-frame synthetic dataset in KITTI layout, shared read-only."""
    root = tmp_path_factory.mktemp("kitti")
    write_kitti_layout(root, 6, seed=5)
    return root
