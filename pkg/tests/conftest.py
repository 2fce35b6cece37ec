import os
from pathlib import Path

import pytest

from sparse_evo.tasks.classify import DATA_ENV


def _has_mnist(root: Path) -> bool:
    return any((root / "mnist").glob("train-images-idx3-ubyte*"))


@pytest.fixture(scope="session")
def mnist_dir(tmp_path_factory) -> str:
    """Directory holding ``mnist/`` IDX files; built from the mlxtend sample if needed."""
    env = os.environ.get(DATA_ENV)
    if env and _has_mnist(Path(env)):
        return env
    pytest.importorskip("mlxtend")
    from sparse_evo.tasks.mnist_subset import prepare_mnist_subset

    root = tmp_path_factory.mktemp("data")
    prepare_mnist_subset(root)
    return str(root)


ACCEPTANCE_LINES: dict[int, str] = {}


def record_acceptance(number: int, passed: bool, detail: str):
    ACCEPTANCE_LINES[number] = f"[{'PASS' if passed else 'FAIL'}] criterion {number:>2}: {detail}"


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(ACCEPTANCE_LINES[k])
