import pytest

from rscaption import _accel

KERNELS = ("component_boxes", "greedy_dedup", "best_ranks")
ACCEPTANCE_LINES: list[str] = []


@pytest.fixture(params=["numba", "numpy"])
def kernel_backend(request, monkeypatch):
    """Run the test once per kernel implementation."""
    if request.param == "numba" and not _accel.NUMBA_AVAILABLE:
        pytest.skip("numba not installed")
    for name in KERNELS:
        monkeypatch.setattr(_accel, name, getattr(_accel, f"{name}_{request.param}"))
    return request.param


@pytest.fixture
def report_criterion():
    def report(number: int, title: str, ok: bool, detail: str = ""):
        line = f"criterion {number:2d} {'PASS' if ok else 'FAIL'}  {title}" + (f"  ({detail})" if detail else "")
        print(line)
        ACCEPTANCE_LINES.append(line)
        return ok

    return report


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
