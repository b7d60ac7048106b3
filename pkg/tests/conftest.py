import pytest

from methodtagger import crf

ACCEPTANCE_LINES = []


@pytest.fixture(params=crf.available_backends())
def backend(request):
    previous = crf.BACKEND
    crf.set_backend(request.param)
    yield request.param
    crf.set_backend(previous)


@pytest.fixture
def record_criterion():
    def record(number, passed, detail):
        line = f"[{'PASS' if passed else 'FAIL'}] criterion {number:>2}: {detail}"
        ACCEPTANCE_LINES.append(line)
        print(line)
    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split("criterion")[1].split(":")[0])):
            terminalreporter.write_line(line)
