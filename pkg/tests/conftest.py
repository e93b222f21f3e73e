import pytest

from ecmsketch import kernels

IMPLS = kernels.available()

# one line per acceptance criterion, echoed in the terminal summary
ACCEPTANCE = []


@pytest.fixture(params=IMPLS)
def impl(request):
    return request.param


@pytest.fixture
def acceptance():
    def record(label, ok, detail):
        line = f"{label}: {'PASS' if ok else 'FAIL'} - {detail}"
        ACCEPTANCE.append(line)
        print(line)
        return ok
    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE, key=lambda s: int(s[2:s.index(":")])):
            terminalreporter.write_line(line)
