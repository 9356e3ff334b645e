import pytest

_CRITERIA: dict[int, tuple[bool, str]] = {}


class CriterionRecorder:
    def __init__(self, number: int):
        self.number = number

    def __call__(self, passed: bool, detail: str):
        _CRITERIA[self.number] = (bool(passed), detail)
        line = f"CRITERION {self.number}: {'PASS' if passed else 'FAIL'} ({detail})"
        print(line)
        assert passed, line


@pytest.fixture
def criterion(request):
    """``criterion(passed, detail)`` records and asserts one acceptance criterion."""
    marker = request.node.get_closest_marker("criterion")
    return CriterionRecorder(marker.args[0])


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n): acceptance criterion number")


def pytest_runtest_makereport(item, call):
    # a test that errors before recording still gets a FAIL line
    marker = item.get_closest_marker("criterion")
    if marker and call.when == "call" and call.excinfo is not None and marker.args[0] not in _CRITERIA:
        _CRITERIA[marker.args[0]] = (False, f"{call.excinfo.typename}: {call.excinfo.value}")


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_CRITERIA):
        passed, detail = _CRITERIA[n]
        terminalreporter.write_line(f"CRITERION {n}: {'PASS' if passed else 'FAIL'} ({detail})")
