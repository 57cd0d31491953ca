import pytest

_verdicts: dict[int, str] = {}


class Verdicts:
    """Collects one line per acceptance criterion for the terminal summary."""

    def record(self, number, title, passed, detail=""):
        _verdicts[number] = f"criterion {number:>2} {'PASS' if passed else 'FAIL'}  {title}  {detail}".rstrip()
        print(_verdicts[number])
        return passed


@pytest.fixture(scope="session")
def verdicts():
    return Verdicts()


def pytest_terminal_summary(terminalreporter):
    if not _verdicts:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_verdicts):
        terminalreporter.write_line(_verdicts[number])
