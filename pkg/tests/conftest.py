import pytest

ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def acceptance_report():
    def report(number: int, title: str, ok: bool, detail: str, seconds: float, limit: float):
        status = "PASS" if ok and seconds < limit else "FAIL"
        line = f"[{status}] criterion {number:2d}: {title} ({detail}; {seconds:.1f}s of {limit:g}s)"
        ACCEPTANCE_LINES.append(line)
        print(line)
        assert ok, line
        assert seconds < limit, line

    return report


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split("criterion")[1].split(":")[0])):
            terminalreporter.write_line(line)
