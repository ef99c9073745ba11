import pytest

_CRITERIA = {}


@pytest.fixture
def criterion(capsys):
    """Record and print one PASS/FAIL line for an acceptance criterion."""

    def record(number, ok, detail):
        line = f"criterion {number}: {'PASS' if ok else 'FAIL'}  {detail}"
        _CRITERIA.setdefault(number, []).append((ok, line))
        with capsys.disabled():
            print(f"\n{line}")
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_CRITERIA):
        results = _CRITERIA[number]
        ok = all(r[0] for r in results)
        details = "; ".join(r[1].split("  ", 1)[1] for r in results)
        terminalreporter.write_line(f"criterion {number}: {'PASS' if ok else 'FAIL'}  {details}")
