"""Shared pytest plumbing: acceptance criteria get one printed line each."""

_ACCEPTANCE_RESULTS = {}


def record_criterion(number: int, description: str, passed: bool):
    _ACCEPTANCE_RESULTS[number] = (description, passed)


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not _ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_ACCEPTANCE_RESULTS):
        description, passed = _ACCEPTANCE_RESULTS[number]
        status = "PASS" if passed else "FAIL"
        terminalreporter.write_line(f"[{status}] {number:2d}. {description}")
