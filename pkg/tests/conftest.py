import time

import pytest

ACCEPTANCE = pytest.StashKey[list]()


def pytest_configure(config):
    config.stash[ACCEPTANCE] = []


@pytest.fixture
def acceptance(request):
    """Run a criterion check under its time budget and record PASS/FAIL."""
    results = request.config.stash[ACCEPTANCE]

    def run(number: int, title: str, budget_s: float, check) -> None:
        start = time.perf_counter()
        failure = None
        try:
            check()
        except AssertionError as exc:
            failure = exc
        elapsed = time.perf_counter() - start
        ok = failure is None and elapsed < budget_s
        detail = "" if failure is None else f" -- {str(failure).splitlines()[0]}"
        results.append((number, title, ok, elapsed, budget_s, detail))
        if failure is not None:
            raise failure
        assert elapsed < budget_s, f"criterion {number} took {elapsed:.2f}s, budget {budget_s}s"

    return run


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    results = sorted(config.stash.get(ACCEPTANCE, []))
    if not results:
        return
    terminalreporter.write_sep("=", "acceptance criteria")
    for number, title, ok, elapsed, budget, detail in results:
        status = "PASS" if ok else "FAIL"
        terminalreporter.write_line(f"{status} {number}. {title} ({elapsed:.2f}s / {budget:g}s){detail}")
