import pytest

_RESULTS: dict[int, "CriterionRecord"] = {}


class CriterionRecord:
    """Collects named sub-checks of one acceptance criterion."""

    def __init__(self, number: int, title: str):
        self.number = number
        self.title = title
        self.checks: list[tuple[str, bool, str]] = []
        self.error: str | None = None

    def check(self, name: str, ok: bool, detail: str = "") -> bool:
        self.checks.append((name, bool(ok), detail))
        return bool(ok)

    @property
    def passed(self) -> bool:
        return self.error is None and bool(self.checks) and all(ok for _, ok, _ in self.checks)

    def verify(self) -> None:
        failed = [f"{name}: {detail}" for name, ok, detail in self.checks if not ok]
        assert not failed, "; ".join(failed)

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        if self.error is not None:
            return f"CRITERION {self.number:2d}: {status} - {self.title} - error: {self.error}"
        parts = [f"{name} {'ok' if ok else 'FAILED'} ({detail})" for name, ok, detail in self.checks]
        return f"CRITERION {self.number:2d}: {status} - {self.title} - " + "; ".join(parts)


@pytest.fixture
def criterion(request):
    records = []

    def make(number: int, title: str) -> CriterionRecord:
        rec = CriterionRecord(number, title)
        records.append(rec)
        _RESULTS[number] = rec
        return rec

    yield make
    call = getattr(request.node, "rep_call", None)
    for rec in records:
        if call is not None and call.failed and (not rec.checks or rec.passed):
            rec.error = str(call.longrepr).splitlines()[-1][:200]


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    if rep.when == "call":
        item.rep_call = rep


def pytest_terminal_summary(terminalreporter):
    if not _RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_RESULTS):
        terminalreporter.write_line(_RESULTS[number].line())
    passed = sum(r.passed for r in _RESULTS.values())
    terminalreporter.write_line(f"{passed}/{len(_RESULTS)} criteria pass")
