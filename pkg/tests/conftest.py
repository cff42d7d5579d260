import pytest
from hypothesis import settings

settings.register_profile("default", deadline=None, max_examples=40)
settings.load_profile("default")

# criterion number -> list of (part, ok, detail)
_ACCEPTANCE: dict = {}


@pytest.fixture
def record():
    def _record(criterion: int, part: str, ok: bool, detail: str = ""):
        _ACCEPTANCE.setdefault(criterion, []).append((part, bool(ok), detail))
        print(f"{'PASS' if ok else 'FAIL'} criterion {criterion} [{part}] {detail}")
    return _record


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_ACCEPTANCE):
        parts = _ACCEPTANCE[n]
        ok = all(p[1] for p in parts)
        detail = "; ".join(f"{name}: {'ok' if good else 'FAILED'} {d}".strip() for name, good, d in parts)
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'} {n:2d}  {detail}")
