import sys
from collections import defaultdict
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

ACCEPTANCE = defaultdict(list)


@pytest.fixture
def report():
    """``report(criterion, part, ok, detail)``; one summary line per criterion is printed at the end."""
    def _report(criterion, part, ok, detail=""):
        ACCEPTANCE[criterion].append((part, bool(ok), detail))
        print(f"criterion {criterion} [{part}]: {'PASS' if ok else 'FAIL'} {detail}")
    return _report


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for c in sorted(ACCEPTANCE):
        parts = ACCEPTANCE[c]
        verdict = "PASS" if all(ok for _, ok, _ in parts) else "FAIL"
        detail = "; ".join(f"{p}: {'ok' if ok else 'FAILED'} {d}".rstrip() for p, ok, d in parts)
        terminalreporter.write_line(f"criterion {c:>2}: {verdict}  ({detail})")
