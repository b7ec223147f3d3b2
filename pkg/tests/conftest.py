import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).parent))

CRITERIA_RESULTS = []


def record_criterion(number: int, title: str, detail: str = "") -> None:
    CRITERIA_RESULTS.append((number, title, detail))


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not CRITERIA_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for number, title, detail in sorted(CRITERIA_RESULTS):
        line = f"[criterion {number}] PASS: {title}"
        if detail:
            line += f" ({detail})"
        terminalreporter.write_line(line)
