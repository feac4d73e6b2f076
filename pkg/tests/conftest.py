import os

from hypothesis import HealthCheck, settings

settings.register_profile(
    "fracheat",
    max_examples=int(os.environ.get("FRACHEAT_HYPOTHESIS_EXAMPLES", "25")),
    deadline=None,
    derandomize=True,
    suppress_health_check=[HealthCheck.too_slow],
)
settings.load_profile("fracheat")

# one summary line per acceptance criterion, filled by tests/test_acceptance.py
ACCEPTANCE = {}


def record(criterion: int, part: str, passed: bool, detail: str) -> None:
    ACCEPTANCE.setdefault(criterion, []).append((part, passed, detail))


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    for crit in sorted(ACCEPTANCE):
        parts = ACCEPTANCE[crit]
        ok = all(p for _, p, _ in parts)
        detail = "; ".join(f"{name}: {'ok' if p else 'FAILED'} ({d})" for name, p, d in parts)
        tr.write_line(f"criterion {crit:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
