import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile(
    "geoquad",
    deadline=None,
    max_examples=30,
    suppress_health_check=[HealthCheck.too_slow],
)
settings.load_profile("geoquad")


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture
def criterion(record_property):
    """Record one verdict line per acceptance criterion for the terminal summary."""

    def record(number, title, passed, detail):
        line = f"[{'PASS' if passed else 'FAIL'}] criterion {number:>2} {title}: {detail}"
        record_property("criterion", line)
        print(line)
        return passed

    return record


def pytest_terminal_summary(terminalreporter):
    lines = []
    for key in ("passed", "failed"):
        for rep in terminalreporter.stats.get(key, []):
            if rep.when != "call":
                continue
            lines += [v for k, v in getattr(rep, "user_properties", []) if k == "criterion"]
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s.split()[2])):
            terminalreporter.write_line(line)
