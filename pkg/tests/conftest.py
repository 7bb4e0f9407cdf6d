import os

import pytest
from hypothesis import HealthCheck, settings

from metexit.density import GridSpec

settings.register_profile(
    "default", deadline=None, max_examples=25, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))


@pytest.fixture(scope="session")
def small_grid():
    return GridSpec(llr_max=20.0, n_bins=801)


# one line per acceptance criterion, printed after the run
_ACCEPTANCE: dict[str, str] = {}


@pytest.fixture(scope="session")
def report():
    def record(key: str, title: str, ok: bool, detail: str) -> bool:
        line = f"[{key}] {'PASS' if ok else 'FAIL'}  {title}: {detail}"
        _ACCEPTANCE[key] = line
        print(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for key in sorted(_ACCEPTANCE, key=lambda k: int(k)):
            terminalreporter.write_line(_ACCEPTANCE[key])
