import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile("default", deadline=None, max_examples=40,
                          suppress_health_check=[HealthCheck.too_slow])
settings.register_profile("thorough", deadline=None, max_examples=300)
settings.load_profile("default")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def small_scene():
    from tabletopseg.scenegen import SceneConfig, generate_scene

    return generate_scene(SceneConfig(width=160, height=120), 7)


# acceptance criteria: one PASS/FAIL line each, repeated in the terminal summary
ACCEPTANCE_COUNT = 9
_acceptance_lines: dict = {}


@pytest.fixture
def criterion():
    def record(number: int, title: str, passed: bool, detail: str) -> bool:
        line = f"criterion {number} {'PASS' if passed else 'FAIL'}: {title} [{detail}]"
        _acceptance_lines[number] = line
        print(line)
        return passed
    return record


def pytest_terminal_summary(terminalreporter):
    if not _acceptance_lines:
        return
    terminalreporter.section("acceptance criteria")
    for n in range(1, ACCEPTANCE_COUNT + 1):
        terminalreporter.write_line(_acceptance_lines.get(n, f"criterion {n} FAIL: did not complete or not run"))
