import numpy as np
import pytest

from clusterlcbwk.env import InstanceConfig, generate_instance


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def small_instance():
    cfg = InstanceConfig(K=16, C=2, m=3, d=2, separation=0.3, noise_half_width=0.1)
    return generate_instance(cfg, np.random.default_rng(7))


# criterion number -> (passed, description); filled by test_acceptance.py
ACCEPTANCE_RESULTS = {}


@pytest.fixture
def acceptance():
    def record(number, passed, text):
        ACCEPTANCE_RESULTS[number] = (bool(passed), text)
        print(f"criterion {number:2d}: {'PASS' if passed else 'FAIL'}  {text}")
        return bool(passed)

    return record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE_RESULTS):
        passed, text = ACCEPTANCE_RESULTS[number]
        terminalreporter.write_line(f"criterion {number:2d}: {'PASS' if passed else 'FAIL'}  {text}")
