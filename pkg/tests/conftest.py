from pathlib import Path

import numpy as np
import pytest

from boxlift.scenario import ScenarioConfig

ROOT = Path(__file__).resolve().parents[1]
SCENARIOS = ROOT / "scenarios"

# added-mass positions that put the combined CoM exactly at the two test configurations
CONFIG1_ADDED = (0.0902, 0.05016, 0.0)
CONFIG2_ADDED = (0.02992, -0.05016, 0.0)
CLIP_SHELF = ((-0.5, -0.02, 0.25, 0.5, 0.4, 0.28),)


@pytest.fixture(scope="session")
def config1():
    return ScenarioConfig.load(SCENARIOS / "config1_clip.ini")


@pytest.fixture(scope="session")
def config2():
    return ScenarioConfig.load(SCENARIOS / "config2_clear.ini")


@pytest.fixture(scope="session")
def refined1(config1):
    from boxlift.pipeline import run_phase1

    return run_phase1(config1)


@pytest.fixture(scope="session")
def refined2(config2):
    from boxlift.pipeline import run_phase1

    return run_phase1(config2)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# one entry per acceptance criterion: (number, title, passed, detail, seconds)
ACCEPTANCE = []


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for num, title, ok, detail, secs in sorted(ACCEPTANCE):
        terminalreporter.write_line(f"[{'PASS' if ok else 'FAIL'}] {num}. {title} ({secs:.2f} s) {detail}")
