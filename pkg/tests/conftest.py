import math
import sys
from pathlib import Path

import pytest
from hypothesis import HealthCheck, settings

sys.path.insert(0, str(Path(__file__).parent))

from ladder_eit import FieldConfig, LadderScheme, VaporEnsemble  # noqa: E402
import oracles  # noqa: E402

settings.register_profile("default", deadline=None, max_examples=60,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

G2 = oracles.G2


@pytest.fixture
def scheme():
    """87Rb 5S1/2 -> 5P3/2 -> 21S1/2 at the standard decay rates."""
    return LadderScheme(oracles.LAMBDA_P, oracles.LAMBDA_C, G2, oracles.G3)


@pytest.fixture
def window_fields():
    return FieldConfig(0.0, 0.0, 1.5 * G2, "counter")


@pytest.fixture
def warm_vapor():
    return VaporEnsemble(320.0, oracles.MASS_RB87, 1e16, 0.05)


@pytest.fixture
def bg_grid():
    import numpy as np

    return np.linspace(-8 * G2, 8 * G2, 1601)


def rel(a, b):
    return abs(a - b) / abs(b)


__all__ = ["G2", "rel", "math"]


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    if mod is None or not mod.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(mod.RESULTS):
        terminalreporter.write_line(mod.RESULTS[key])
