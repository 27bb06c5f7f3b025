import os

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from smoge.model import MixingMeasure

settings.register_profile("default", deadline=None, max_examples=50,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


def random_measure(rng, K, d, family="linear", scale=1.0):
    from smoge.experts import get_family
    p = get_family(family).n_params(d)
    return MixingMeasure(
        alpha0=scale * rng.normal(size=K),
        alpha1=scale * rng.normal(size=(K, d)),
        beta=scale * rng.normal(size=(K, p)),
        sigma2=rng.uniform(0.3, 2.0, size=K),
        family=family,
    )


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_collection_modifyitems(config, items):
    if os.environ.get("SMOGE_PAPER_SCALE") == "1":
        return
    skip = pytest.mark.skip(reason="paper-scale run; set SMOGE_PAPER_SCALE=1")
    for item in items:
        if "paper" in item.keywords:
            item.add_marker(skip)


# one line per acceptance criterion, printed at the end of the run
ACCEPTANCE_LINES = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for num in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(ACCEPTANCE_LINES[num])
