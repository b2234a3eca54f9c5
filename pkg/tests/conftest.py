import os

import hypothesis
import numpy as np
import pytest

from sparsegibbs import GibbsModel

from .oracles import load_frozen

hypothesis.settings.register_profile("default", max_examples=60, deadline=None)
hypothesis.settings.register_profile("thorough", max_examples=500, deadline=None)
hypothesis.settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))

ACCEPTANCE = pytest.StashKey[list]()


@pytest.fixture(scope="session")
def acceptance_log(request):
    return request.config.stash.setdefault(ACCEPTANCE, [])


def pytest_terminal_summary(terminalreporter, config):
    lines = config.stash.get(ACCEPTANCE, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines):
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def frozen():
    return load_frozen()


@pytest.fixture(scope="session")
def bern():
    return GibbsModel.bernoulli([0.2, 0.8], name="bern")


@pytest.fixture(scope="session")
def markov():
    return GibbsModel.markov([0.4, 0.6], [[0.7, 0.3], [0.4, 0.6]], name="markov")


@pytest.fixture(scope="session")
def homog():
    return GibbsModel.homogeneous(1.0)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
