import os
import sys

import numpy as np
import pytest

sys.path.insert(0, os.path.dirname(__file__))

from neural_galerkin import kernels  # noqa: E402


@pytest.fixture(params=sorted(kernels.backends()))
def backend(request):
    """Each importable kernel module in turn (compiled and pure python)."""
    return kernels.backends()[request.param]


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def ac1d_short():
    """A briefly pretrained 1D Allen-Cahn network shared across test modules."""
    from neural_galerkin.basis import NetworkArchitecture
    from neural_galerkin.problems import make_problem
    from neural_galerkin.training import TrainConfig, pretrain
    p = make_problem("ac_1d")
    res = pretrain(p, NetworkArchitecture(2, (64, 64, 64)), TrainConfig(steps=60, batch_size=512, init="sfli"))
    return p, res


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "REPORT", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(lines):
            terminalreporter.write_line(line)
