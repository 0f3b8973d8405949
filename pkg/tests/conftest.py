import numpy as np
import pytest

from nssc.denoise import DepthMap
from nssc.inference import InferenceConfig
from nssc.learning import TrainConfig, train
from nssc.synth import piecewise_constant_map


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def depth_dictionary():
    """8x8, 64-atom dictionary learned on synthetic piecewise-constant maps."""
    rng = np.random.default_rng(5)
    maps = [DepthMap(piecewise_constant_map((100, 100), rng)) for _ in range(20)]
    cfg = TrainConfig(
        patch_dims=(8, 8), atom_count=64, batch_size=100, learning_rate=0.05,
        num_iterations=300, sentinel=None, rng_seed=0,
        inference=InferenceConfig(inner_tol=1e-6),
    )
    return train(maps, cfg).dictionary


_ACCEPTANCE = []


@pytest.fixture
def acceptance():
    """Record one PASS/FAIL line per acceptance criterion."""

    def record(number, passed, detail):
        status = "SKIP" if passed is None else ("PASS" if passed else "FAIL")
        line = f"{status} criterion {number}: {detail}"
        _ACCEPTANCE.append(line)
        print(line)
        return passed

    return record


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in _ACCEPTANCE:
            terminalreporter.write_line(line)
