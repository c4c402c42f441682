import numpy as np
import pytest
import torch

from maskaug import toy
from maskaug.model import GeneratorConfig
from maskaug.trainer import TrainConfig

torch.set_num_threads(1)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def tiny_cfg():
    return GeneratorConfig(input_size=32, base_channels=4, n_resnet_blocks=1)


@pytest.fixture
def tiny_train_cfg():
    return TrainConfig(disc_channels=4, pool_size=4)


@pytest.fixture
def toy_data():
    return toy.make_dataset(8, seed=0)


# -- acceptance reporting --------------------------------------------------------

_criteria: list[str] = []


@pytest.fixture
def criterion():
    """``criterion(n, title, ok, detail)`` prints and records one verdict line, then asserts."""

    def record(n, title, ok, detail=""):
        line = f"{'PASS' if ok else 'FAIL'}  criterion {n:>2}: {title}" + (f" ({detail})" if detail else "")
        _criteria.append(line)
        print(line)
        assert ok, line

    return record


def pytest_terminal_summary(terminalreporter):
    if _criteria:
        terminalreporter.section("acceptance criteria")
        for line in sorted(_criteria, key=lambda l: int(l.split("criterion")[1].split(":")[0])):
            terminalreporter.write_line(line)
