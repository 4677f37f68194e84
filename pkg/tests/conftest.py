import numpy as np
import pytest

from paretorec.data import Dataset, Session
from paretorec.model import ModelConfig, init_params

ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


def make_dataset(item_lists, n_items=None, orders=None, starts=None):
    orders = orders or [[False] * len(items) for items in item_lists]
    starts = starts or list(range(len(item_lists)))
    sessions = [
        Session(f"s{k}", tuple(zip(items, flags)), start)
        for k, (items, flags, start) in enumerate(zip(item_lists, orders, starts))
    ]
    n = n_items if n_items is not None else max(i for items in item_lists for i in items) + 1
    return Dataset(sessions, tuple(f"i{j}" for j in range(n)))


@pytest.fixture
def tiny_config():
    return ModelConfig(vocab_size=6, d_model=4, n_layers=1, n_heads=2, max_len=5, seed=3)


@pytest.fixture
def tiny_params(tiny_config):
    return init_params(tiny_config)


@pytest.fixture
def small_dataset():
    rng = np.random.default_rng(11)
    lists = [list(rng.integers(0, 6, size=rng.integers(2, 6))) for _ in range(10)]
    orders = [list(rng.random(len(x)) < 0.3) for x in lists]
    return make_dataset(lists, 6, orders)
