import sys

import numpy as np
import pytest

from snnpar.data import Dataset, SyntheticSpec, generate_synthetic


@pytest.fixture(scope="session")
def small_dataset_dir(tmp_path_factory):
    root = tmp_path_factory.mktemp("small_ds")
    generate_synthetic(SyntheticSpec(seed=3, n_train=60, n_test=24), root)
    return root


@pytest.fixture(scope="session")
def small_train(small_dataset_dir):
    return Dataset.load(small_dataset_dir, "train")


@pytest.fixture(scope="session")
def small_test(small_dataset_dir):
    return Dataset.load(small_dataset_dir, "test")


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "LINES", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
