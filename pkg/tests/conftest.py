"""Shared fixtures: one small synthetic dataset reused across test modules."""

import numpy as np
import pytest

from tclnet import data


def pytest_configure(config):
    config.addinivalue_line(
        "markers", "slow: long-running checks, opt in with TCLNET_SLOW=1")


@pytest.fixture(scope="session")
def small_dataset(tmp_path_factory):
    """12 samples (train+test) rendered once per session."""
    root = tmp_path_factory.mktemp("ds")
    params = data.SynthParams(n_samples=12, seed=7, train_fraction=0.75)
    index = data.generate(params, root)
    return root, index


@pytest.fixture(scope="session")
def small_train_samples(small_dataset):
    _, index = small_dataset
    return data.load_split(index, "train")
