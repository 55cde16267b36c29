from pathlib import Path

import numpy as np
import pytest

from dsaeem.data_io import load_dataset, load_schema

ROOT = Path(__file__).resolve().parents[1]
DATA = ROOT / "data"


def load(name):
    return load_dataset(DATA / f"{name}.csv", load_schema(DATA / f"{name}.schema.json"))


@pytest.fixture(scope="session")
def heart():
    return load("heart")


@pytest.fixture(scope="session")
def pid():
    return load("pid")


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)


def two_blobs(n=40, sep=4.0, dim=2, seed=0):
    r = np.random.default_rng(seed)
    y = np.repeat([0, 1], n // 2)
    X = r.normal(size=(n, dim)) * 0.5
    X[y == 1] += sep
    return X, y
