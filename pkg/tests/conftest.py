import numpy as np
import pytest

from mmdquant import EmpiricalTarget, KernelSpec


def make_rng(seed: int) -> np.random.Generator:
    return np.random.default_rng(seed)


def random_target(rng: np.random.Generator, n: int = 50, d: int = 2) -> EmpiricalTarget:
    return EmpiricalTarget(rng.normal(0.0, 1.5, size=(n, d)))


def random_weighted_target(rng: np.random.Generator, n: int = 50, d: int = 2) -> EmpiricalTarget:
    w = rng.random(n) + 0.1
    return EmpiricalTarget(rng.normal(0.0, 1.5, size=(n, d)), w / w.sum())


ALL_SPECS = [
    KernelSpec("se", 1.0),
    KernelSpec("se", 2.5),
    KernelSpec("imq", 1.0, imq_offset=1.0),
    KernelSpec("imq", 1.0, imq_offset=0.7),
    KernelSpec("matern32", 1.0),
    KernelSpec("matern32", 1.8),
]


@pytest.fixture
def rng():
    return make_rng(1234)
