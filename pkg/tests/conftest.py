import numpy as np
import pytest

from analytics.gram_system import GramBundle, GramSystem, GroupIndex, enumerate_groups
from analytics.kernel_core import KernelFamily, uniform_kernels


def bundle_from_matrix(K: np.ndarray, members=(1,)) -> GramBundle:
    """A GramBundle around an arbitrary symmetric positive definite matrix"""
    K = (np.asarray(K, dtype=float) + np.asarray(K, dtype=float).T) / 2.0
    values, vectors = np.linalg.eigh(K)
    values, vectors = values[::-1].copy(), vectors[:, ::-1].copy()
    K_sqrt = (vectors * np.sqrt(values)) @ vectors.T
    return GramBundle(GroupIndex(tuple(members)), K, K_sqrt, values, vectors, 0.0)


def random_spd(rng: np.random.Generator, n: int, floor: float = 0.1) -> np.ndarray:
    A = rng.normal(size=(n, n))
    return A @ A.T + floor * np.eye(n)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def matern2():
    return uniform_kernels(KernelFamily("matern"), 2)


@pytest.fixture(scope="session")
def matern3():
    return uniform_kernels(KernelFamily("matern"), 3)


@pytest.fixture(scope="session")
def brownian1():
    return uniform_kernels(KernelFamily("brownian"), 1)


@pytest.fixture
def small_problem(matern2):
    """n = 8, d = 2, all groups up to order 2, a smooth response with an interaction"""
    rng = np.random.default_rng(7)
    X = rng.uniform(size=(8, 2))
    Y = np.sin(2 * np.pi * X[:, 0]) + 0.5 * X[:, 1] + 0.3 * X[:, 0] * X[:, 1] + 0.05 * rng.normal(size=8)
    system = GramSystem(X, matern2, enumerate_groups(2, 2))
    return Y, X, system
