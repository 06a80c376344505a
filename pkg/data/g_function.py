"""
g-Function Data Provider for the sparse ANOVA metamodel workbench
The Sobol g-function benchmark, its analytic sensitivity indices, Latin
hypercube designs and simulated noisy datasets
"""

import itertools
import logging
from dataclasses import dataclass
from typing import Dict, List, Sequence, Tuple

import numpy as np
from scipy.stats import qmc

from analytics.errors import ArgumentError, DomainError
from analytics.gram_system import GroupIndex
from config import G_FUNCTION_C
from data.datasets import Dataset

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class GFunctionSpec:
    c: Tuple[float, ...] = G_FUNCTION_C

    def __post_init__(self):
        c = tuple(float(value) for value in self.c)
        if not c or any(value <= 0 for value in c):
            raise ArgumentError("g-function coefficients must be positive", module=__name__)
        object.__setattr__(self, "c", c)

    @property
    def d(self) -> int:
        return len(self.c)

    def __call__(self, X: np.ndarray) -> np.ndarray:
        return g_function(X, self.c)


def g_function(x: np.ndarray, c: Sequence[float] = G_FUNCTION_C) -> np.ndarray:
    """prod_a (|4 x_a - 2| + c_a) / (1 + c_a); a single point or the rows of a design"""
    x = np.asarray(x, dtype=float)
    c = np.asarray(c, dtype=float)
    if x.shape[-1] != c.size:
        raise ArgumentError(f"Point dimension {x.shape[-1]} does not match {c.size} coefficients",
                            module=__name__)
    if np.any(x < 0) or np.any(x > 1):
        raise DomainError("g-function inputs must lie in [0, 1]", module=__name__)
    values = np.prod((np.abs(4.0 * x - 2.0) + c) / (1.0 + c), axis=-1)
    return values if values.ndim else float(values)


def partial_variances(c: Sequence[float] = G_FUNCTION_C) -> np.ndarray:
    """Variance of each univariate factor: (1/3) / (1 + c_a)^2"""
    c = np.asarray(c, dtype=float)
    return (1.0 / 3.0) / (1.0 + c) ** 2


def total_variance(c: Sequence[float] = G_FUNCTION_C) -> float:
    return float(np.prod(1.0 + partial_variances(c)) - 1.0)


def analytic_sobol(c: Sequence[float] = G_FUNCTION_C) -> Dict[GroupIndex, float]:
    """Exact Sobol index of every nonempty subset, ordered by (size, members)"""
    spec = GFunctionSpec(tuple(c))
    D = partial_variances(spec.c)
    total = total_variance(spec.c)
    indices = {}
    for size in range(1, spec.d + 1):
        for members in itertools.combinations(range(1, spec.d + 1), size):
            indices[GroupIndex(members)] = float(np.prod(D[[a - 1 for a in members]]) / total)
    return indices


def first_order_indices(c: Sequence[float] = G_FUNCTION_C) -> np.ndarray:
    return partial_variances(c) / total_variance(c)


def total_order_indices(c: Sequence[float] = G_FUNCTION_C) -> np.ndarray:
    D = partial_variances(c)
    total = total_variance(c)
    totals = np.empty(D.shape)
    for i in range(D.size):
        mask = np.ones(D.size, dtype=bool)
        mask[i] = False
        totals[i] = D[i] * np.prod(1.0 + D[mask]) / total
    return totals


def lhs_sample(n: int, d: int, seed=None) -> np.ndarray:
    """Random Latin hypercube on [0, 1)^d: one point per stratum [i/n, (i+1)/n) in each column"""
    if n < 1 or d < 1:
        raise ArgumentError("LHS needs n >= 1 and d >= 1", module=__name__)
    sampler = qmc.LatinHypercube(d=d, scramble=True, seed=np.random.default_rng(seed))
    return sampler.random(n)


def child_seeds(seed, count: int) -> List[np.random.SeedSequence]:
    """Independent child sequences; unlike SeedSequence.spawn, repeated calls give the same children"""
    root = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
    return [np.random.SeedSequence(root.entropy, spawn_key=tuple(root.spawn_key) + (k,))
            for k in range(count)]


def simulate_dataset(spec: GFunctionSpec, n: int, sigma: float,
                     seed=None, name: str = "g-function") -> Dataset:
    """Y = m(X) + sigma * eps on a Latin hypercube design"""
    if sigma < 0:
        raise ArgumentError("Noise level must be nonnegative", module=__name__)
    seeds = child_seeds(seed, 2)
    X = lhs_sample(n, spec.d, seeds[0])
    noise = np.random.default_rng(seeds[1]).standard_normal(n)
    return Dataset(spec(X) + sigma * noise, X, name)
