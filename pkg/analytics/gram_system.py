"""
Gram System for the sparse ANOVA metamodel workbench
Variable subsets, per-group Gram matrices with jitter, square roots,
eigendecompositions, Omega quadrature matrices and the empirical critical rate
"""

import itertools
import logging
from dataclasses import dataclass
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Tuple

import numpy as np
from joblib import Parallel, delayed
from scipy import linalg

from analytics.errors import ArgumentError, NumericalError
from analytics.kernel_core import CenteredKernel
from config import JITTER_POLICY, TUNING_DEFAULTS

logger = logging.getLogger(__name__)


@dataclass(frozen=True, order=True)
class GroupIndex:
    """A nonempty sorted set of 1-based coordinate indices"""

    members: Tuple[int, ...]

    def __post_init__(self):
        members = tuple(int(a) for a in self.members)
        if not members:
            raise ArgumentError("A group needs at least one coordinate", module=__name__)
        if any(a < 1 for a in members):
            raise ArgumentError(f"Coordinates are 1-based, got {members}", module=__name__)
        if list(members) != sorted(set(members)):
            raise ArgumentError(f"Group members must be sorted and distinct, got {members}",
                                module=__name__)
        object.__setattr__(self, "members", members)

    @classmethod
    def of(cls, *members: int) -> "GroupIndex":
        return cls(tuple(sorted(members)))

    @classmethod
    def parse(cls, label: str) -> "GroupIndex":
        """Inverse of ``label``: '1|3' -> {1, 3}"""
        try:
            members = tuple(int(part) for part in str(label).split("|"))
        except ValueError:
            raise ArgumentError(f"Malformed group label '{label}'", module=__name__)
        return cls(members)

    @property
    def label(self) -> str:
        return "|".join(str(a) for a in self.members)

    @property
    def columns(self) -> List[int]:
        return [a - 1 for a in self.members]

    @property
    def order(self) -> int:
        return len(self.members)

    def sort_key(self) -> Tuple[int, Tuple[int, ...]]:
        return (len(self.members), self.members)

    def __contains__(self, a: int) -> bool:
        return a in self.members

    def __len__(self) -> int:
        return len(self.members)

    def __str__(self) -> str:
        return "{" + ",".join(str(a) for a in self.members) + "}"


@dataclass(frozen=True, eq=False)
class GramBundle:
    group: GroupIndex
    K: np.ndarray
    K_sqrt: np.ndarray
    eigenvalues: np.ndarray
    eigenvectors: np.ndarray
    jitter_used: float

    @property
    def n(self) -> int:
        return self.K.shape[0]

    def rotate(self, vector: np.ndarray) -> np.ndarray:
        """Coordinates of a vector in the eigenbasis"""
        return self.eigenvectors.T @ vector

    def unrotate(self, coords: np.ndarray) -> np.ndarray:
        return self.eigenvectors @ coords


@dataclass(frozen=True, eq=False)
class OmegaBundle:
    group: GroupIndex
    Omega: np.ndarray


def enumerate_groups(d: int, D_max: int) -> List[GroupIndex]:
    """All subsets of {1..d} with 1 <= |v| <= D_max, ordered by (size, members)"""
    if d < 1 or D_max < 1 or D_max > d:
        raise ArgumentError(f"Need 1 <= D_max <= d, got d={d}, D_max={D_max}", module=__name__)
    groups = []
    for size in range(1, D_max + 1):
        for members in itertools.combinations(range(1, d + 1), size):
            groups.append(GroupIndex(members))
    return groups


def _hadamard(factors: Iterable[np.ndarray]) -> np.ndarray:
    result = None
    for factor in factors:
        result = factor.copy() if result is None else result * factor
    return result


def univariate_grams(X: np.ndarray, kernels: Sequence[CenteredKernel],
                     coordinates: Iterable[int]) -> Dict[int, np.ndarray]:
    """Centered n x n Gram matrices per 1-based coordinate"""
    X = np.asarray(X, dtype=float)
    return {a: kernels[a - 1].gram(X[:, a - 1]) for a in coordinates}


def build_gram(X: np.ndarray, v: GroupIndex, kernels: Sequence[CenteredKernel],
               jitter_policy: Optional[Mapping] = None,
               univariate: Optional[Mapping[int, np.ndarray]] = None) -> GramBundle:
    """Jittered Gram matrix of k_v on the rows of X, with eigendecomposition and square root"""
    policy = dict(JITTER_POLICY, **(jitter_policy or {}))
    X = np.atleast_2d(np.asarray(X, dtype=float))
    n = X.shape[0]
    if n < 1:
        raise ArgumentError("Empty design", module=__name__)
    if max(v.members) > X.shape[1]:
        raise ArgumentError(f"Group {v.label} exceeds design width {X.shape[1]}", module=__name__)
    if univariate is None:
        univariate = univariate_grams(X, kernels, v.members)
    K0 = _hadamard(univariate[a] for a in v.members)
    K0 = (K0 + K0.T) / 2.0

    try:
        raw_eigenvalues, eigenvectors = linalg.eigh(K0)
    except (linalg.LinAlgError, ValueError) as e:
        raise NumericalError(f"Eigendecomposition failed for group {v.label}: {e}",
                             module=__name__, group=v.label)

    jitter = max(0.0, policy["relative"] * np.trace(K0) / n - raw_eigenvalues[0])
    K = K0 + jitter * np.eye(n)
    # eigh returns ascending order
    eigenvalues = np.clip(raw_eigenvalues[::-1] + jitter, 0.0, None)
    eigenvectors = np.ascontiguousarray(eigenvectors[:, ::-1])
    K_sqrt = (eigenvectors * np.sqrt(eigenvalues)) @ eigenvectors.T

    for array in (K, K_sqrt, eigenvalues, eigenvectors):
        array.setflags(write=False)
    return GramBundle(v, K, K_sqrt, eigenvalues, eigenvectors, float(jitter))


def omega_factor(X_column: np.ndarray, kernel: CenteredKernel) -> np.ndarray:
    """E_U[k0(U, x_i) k0(U, x_j)] for one coordinate, by the marginal's quadrature"""
    Z = kernel.gram(kernel.marginal.nodes, X_column)
    return Z.T @ (kernel.marginal.weights[:, None] * Z)


def build_omega(X: np.ndarray, v: GroupIndex, kernels: Sequence[CenteredKernel],
                factors: Optional[Mapping[int, np.ndarray]] = None) -> OmegaBundle:
    """Omega_v as the coordinatewise product of per-coordinate quadrature matrices"""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    if factors is None:
        factors = {a: omega_factor(X[:, a - 1], kernels[a - 1]) for a in v.members}
    Omega = _hadamard(factors[a] for a in v.members)
    Omega = (Omega + Omega.T) / 2.0
    Omega.setflags(write=False)
    return OmegaBundle(v, Omega)


def critical_rate(omega_hat: np.ndarray, n: int, delta: float = TUNING_DEFAULTS["delta"]) -> float:
    """
    inf{t > 0 : Q(t) <= delta t^2} with Q(t) = sqrt(5/n sum_k min(t^2, omega_k)).
    Q(t) / t^2 is nonincreasing, so the set is a half line found by bisection.
    """
    if delta <= 0:
        raise ArgumentError("Delta must be positive", module=__name__)
    omega_hat = np.clip(np.asarray(omega_hat, dtype=float), 0.0, None)
    if not np.any(omega_hat > 0):
        return 0.0

    def excess(t: float) -> float:
        q = np.sqrt(5.0 / n * np.minimum(t * t, omega_hat).sum())
        return q - delta * t * t

    t_hi = max(1.0, float(np.sqrt(omega_hat.max())))
    while excess(t_hi) > 0:
        t_hi *= 2.0
    t_lo = 0.0
    for _ in range(200):
        mid = 0.5 * (t_lo + t_hi)
        if excess(mid) <= 0:
            t_hi = mid
        else:
            t_lo = mid
        if t_hi - t_lo <= 1e-12 * t_hi:
            break
    return float(t_hi)


def estimate_nu(bundle: GramBundle, Delta: float = TUNING_DEFAULTS["delta"]) -> float:
    """Empirical critical rate from the eigenvalues of K_v / n"""
    return critical_rate(bundle.eigenvalues / bundle.n, bundle.n, Delta)


class GramSystem:
    """
    Gram and Omega matrices of every group for one design, built once and shared
    read-only by the solver, the tuning procedures and the sensitivity analysis.
    """

    def __init__(self, X: np.ndarray, kernels: Sequence[CenteredKernel], groups: Sequence[GroupIndex],
                 jitter_policy: Optional[Mapping] = None, threads: int = 1):
        self.logger = logging.getLogger(__name__)
        self.X = np.atleast_2d(np.asarray(X, dtype=float))
        self.kernels = tuple(kernels)
        self.groups = sorted(groups, key=GroupIndex.sort_key)
        if len(self.kernels) != self.X.shape[1]:
            raise ArgumentError(f"{len(self.kernels)} kernels for a design with {self.X.shape[1]} columns",
                                module=__name__)
        coordinates = sorted({a for v in self.groups for a in v.members})
        self._univariate = univariate_grams(self.X, self.kernels, coordinates)
        self._omega_factors: Dict[int, np.ndarray] = {}
        self._omegas: Dict[GroupIndex, OmegaBundle] = {}

        bundles = Parallel(n_jobs=threads, prefer="threads")(
            delayed(build_gram)(self.X, v, self.kernels, jitter_policy, self._univariate)
            for v in self.groups
        )
        self.bundles: Dict[GroupIndex, GramBundle] = dict(zip(self.groups, bundles))
        self.logger.debug(f"Built {len(self.bundles)} Gram bundles for n={self.n}")

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def d(self) -> int:
        return self.X.shape[1]

    def __getitem__(self, v: GroupIndex) -> GramBundle:
        return self.bundles[v]

    def omega(self, v: GroupIndex) -> OmegaBundle:
        if v not in self._omegas:
            for a in v.members:
                if a not in self._omega_factors:
                    self._omega_factors[a] = omega_factor(self.X[:, a - 1], self.kernels[a - 1])
            self._omegas[v] = build_omega(self.X, v, self.kernels, self._omega_factors)
        return self._omegas[v]

    def omegas(self, groups: Optional[Iterable[GroupIndex]] = None) -> Dict[GroupIndex, OmegaBundle]:
        return {v: self.omega(v) for v in (self.groups if groups is None else groups)}

    def nu(self, Delta: float = TUNING_DEFAULTS["delta"]) -> Dict[GroupIndex, float]:
        return {v: estimate_nu(bundle, Delta) for v, bundle in self.bundles.items()}
