"""
Kernel Core for the sparse ANOVA metamodel workbench
Univariate base kernels, centering against a marginal distribution and
product ANOVA kernels over variable subsets
"""

import logging
from dataclasses import dataclass, field
from typing import Callable, Dict, Optional, Sequence, Tuple

import numpy as np
from numpy.polynomial.legendre import leggauss

from analytics.errors import ArgumentError, DomainError, KernelConstructionError
from config import KERNEL_DEFAULTS, KERNEL_FAMILIES

logger = logging.getLogger(__name__)

_DEFAULT_PARAMETERS = {
    "brownian": (),
    "matern": (2.0,),
    "gaussian": (1.0,),
}


@dataclass(frozen=True)
class KernelFamily:
    """A univariate base kernel.

    ``parameters`` is empty for the three fixed forms; a single value overrides
    the Matern rate (default 2) or the Gaussian length scale (default 1).
    """

    variant: str
    parameters: Tuple[float, ...] = ()

    def __post_init__(self):
        variant = self.variant.lower()
        if variant not in KERNEL_FAMILIES:
            raise ArgumentError(f"Unknown kernel family '{self.variant}'", module=__name__)
        object.__setattr__(self, "variant", variant)
        params = tuple(float(p) for p in self.parameters)
        if variant == "brownian" and params:
            raise ArgumentError("The Brownian kernel takes no parameters", module=__name__)
        if len(params) > 1:
            raise ArgumentError(f"{variant} kernel takes at most one parameter", module=__name__)
        if params and params[0] <= 0:
            raise ArgumentError(f"{variant} kernel parameter must be positive", module=__name__)
        object.__setattr__(self, "parameters", params)

    @property
    def name(self) -> str:
        return self.variant

    def _parameter(self) -> float:
        return (self.parameters or _DEFAULT_PARAMETERS[self.variant])[0]

    def evaluate(self, x, xp) -> np.ndarray:
        """Broadcasting evaluation, no support checks"""
        x = np.asarray(x, dtype=float)
        xp = np.asarray(xp, dtype=float)
        if self.variant == "brownian":
            return 1.0 + np.minimum(x, xp)
        r = np.abs(x - xp)
        if self.variant == "matern":
            rate = self._parameter()
            return (1.0 + rate * r) * np.exp(-rate * r)
        scale = self._parameter()
        return np.exp(-(r / scale) ** 2)

    def to_dict(self) -> Dict:
        return {"family": self.variant, "parameters": list(self.parameters)}


@dataclass(frozen=True, eq=False)
class MarginalDistribution:
    """Marginal law of one input coordinate, represented by a node/weight table"""

    lo: float
    hi: float
    nodes: np.ndarray
    weights: np.ndarray
    kind: str = "table"
    description: Dict = field(default_factory=dict)

    def __post_init__(self):
        nodes = np.array(self.nodes, dtype=float).ravel()
        weights = np.array(self.weights, dtype=float).ravel()
        if nodes.size == 0 or nodes.shape != weights.shape:
            raise ArgumentError("Quadrature nodes and weights must be nonempty and aligned",
                                module=__name__)
        if not self.lo < self.hi:
            raise ArgumentError(f"Empty support [{self.lo}, {self.hi}]", module=__name__)
        if np.any(weights < 0) or abs(weights.sum() - 1.0) > 1e-12:
            raise ArgumentError("Quadrature weights must be nonnegative and sum to 1",
                                module=__name__)
        if np.any(nodes < self.lo) or np.any(nodes > self.hi):
            raise ArgumentError("Quadrature nodes must lie in the support", module=__name__)
        nodes.setflags(write=False)
        weights.setflags(write=False)
        object.__setattr__(self, "nodes", nodes)
        object.__setattr__(self, "weights", weights)

    @classmethod
    def uniform(cls, lo: float = 0.0, hi: float = 1.0,
                n_nodes: int = KERNEL_DEFAULTS["quadrature_nodes"]) -> "MarginalDistribution":
        """Uniform law on [lo, hi] with Gauss-Legendre nodes"""
        t, w = leggauss(int(n_nodes))
        nodes = lo + (hi - lo) * (t + 1.0) / 2.0
        weights = w / w.sum()
        return cls(lo, hi, nodes, weights, kind="uniform",
                   description={"kind": "uniform", "lo": lo, "hi": hi, "nodes": int(n_nodes)})

    @classmethod
    def from_table(cls, points: Sequence[float], weights: Sequence[float],
                   lo: Optional[float] = None, hi: Optional[float] = None) -> "MarginalDistribution":
        points = np.asarray(points, dtype=float)
        weights = np.asarray(weights, dtype=float)
        if weights.size and np.all(weights >= 0) and weights.sum() > 0:
            weights = weights / weights.sum()
        lo = float(points.min()) if lo is None else float(lo)
        hi = float(points.max()) if hi is None else float(hi)
        return cls(lo, hi, points, weights, kind="table",
                   description={"kind": "table", "lo": lo, "hi": hi,
                                "points": points.tolist(), "weights": weights.tolist()})

    @classmethod
    def from_sampler(cls, sampler: Callable[[np.random.Generator, int], np.ndarray],
                     lo: float, hi: float,
                     n_samples: int = KERNEL_DEFAULTS["monte_carlo_samples"],
                     seed: int = KERNEL_DEFAULTS["monte_carlo_seed"]) -> "MarginalDistribution":
        """Monte Carlo fallback for laws only available through a sampler"""
        rng = np.random.default_rng(seed)
        samples = np.asarray(sampler(rng, int(n_samples)), dtype=float).ravel()
        weights = np.full(samples.size, 1.0 / samples.size)
        return cls(lo, hi, samples, weights, kind="monte_carlo",
                   description={"kind": "monte_carlo", "lo": lo, "hi": hi,
                                "samples": int(n_samples), "seed": int(seed)})

    @property
    def support(self) -> Tuple[float, float]:
        return (self.lo, self.hi)

    def contains(self, x, tol: float = KERNEL_DEFAULTS["support_tolerance"]) -> bool:
        x = np.asarray(x, dtype=float)
        return bool(np.all((x >= self.lo - tol) & (x <= self.hi + tol)))

    def check(self, x, what: str = "input") -> None:
        x = np.asarray(x, dtype=float)
        if not np.all(np.isfinite(x)) or not self.contains(x):
            raise DomainError(f"{what} outside support [{self.lo}, {self.hi}]", module=__name__)

    def sample(self, rng: np.random.Generator, size: int) -> np.ndarray:
        """Draw from the law; uniform marginals sample exactly, tables by weight"""
        if self.kind == "uniform":
            return rng.uniform(self.lo, self.hi, size)
        return rng.choice(self.nodes, size=size, p=self.weights)


class CenteredKernel:
    """
    Centered kernel k0(x, x') = k(x, x') - m(x) m(x') / G where m(x) = E_U k(x, U)
    and G = E_{U,V} k(U, V) under the marginal. Immutable after construction.
    """

    def __init__(self, base: KernelFamily, marginal: MarginalDistribution,
                 inner_size: int = KERNEL_DEFAULTS["monte_carlo_inner"]):
        self.base = base
        self.marginal = marginal
        nodes, weights = marginal.nodes, marginal.weights
        if marginal.kind == "monte_carlo" and nodes.size > inner_size:
            # strided subsample of the draws; m and G are both taken under it
            stride = -(-nodes.size // int(inner_size))
            nodes = nodes[::stride]
            weights = np.full(nodes.size, 1.0 / nodes.size)
        self.inner_nodes = nodes
        self.inner_weights = weights
        means = self.mean_embedding(nodes)
        means.setflags(write=False)
        self.cached_means = means
        grand = float(weights @ means)
        if not grand > 0:
            raise KernelConstructionError(
                f"Degenerate {base.name} kernel: grand mean {grand:.3e} is not positive",
                module=__name__)
        self.cached_grand_mean = grand

    @property
    def name(self) -> str:
        return self.base.name

    def mean_embedding(self, x) -> np.ndarray:
        """E_U k(x, U), recomputed by quadrature at every x, in row chunks"""
        x = np.asarray(x, dtype=float)
        flat = x.ravel()
        nodes, weights = self.inner_nodes, self.inner_weights
        values = np.empty(flat.size)
        step = max(1, KERNEL_DEFAULTS["embedding_chunk"] // nodes.size)
        for start in range(0, flat.size, step):
            block = flat[start:start + step]
            values[start:start + step] = self.base.evaluate(block[:, None], nodes[None, :]) @ weights
        return values.reshape(x.shape)

    def __call__(self, x, xp) -> np.ndarray:
        self.marginal.check(x)
        self.marginal.check(xp)
        x = np.asarray(x, dtype=float)
        xp = np.asarray(xp, dtype=float)
        return (self.base.evaluate(x, xp)
                - self.mean_embedding(x) * self.mean_embedding(xp) / self.cached_grand_mean)

    def gram(self, xa, xb=None) -> np.ndarray:
        """Matrix of k0(xa_i, xb_j)"""
        xa = np.asarray(xa, dtype=float).ravel()
        xb = xa if xb is None else np.asarray(xb, dtype=float).ravel()
        self.marginal.check(xa)
        self.marginal.check(xb)
        ma = self.mean_embedding(xa)
        mb = ma if xb is xa else self.mean_embedding(xb)
        return self.base.evaluate(xa[:, None], xb[None, :]) - np.outer(ma, mb) / self.cached_grand_mean

    def describe(self) -> Dict:
        return {**self.base.to_dict(), "marginal": dict(self.marginal.description)}


def eval_base_kernel(family: KernelFamily, x: float, xp: float,
                     support: Tuple[float, float] = KERNEL_DEFAULTS["support"]) -> float:
    """Evaluate the base kernel at a pair of points of the support"""
    lo, hi = support
    tol = KERNEL_DEFAULTS["support_tolerance"]
    for value in (x, xp):
        if not (np.isfinite(value) and lo - tol <= value <= hi + tol):
            raise DomainError(f"Point {value} outside support [{lo}, {hi}]", module=__name__)
    return float(family.evaluate(x, xp))


def center_kernel(base: KernelFamily, marginal: Optional[MarginalDistribution] = None) -> CenteredKernel:
    """Center a base kernel against a marginal (Uniform[0,1] by default)"""
    marginal = marginal or MarginalDistribution.uniform()
    kernel = CenteredKernel(base, marginal)
    logger.debug(f"Centered {base.name} kernel, grand mean {kernel.cached_grand_mean:.6f}")
    return kernel


def _check_subset(centered: Sequence[CenteredKernel], v) -> Tuple[int, ...]:
    members = tuple(getattr(v, "members", v))
    if not members:
        raise ArgumentError("ANOVA kernel needs a nonempty variable subset", module=__name__)
    if min(members) < 1 or max(members) > len(centered):
        raise ArgumentError(f"Subset {members} out of range for d={len(centered)}", module=__name__)
    return members


def eval_anova_kernel(centered: Sequence[CenteredKernel], v, x_v, xp_v) -> float:
    """Product over a in v of k0_a(x_a, x'_a); x_v and x'_v are ordered like v"""
    members = _check_subset(centered, v)
    x_v = np.atleast_1d(np.asarray(x_v, dtype=float))
    xp_v = np.atleast_1d(np.asarray(xp_v, dtype=float))
    if x_v.size != len(members) or xp_v.size != len(members):
        raise ArgumentError("Point dimension does not match the subset size", module=__name__)
    value = 1.0
    for position, a in enumerate(members):
        value *= float(centered[a - 1](x_v[position], xp_v[position]))
    return value


def anova_cross_gram(centered: Sequence[CenteredKernel], v, XA: np.ndarray,
                     XB: Optional[np.ndarray] = None,
                     univariate: Optional[Dict[int, np.ndarray]] = None) -> np.ndarray:
    """
    Matrix of k_v(XA_i, XB_j) for full-width designs, as the Hadamard product of
    the univariate centered Gram matrices. ``univariate`` caches per-coordinate
    factors across groups.
    """
    members = _check_subset(centered, v)
    XA = np.asarray(XA, dtype=float)
    XB = XA if XB is None else np.asarray(XB, dtype=float)
    result = None
    for a in members:
        if univariate is not None and a in univariate:
            factor = univariate[a]
        else:
            factor = centered[a - 1].gram(XA[:, a - 1], XB[:, a - 1])
            if univariate is not None:
                univariate[a] = factor
        result = factor.copy() if result is None else result * factor
    return result


def build_kernels(family: KernelFamily, marginals: Sequence[MarginalDistribution]) -> Tuple[CenteredKernel, ...]:
    """One centered kernel per coordinate; identical marginals share one object"""
    cache: Dict[int, CenteredKernel] = {}
    kernels = []
    for marginal in marginals:
        key = id(marginal)
        if key not in cache:
            cache[key] = center_kernel(family, marginal)
        kernels.append(cache[key])
    return tuple(kernels)


def uniform_kernels(family: KernelFamily, d: int,
                    n_nodes: int = KERNEL_DEFAULTS["quadrature_nodes"]) -> Tuple[CenteredKernel, ...]:
    marginal = MarginalDistribution.uniform(0.0, 1.0, n_nodes)
    return build_kernels(family, [marginal] * d)
