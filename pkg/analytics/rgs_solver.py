"""
Ridge Group Sparse Solver for the sparse ANOVA metamodel workbench
Block coordinate descent on
    ||Y - f0 1 - sum_v K_v theta_v||^2 + sum_v gamma'_v ||K_v theta_v|| + sum_v mu'_v ||K_v^1/2 theta_v||
All block computations run in the eigenbasis of K_v, where K_v is diagonal.
"""

import logging
from dataclasses import dataclass, field
from typing import Dict, List, Mapping, Optional

import numpy as np
from scipy import optimize

from analytics.errors import ArgumentError, NumericalError, SolverError
from analytics.gram_system import GramBundle, GroupIndex
from config import SOLVER_DEFAULTS

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class PenaltyWeights:
    """Per-group penalties mu'_v (RKHS norm) and gamma'_v (empirical norm)"""

    mu_prime: Mapping[GroupIndex, float]
    gamma_prime: Mapping[GroupIndex, float]

    def __post_init__(self):
        for name, values in (("mu'", self.mu_prime), ("gamma'", self.gamma_prime)):
            for v, value in values.items():
                if not np.isfinite(value) or value < 0:
                    raise ArgumentError(f"{name} for group {v.label} must be a finite nonnegative number",
                                        module=__name__)

    @classmethod
    def scaled(cls, mu: float, gamma: float, omega: Mapping[GroupIndex, float],
               zeta: Mapping[GroupIndex, float]) -> "PenaltyWeights":
        """mu'_v = mu * omega_v and gamma'_v = gamma * zeta_v"""
        return cls({v: mu * w for v, w in omega.items()}, {v: gamma * z for v, z in zeta.items()})

    def mu(self, v: GroupIndex) -> float:
        return float(self.mu_prime.get(v, 0.0))

    def gamma(self, v: GroupIndex) -> float:
        return float(self.gamma_prime.get(v, 0.0))

    def scale(self, c: float) -> "PenaltyWeights":
        return PenaltyWeights({v: c * m for v, m in self.mu_prime.items()},
                              {v: c * g for v, g in self.gamma_prime.items()})


@dataclass
class SolverState:
    f0: float = 0.0
    theta: Dict[GroupIndex, np.ndarray] = field(default_factory=dict)

    @property
    def support(self) -> List[GroupIndex]:
        return sorted((v for v, t in self.theta.items() if np.linalg.norm(t) > 0),
                      key=GroupIndex.sort_key)

    def copy(self) -> "SolverState":
        return SolverState(self.f0, {v: t.copy() for v, t in self.theta.items()})


@dataclass
class FitResult:
    state: SolverState
    objective_trace: List[float]
    sweeps: int
    converged: bool
    final_step_norm: float

    @property
    def objective(self) -> float:
        return self.objective_trace[-1]


@dataclass(frozen=True)
class SolverConfig:
    tol: float = SOLVER_DEFAULTS["tol"]
    max_sweeps: int = SOLVER_DEFAULTS["max_sweeps"]
    block_tol: float = SOLVER_DEFAULTS["block_tol"]
    block_max_iter: int = SOLVER_DEFAULTS["block_max_iter"]
    damping: float = SOLVER_DEFAULTS["damping"]
    min_damping: float = SOLVER_DEFAULTS["min_damping"]
    zero_threshold: float = SOLVER_DEFAULTS["zero_threshold"]
    root_tol: float = SOLVER_DEFAULTS["root_tol"]
    allow_zero_mu: bool = SOLVER_DEFAULTS["allow_zero_mu"]

    def __post_init__(self):
        if self.tol <= 0 or self.block_tol <= 0 or self.root_tol <= 0:
            raise ArgumentError("Solver tolerances must be positive", module=__name__)
        if self.max_sweeps < 1 or self.block_max_iter < 1:
            raise ArgumentError("Iteration limits must be at least 1", module=__name__)
        if not 0 < self.min_damping <= self.damping <= 1:
            raise ArgumentError("Need 0 < min_damping <= damping <= 1", module=__name__)


def _contribution(bundle: GramBundle, theta: Optional[np.ndarray]) -> np.ndarray:
    if theta is None:
        return np.zeros(bundle.n)
    return bundle.K @ theta


def objective(state: SolverState, Y: np.ndarray, grams: Mapping[GroupIndex, GramBundle],
              weights: Optional[PenaltyWeights] = None) -> float:
    """Value of the penalized least-squares criterion at (f0, theta)"""
    Y = np.asarray(Y, dtype=float)
    fitted = np.full(Y.shape, state.f0)
    penalty = 0.0
    for v, theta in state.theta.items():
        bundle = grams[v]
        K_theta = bundle.K @ theta
        fitted = fitted + K_theta
        if weights is not None:
            penalty += weights.gamma(v) * np.linalg.norm(K_theta)
            penalty += weights.mu(v) * np.linalg.norm(bundle.K_sqrt @ theta)
    return float(np.sum((Y - fitted) ** 2) + penalty)


def update_intercept(Y: np.ndarray, state: SolverState,
                     grams: Mapping[GroupIndex, GramBundle]) -> float:
    """f0 = mean(Y) - sum_v mean(K_v theta_v)"""
    f0 = float(np.mean(Y))
    for v, theta in state.theta.items():
        f0 -= float(np.mean(grams[v].K @ theta))
    return f0


def residual(Y: np.ndarray, state: SolverState, v: GroupIndex,
             grams: Mapping[GroupIndex, GramBundle]) -> np.ndarray:
    """Partial residual R_v = Y - f0 - sum_{w != v} K_w theta_w"""
    R = np.asarray(Y, dtype=float) - state.f0
    for w, theta in state.theta.items():
        if w != v:
            R = R - grams[w].K @ theta
    return R


def block_objective(theta: np.ndarray, R: np.ndarray, bundle: GramBundle,
                    mu: float, gamma: float) -> float:
    """||R - K theta||^2 + gamma ||K theta|| + mu ||K^1/2 theta||"""
    K_theta = bundle.K @ theta
    return float(np.sum((R - K_theta) ** 2) + gamma * np.linalg.norm(K_theta)
                 + mu * np.linalg.norm(bundle.K_sqrt @ theta))


def _eigen_block_objective(z: np.ndarray, r: np.ndarray, lam: np.ndarray, mu: float, gamma: float) -> float:
    return float(np.sum((r - lam * z) ** 2) + gamma * np.linalg.norm(lam * z)
                 + mu * np.linalg.norm(np.sqrt(lam) * z))


def _ridge_dual_norm(rho: float, r: np.ndarray, lam: np.ndarray, mu: float) -> float:
    return float(np.linalg.norm(2.0 * mu * np.sqrt(lam) * r / (mu * mu + rho * lam)))


def zero_test(R_v: np.ndarray, bundle: GramBundle, mu: float, gamma: float,
              root_tol: float = SOLVER_DEFAULTS["root_tol"]) -> bool:
    """True iff theta_v = 0 minimizes the block subproblem for the partial residual R_v"""
    if mu < 0 or gamma < 0:
        raise ArgumentError("Penalties must be nonnegative", module=__name__)
    if mu == 0 and gamma == 0:
        raise ArgumentError("Zero test needs at least one positive penalty", module=__name__)
    R_v = np.asarray(R_v, dtype=float)
    if mu == 0:
        return bool(2.0 * np.linalg.norm(R_v) <= gamma)

    lam = bundle.eigenvalues
    r = bundle.rotate(R_v)
    if 2.0 * np.linalg.norm(np.sqrt(lam) * r) <= mu:
        return True
    if gamma == 0:
        return False

    # ridge multiplier rho* with ||beta(rho*)|| = 1; the norm decreases in rho
    def excess(log_rho: float) -> float:
        return _ridge_dual_norm(np.exp(log_rho), r, lam, mu) - 1.0

    lo, hi = np.log(1e-12), 0.0
    for _ in range(200):
        if excess(lo) > 0:
            break
        lo -= 10.0
    for _ in range(2000):
        if excess(hi) < 0:
            break
        hi += np.log(2.0)
    try:
        log_rho = optimize.brentq(excess, lo, hi, xtol=root_tol, rtol=4 * np.finfo(float).eps)
    except ValueError as e:
        raise NumericalError(f"Zero test root search did not bracket for group {bundle.group.label}: {e}",
                             module=__name__, group=bundle.group.label)
    rho = np.exp(log_rho)
    J = float(np.sum((2.0 * r * rho * lam / (mu * mu + rho * lam)) ** 2))
    logger.debug(f"Zero test {bundle.group.label}: rho*={rho:.3e}, J*={J:.3e}, gamma'^2={gamma ** 2:.3e}")
    return J <= gamma * gamma


def solve_block_mu0(R_v: np.ndarray, bundle: GramBundle, gamma: float) -> np.ndarray:
    """Closed form block minimizer without the RKHS penalty: (1 - gamma'/||2R||)_+ K^-1 R"""
    if gamma < 0:
        raise ArgumentError("gamma' must be nonnegative", module=__name__)
    R_v = np.asarray(R_v, dtype=float)
    norm = 2.0 * np.linalg.norm(R_v)
    if norm <= gamma or norm == 0:
        return np.zeros_like(R_v)
    shrink = 1.0 - gamma / norm
    return shrink * bundle.unrotate(bundle.rotate(R_v) / bundle.eigenvalues)


def _fixed_point_map(z: np.ndarray, r: np.ndarray, lam: np.ndarray, mu: float, gamma: float) -> np.ndarray:
    rho1 = gamma / (2.0 * np.linalg.norm(lam * z)) if gamma > 0 else 0.0
    rho2 = mu / (2.0 * np.linalg.norm(np.sqrt(lam) * z))
    return r / (rho2 + (1.0 + rho1) * lam)


def _multiplier_solution(r: np.ndarray, lam: np.ndarray, mu: float, gamma: float,
                         root_tol: float, group: str) -> np.ndarray:
    """
    Solve the block by its two scalar multipliers: z = r / (rho2 + a lam) with
    2 rho2 ||lam^1/2 z|| = mu' and 2 (a - 1) ||lam z|| = gamma'.
    """
    s = np.sqrt(lam) * r

    def rho2_for(a: float) -> float:
        def excess(log_rho: float) -> float:
            rho = np.exp(log_rho)
            return 2.0 * np.linalg.norm(s * rho / (rho + a * lam)) - mu

        lo, hi = np.log(1e-300) / 2.0, 0.0
        for _ in range(2000):
            if excess(hi) > 0:
                break
            hi += np.log(2.0)
        return float(np.exp(optimize.brentq(excess, lo, hi, xtol=root_tol)))

    def z_for(a: float) -> np.ndarray:
        return r / (rho2_for(a) + a * lam)

    try:
        if gamma == 0:
            return z_for(1.0)

        def outer(log_excess: float) -> float:
            a = 1.0 + np.exp(log_excess)
            return 2.0 * (a - 1.0) * np.linalg.norm(lam * z_for(a)) - gamma

        lo, hi = np.log(1e-16), 0.0
        for _ in range(2000):
            if outer(hi) > 0:
                break
            hi += np.log(2.0)
        log_excess = optimize.brentq(outer, lo, hi, xtol=root_tol)
        return z_for(1.0 + np.exp(log_excess))
    except (ValueError, RuntimeError) as e:
        raise NumericalError(f"Multiplier equations did not bracket for group {group}: {e}",
                             module=__name__, group=group)


def solve_block(R_v: np.ndarray, bundle: GramBundle, mu: float, gamma: float,
                tol: float = SOLVER_DEFAULTS["block_tol"],
                max_iter: int = SOLVER_DEFAULTS["block_max_iter"],
                theta0: Optional[np.ndarray] = None,
                damping: float = SOLVER_DEFAULTS["damping"],
                min_damping: float = SOLVER_DEFAULTS["min_damping"],
                root_tol: float = SOLVER_DEFAULTS["root_tol"]) -> np.ndarray:
    """
    Nonzero block minimizer for mu' > 0 by damped fixed-point iteration on
    theta = (rho2 I + (1 + rho1) K)^-1 R, warm-started from theta0. Falls back to
    solving the multiplier equations directly when the iteration stalls.
    """
    if mu <= 0:
        raise ArgumentError("solve_block needs mu' > 0; use solve_block_mu0", module=__name__)
    R_v = np.asarray(R_v, dtype=float)
    lam = bundle.eigenvalues
    r = bundle.rotate(R_v)
    label = bundle.group.label

    z = bundle.rotate(theta0) if theta0 is not None and np.linalg.norm(theta0) > 0 else None
    if z is None or np.linalg.norm(np.sqrt(lam) * z) == 0:
        z = r / (lam + mu)
    if np.linalg.norm(np.sqrt(lam) * z) == 0:
        raise NumericalError(f"Degenerate start for group {label}", module=__name__, group=label)

    beta = damping
    value = _eigen_block_objective(z, r, lam, mu, gamma)
    step_norm = np.inf
    for iteration in range(max_iter):
        step = _fixed_point_map(z, r, lam, mu, gamma) - z
        step_norm = float(np.linalg.norm(step))
        if step_norm <= tol * max(1.0, float(np.linalg.norm(z))):
            return bundle.unrotate(z)
        while True:
            candidate = z + beta * step
            candidate_value = _eigen_block_objective(candidate, r, lam, mu, gamma)
            if candidate_value <= value or beta <= min_damping:
                break
            beta = max(beta / 2.0, min_damping)
        z, value = candidate, candidate_value

    logger.debug(f"Fixed point for group {label} stalled at step {step_norm:.3e}, "
                 f"solving multiplier equations")
    z = _multiplier_solution(r, lam, mu, gamma, root_tol, label)
    step_norm = float(np.linalg.norm(_fixed_point_map(z, r, lam, mu, gamma) - z))
    if step_norm > max(tol, 1e3 * root_tol) * max(1.0, float(np.linalg.norm(z))):
        raise NumericalError(f"Block solver did not converge for group {label}",
                             module=__name__, group=label, residual=step_norm)
    return bundle.unrotate(z)


def _solve_group(R: np.ndarray, bundle: GramBundle, mu: float, gamma: float,
                 theta_old: Optional[np.ndarray], config: SolverConfig) -> Optional[np.ndarray]:
    if mu == 0 and gamma == 0:
        return bundle.unrotate(bundle.rotate(R) / bundle.eigenvalues)
    if zero_test(R, bundle, mu, gamma, config.root_tol):
        return None
    if mu == 0:
        return solve_block_mu0(R, bundle, gamma)
    return solve_block(R, bundle, mu, gamma, config.block_tol, config.block_max_iter,
                       theta0=theta_old, damping=config.damping, min_damping=config.min_damping,
                       root_tol=config.root_tol)


def _relative_change(old: Optional[np.ndarray], new: Optional[np.ndarray]) -> float:
    old_norm = 0.0 if old is None else float(np.linalg.norm(old))
    new_norm = 0.0 if new is None else float(np.linalg.norm(new))
    scale = max(old_norm, new_norm)
    if scale == 0:
        return 0.0
    if old is None or new is None:
        return 1.0
    return float(np.linalg.norm(new - old)) / scale


def fit(Y: np.ndarray, grams: Mapping[GroupIndex, GramBundle], weights: PenaltyWeights,
        config: Optional[SolverConfig] = None, init: Optional[SolverState] = None) -> FitResult:
    """
    Cyclic block coordinate descent. Each sweep refreshes f0 before every block,
    runs the zero test and either clears theta_v or solves the nonzero block.
    Stops when the largest relative block change is below config.tol.
    """
    config = config or SolverConfig()
    Y = np.asarray(Y, dtype=float).ravel()
    n = Y.size
    groups = sorted(grams.keys(), key=GroupIndex.sort_key)
    if not groups:
        raise ArgumentError("No groups to fit", module=__name__)
    for v in groups:
        if grams[v].n != n:
            raise ArgumentError(f"Gram matrix of group {v.label} has size {grams[v].n}, expected {n}",
                                module=__name__)

    mus = np.array([weights.mu(v) for v in groups])
    gammas = np.array([weights.gamma(v) for v in groups])
    if not np.any(mus > 0) and not np.any(gammas > 0):
        raise SolverError("All penalties are zero; the group coefficients are not identifiable",
                          module=__name__)
    if not np.any(mus > 0) and not config.allow_zero_mu:
        raise SolverError("All mu' are zero; set allow_zero_mu to fit without the RKHS penalty",
                          module=__name__)

    theta: Dict[GroupIndex, np.ndarray] = {}
    if init is not None:
        theta = {v: np.array(t, dtype=float) for v, t in init.theta.items() if v in grams}
    contributions = {v: grams[v].K @ t for v, t in theta.items()}
    total = sum(contributions.values(), np.zeros(n))
    state = SolverState(float(np.mean(Y - total)), theta)
    trace = [objective(state, Y, grams, weights)]

    converged = False
    max_change = np.inf
    sweeps = 0
    threshold = config.zero_threshold * n
    for sweeps in range(1, config.max_sweeps + 1):
        max_change = 0.0
        for v in groups:
            bundle = grams[v]
            mu, gamma = weights.mu(v), weights.gamma(v)
            state.f0 = float(np.mean(Y - total))
            old = theta.get(v)
            old_contribution = contributions.get(v)
            R = Y - state.f0 - (total if old is None else total - old_contribution)

            new = _solve_group(R, bundle, mu, gamma, old, config)
            if new is not None and np.linalg.norm(new) <= threshold:
                new = None
            if new is not None and old is not None:
                # keep the previous block when an inexact solve would raise the criterion
                if block_objective(new, R, bundle, mu, gamma) > block_objective(old, R, bundle, mu, gamma):
                    new = old

            max_change = max(max_change, _relative_change(old, new))
            if new is None:
                theta.pop(v, None)
                contributions.pop(v, None)
            else:
                theta[v] = new
                contributions[v] = bundle.K @ new
            total = sum(contributions.values(), np.zeros(n))

        state.f0 = float(np.mean(Y - total))
        trace.append(objective(state, Y, grams, weights))
        logger.debug(f"Sweep {sweeps}: objective {trace[-1]:.10g}, max change {max_change:.3e}, "
                     f"support size {len(theta)}")
        if max_change <= config.tol:
            converged = True
            break

    if not converged:
        logger.warning(f"Solver stopped after {sweeps} sweeps without converging "
                       f"(max change {max_change:.3e})")
    return FitResult(state, trace, sweeps, converged, float(max_change))
