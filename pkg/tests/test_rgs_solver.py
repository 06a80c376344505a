import numpy as np
import pytest
from scipy import optimize

from analytics.errors import ArgumentError, SolverError
from analytics.gram_system import GramSystem, GroupIndex, enumerate_groups
from analytics.model_select import compute_mu_max
from analytics.rgs_solver import (PenaltyWeights, SolverConfig, SolverState, block_objective, fit, objective,
                                  residual, solve_block, solve_block_mu0, update_intercept, zero_test)
from conftest import bundle_from_matrix, random_spd

V1, V2, V12 = GroupIndex.of(1), GroupIndex.of(2), GroupIndex.of(1, 2)


def unit_penalties(grams, mu, gamma):
    ones = {v: 1.0 for v in grams}
    return PenaltyWeights.scaled(mu, gamma, ones, ones)


def fitted_values(state, grams, n):
    return state.f0 + sum((grams[v].K @ t for v, t in state.theta.items()), np.zeros(n))


# criterion pieces

def test_objective_of_the_empty_model(small_problem):
    Y, _, system = small_problem
    state = SolverState(float(Y.mean()), {})
    assert objective(state, Y, system.bundles) == pytest.approx(np.sum((Y - Y.mean()) ** 2))


def test_objective_matches_its_definition(small_problem, rng):
    Y, _, system = small_problem
    grams = system.bundles
    state = SolverState(0.3, {V1: rng.normal(size=8), V12: rng.normal(size=8)})
    weights = PenaltyWeights({V1: 0.5, V2: 1.0, V12: 2.0}, {V1: 0.25, V2: 0.0, V12: 1.5})
    fitted = 0.3 + grams[V1].K @ state.theta[V1] + grams[V12].K @ state.theta[V12]
    expected = np.sum((Y - fitted) ** 2)
    for v, theta in state.theta.items():
        K = grams[v].K
        expected += weights.gamma(v) * np.sqrt(theta @ K @ K @ theta) + weights.mu(v) * np.sqrt(theta @ K @ theta)
    assert objective(state, Y, grams, weights) == pytest.approx(expected, rel=1e-10)
    # zero penalties leave the residual sum of squares
    assert objective(state, Y, grams, PenaltyWeights({}, {})) == pytest.approx(np.sum((Y - fitted) ** 2))


def test_intercept_update_is_stationary(small_problem, rng):
    Y, _, system = small_problem
    state = SolverState(0.0, {V2: rng.normal(size=8)})
    state.f0 = update_intercept(Y, state, system.bundles)
    assert abs(np.sum(Y - fitted_values(state, system.bundles, 8))) <= 1e-10 * max(1.0, np.abs(Y).sum())


def test_partial_residual_leaves_out_the_group(small_problem, rng):
    Y, _, system = small_problem
    grams = system.bundles
    state = SolverState(0.5, {V1: rng.normal(size=8), V2: rng.normal(size=8)})
    assert np.allclose(residual(Y, state, V1, grams), Y - 0.5 - grams[V2].K @ state.theta[V2])
    assert np.allclose(residual(Y, state, V12, grams), Y - fitted_values(state, grams, 8))


def test_penalty_weights_validation():
    with pytest.raises(ArgumentError):
        PenaltyWeights({V1: -1.0}, {})
    with pytest.raises(ArgumentError):
        PenaltyWeights({}, {V1: np.inf})
    scaled = PenaltyWeights.scaled(2.0, 3.0, {V1: 0.5}, {V1: 4.0})
    assert scaled.mu(V1) == 1.0 and scaled.gamma(V1) == 12.0
    assert scaled.scale(2.0).mu(V1) == 2.0
    assert scaled.mu(V2) == 0.0


# zero test

def test_zero_test_without_rkhs_penalty():
    bundle = bundle_from_matrix(np.diag([3.0, 2.0, 1.0]))
    R = np.array([0.5, 0.0, 0.0])
    assert zero_test(R, bundle, 0.0, 2.0)
    assert zero_test(R, bundle, 0.0, 1.0)
    assert not zero_test(R, bundle, 0.0, 0.99)


def test_zero_test_without_empirical_penalty():
    bundle = bundle_from_matrix(np.eye(3))
    R = np.array([1.5, 0.0, 0.0])
    assert not zero_test(R, bundle, 2.0, 0.0)
    assert zero_test(R, bundle, 3.0, 0.0)


def test_zero_test_needs_a_penalty():
    bundle = bundle_from_matrix(np.eye(2))
    with pytest.raises(ArgumentError):
        zero_test(np.ones(2), bundle, 0.0, 0.0)
    with pytest.raises(ArgumentError):
        zero_test(np.ones(2), bundle, -1.0, 1.0)


def _subgradient_gap(R, K, mu):
    """min over ||w|| <= 1 of ||2R - mu K^-1/2 w||; theta = 0 is optimal iff this is <= gamma'"""
    values, vectors = np.linalg.eigh(K)
    A = mu * (vectors / np.sqrt(values)) @ vectors.T
    b = 2.0 * R
    result = optimize.minimize(
        lambda w: np.sum((b - A @ w) ** 2), np.zeros(R.size),
        jac=lambda w: -2.0 * A.T @ (b - A @ w), method="SLSQP",
        constraints=[{"type": "ineq", "fun": lambda w: 1.0 - w @ w, "jac": lambda w: -2.0 * w}],
        options={"ftol": 1e-15, "maxiter": 1000})
    return float(np.sqrt(max(result.fun, 0.0)))


def test_zero_test_agrees_with_subgradient_condition():
    rng = np.random.default_rng(2024)
    decisive = 0
    outcomes = set()
    for _ in range(50):
        K = random_spd(rng, 3)
        bundle = bundle_from_matrix(K)
        R = rng.normal(size=3)
        s = 2.0 * np.linalg.norm(np.sqrt(bundle.eigenvalues) * bundle.rotate(R))
        mu = rng.uniform(0.2, 1.5) * s
        gamma = rng.uniform(0.2, 1.5) * 2.0 * np.linalg.norm(R)
        gap = _subgradient_gap(R, bundle.K, mu)
        if abs(gap - gamma) <= 1e-4 * gamma:
            continue
        decisive += 1
        outcomes.add(gap <= gamma)
        assert zero_test(R, bundle, mu, gamma) == (gap <= gamma)
    assert decisive >= 40
    assert outcomes == {True, False}


# block solvers

def test_mu0_block_closed_form():
    rng = np.random.default_rng(5)
    bundle = bundle_from_matrix(random_spd(rng, 4))
    K = bundle.K
    R = rng.normal(size=4)
    assert np.allclose(solve_block_mu0(R, bundle, 0.0), np.linalg.solve(K, R))
    assert not np.any(solve_block_mu0(R, bundle, 2.0 * np.linalg.norm(R)))

    gamma = 0.6 * np.linalg.norm(R)
    theta = solve_block_mu0(R, bundle, gamma)
    K_theta = K @ theta
    gradient = -2.0 * K @ (R - K_theta) + gamma * K @ K_theta / np.linalg.norm(K_theta)
    assert np.linalg.norm(gradient) <= 1e-8 * max(1.0, np.linalg.norm(K @ R))


def _nonzero_instances(seed, count):
    rng = np.random.default_rng(seed)
    instances = []
    while len(instances) < count:
        bundle = bundle_from_matrix(random_spd(rng, 3))
        R = rng.normal(size=3)
        s = 2.0 * np.linalg.norm(np.sqrt(bundle.eigenvalues) * bundle.rotate(R))
        mu = rng.uniform(0.05, 0.5) * s
        gamma = rng.uniform(0.0, 0.5) * 2.0 * np.linalg.norm(R)
        if not zero_test(R, bundle, mu, gamma):
            instances.append((bundle, R, mu, gamma))
    return instances


def test_solve_block_is_a_fixed_point():
    for bundle, R, mu, gamma in _nonzero_instances(11, 10):
        theta = solve_block(R, bundle, mu, gamma)
        lam, z, r = bundle.eigenvalues, bundle.rotate(theta), bundle.rotate(R)
        rho1 = gamma / (2.0 * np.linalg.norm(lam * z))
        rho2 = mu / (2.0 * np.linalg.norm(np.sqrt(lam) * z))
        assert np.linalg.norm(z - r / (rho2 + (1.0 + rho1) * lam)) <= 1e-7 * max(1.0, np.linalg.norm(z))


def test_solve_block_is_stationary():
    for bundle, R, mu, gamma in _nonzero_instances(12, 10):
        K = bundle.K
        theta = solve_block(R, bundle, mu, gamma)
        K_theta = K @ theta
        gradient = (-2.0 * K @ (R - K_theta) + gamma * K @ K_theta / np.linalg.norm(K_theta)
                    + mu * K_theta / np.sqrt(theta @ K_theta))
        assert np.linalg.norm(gradient) <= 1e-6 * max(1.0, np.linalg.norm(K @ R))


def test_solve_block_beats_a_local_grid():
    offsets = np.array(np.meshgrid(*[np.linspace(-1, 1, 7)] * 3)).reshape(3, -1).T
    for bundle, R, mu, gamma in _nonzero_instances(13, 5):
        theta = solve_block(R, bundle, mu, gamma)
        best = block_objective(theta, R, bundle, mu, gamma)
        for radius in (1e-3, 1e-1):
            step = radius * max(1.0, np.linalg.norm(theta))
            values = [block_objective(theta + step * o, R, bundle, mu, gamma) for o in offsets]
            assert min(values) >= best - 1e-10 * max(1.0, best)
        assert best <= block_objective(np.zeros(3), R, bundle, mu, gamma)


def test_solve_block_approaches_mu0_solution():
    for bundle, R, _, gamma in _nonzero_instances(14, 5):
        if 2.0 * np.linalg.norm(R) <= gamma:
            continue
        expected = solve_block_mu0(R, bundle, gamma)
        theta = solve_block(R, bundle, 1e-7, gamma)
        assert np.linalg.norm(theta - expected) <= 1e-4 * max(1.0, np.linalg.norm(expected))


def test_solve_block_warm_start_reaches_the_same_point():
    bundle, R, mu, gamma = _nonzero_instances(15, 1)[0]
    cold = solve_block(R, bundle, mu, gamma)
    warm = solve_block(R, bundle, mu, gamma, theta0=2.0 * cold)
    assert np.allclose(cold, warm, atol=1e-8 * max(1.0, np.linalg.norm(cold)))


def test_solve_block_requires_positive_mu():
    with pytest.raises(ArgumentError):
        solve_block(np.ones(2), bundle_from_matrix(np.eye(2)), 0.0, 1.0)


# full solver

def test_fit_at_mu_max_is_empty(small_problem):
    Y, _, system = small_problem
    grams = system.bundles
    mu_max = compute_mu_max(Y, grams, {v: 1.0 for v in grams})
    result = fit(Y, grams, unit_penalties(grams, mu_max, 0.0))
    assert result.state.support == []
    assert result.state.f0 == pytest.approx(Y.mean())
    below = fit(Y, grams, unit_penalties(grams, 0.99 * mu_max, 0.0))
    assert below.state.support


def test_fit_refuses_unpenalized_problems(small_problem):
    Y, _, system = small_problem
    grams = system.bundles
    with pytest.raises(SolverError):
        fit(Y, grams, unit_penalties(grams, 0.0, 0.0))
    with pytest.raises(SolverError):
        fit(Y, grams, unit_penalties(grams, 0.0, 1.0))
    result = fit(Y, grams, unit_penalties(grams, 0.0, 1.0), SolverConfig(allow_zero_mu=True))
    assert np.isfinite(result.objective)


def test_fit_objective_never_increases(small_problem):
    Y, _, system = small_problem
    grams = system.bundles
    mu_max = compute_mu_max(Y, grams, {v: 1.0 for v in grams})
    for mu, gamma in [(0.5, 0.0), (0.1, 0.2), (0.02, 0.05)]:
        result = fit(Y, grams, unit_penalties(grams, mu * mu_max, gamma * mu_max))
        trace = np.array(result.objective_trace)
        assert np.all(np.diff(trace) <= 1e-10 * trace[0])
        assert result.converged


def _smoothed_oracle(Y, grams, weights, eps=1e-9):
    groups = list(grams)
    n = Y.size

    def unpack(p):
        return p[0], {v: p[1 + k * n:1 + (k + 1) * n] for k, v in enumerate(groups)}

    def value_and_gradient(p):
        f0, theta = unpack(p)
        res = Y - f0 - sum(grams[v].K @ theta[v] for v in groups)
        value = float(res @ res)
        gradient = np.empty_like(p)
        gradient[0] = -2.0 * res.sum()
        for k, v in enumerate(groups):
            K, t = grams[v].K, theta[v]
            K_t = K @ t
            emp = np.sqrt(K_t @ K_t + eps ** 2)
            rkhs = np.sqrt(t @ K_t + eps ** 2)
            value += weights.gamma(v) * emp + weights.mu(v) * rkhs
            gradient[1 + k * n:1 + (k + 1) * n] = (-2.0 * K @ res + weights.gamma(v) * K @ K_t / emp
                                                   + weights.mu(v) * K_t / rkhs)
        return value, gradient

    start = np.zeros(1 + len(groups) * n)
    start[0] = Y.mean()
    result = optimize.minimize(value_and_gradient, start, jac=True, method="BFGS",
                               options={"gtol": 1e-10, "maxiter": 20_000})
    return float(result.fun)


@pytest.mark.parametrize("mu, gamma", [(0.2, 0.0), (0.05, 0.1), (0.01, 0.3)])
def test_fit_reaches_a_generic_optimizer(small_problem, mu, gamma):
    Y, _, system = small_problem
    grams = system.bundles
    mu_max = compute_mu_max(Y, grams, {v: 1.0 for v in grams})
    weights = unit_penalties(grams, mu * mu_max, gamma * mu_max / np.sqrt(Y.size))
    result = fit(Y, grams, weights, SolverConfig(tol=1e-9))
    oracle = _smoothed_oracle(Y, grams, weights)
    assert result.objective <= oracle + 1e-5 * abs(oracle)


def test_fit_reaches_a_generic_optimizer_on_random_instances(matern2):
    rng = np.random.default_rng(2025)
    for _ in range(50):
        X = rng.uniform(size=(5, 2))
        Y = rng.normal(size=5) + np.sin(3.0 * X[:, 0])
        grams = GramSystem(X, matern2, enumerate_groups(2, 2)).bundles
        mu_max = compute_mu_max(Y, grams, {v: 1.0 for v in grams})
        weights = PenaltyWeights({v: mu_max * rng.uniform(0.02, 0.6) for v in grams},
                                 {v: mu_max / np.sqrt(5) * rng.uniform(0.0, 1.0) for v in grams})
        result = fit(Y, grams, weights, SolverConfig(tol=1e-9))
        oracle = _smoothed_oracle(Y, grams, weights)
        assert result.objective <= oracle + 1e-5 * abs(oracle)


def test_fit_blocks_are_optimal_at_convergence(small_problem):
    Y, _, system = small_problem
    grams = system.bundles
    mu_max = compute_mu_max(Y, grams, {v: 1.0 for v in grams})
    weights = unit_penalties(grams, 0.05 * mu_max, 0.1 * mu_max)
    state = fit(Y, grams, weights, SolverConfig(tol=1e-9)).state
    for v, bundle in grams.items():
        R = residual(Y, state, v, grams)
        mu, gamma = weights.mu(v), weights.gamma(v)
        new = np.zeros(8) if zero_test(R, bundle, mu, gamma) else solve_block(R, bundle, mu, gamma)
        old = state.theta.get(v, np.zeros(8))
        assert np.linalg.norm(new - old) <= 1e-5 * max(1.0, np.linalg.norm(old))


def test_fit_is_permutation_equivariant(small_problem, matern2):
    Y, X, system = small_problem
    perm = np.random.default_rng(99).permutation(Y.size)
    permuted = GramSystem(X[perm], matern2, enumerate_groups(2, 2))
    mu_max = compute_mu_max(Y, system.bundles, {v: 1.0 for v in system.bundles})
    config = SolverConfig(tol=1e-9)
    a = fit(Y, system.bundles, unit_penalties(system.bundles, 0.05 * mu_max, 0.05 * mu_max), config)
    b = fit(Y[perm], permuted.bundles, unit_penalties(permuted.bundles, 0.05 * mu_max, 0.05 * mu_max), config)
    assert b.objective == pytest.approx(a.objective, rel=1e-8)
    assert a.state.support == b.state.support
    fitted_a = fitted_values(a.state, system.bundles, 8)
    fitted_b = fitted_values(b.state, permuted.bundles, 8)
    assert np.allclose(fitted_b, fitted_a[perm], atol=1e-5 * max(1.0, np.abs(Y).max()))


def test_larger_penalties_do_not_grow_the_support(small_problem):
    Y, _, system = small_problem
    grams = system.bundles
    mu_max = compute_mu_max(Y, grams, {v: 1.0 for v in grams})
    small = fit(Y, grams, unit_penalties(grams, 0.02 * mu_max, 0.02 * mu_max))
    large = fit(Y, grams, unit_penalties(grams, 0.5 * mu_max, 0.5 * mu_max))
    assert len(large.state.support) <= len(small.state.support)
    assert fit(Y, grams, unit_penalties(grams, mu_max, mu_max)).state.support == []


def test_warm_start_gives_the_same_optimum(small_problem):
    Y, _, system = small_problem
    grams = system.bundles
    mu_max = compute_mu_max(Y, grams, {v: 1.0 for v in grams})
    config = SolverConfig(tol=1e-9)
    first = fit(Y, grams, unit_penalties(grams, 0.2 * mu_max, 0.0), config)
    cold = fit(Y, grams, unit_penalties(grams, 0.1 * mu_max, 0.0), config)
    warm = fit(Y, grams, unit_penalties(grams, 0.1 * mu_max, 0.0), config, init=first.state)
    assert warm.objective == pytest.approx(cold.objective, rel=1e-7)


def test_solver_config_validation():
    with pytest.raises(ArgumentError):
        SolverConfig(tol=0.0)
    with pytest.raises(ArgumentError):
        SolverConfig(damping=0.1, min_damping=0.5)
