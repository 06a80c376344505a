"""
Configuration file for the sparse ANOVA metamodel workbench.
"""
from typing import Dict, List

KERNEL_FAMILIES: List[str] = ["brownian", "matern", "gaussian"]

KERNEL_DEFAULTS = {
    "family": "matern",
    "quadrature_nodes": 256,
    "monte_carlo_samples": 100_000,
    "monte_carlo_seed": 0,
    # inner subsample for mean embeddings under a sampled marginal
    "monte_carlo_inner": 5_000,
    # kernel evaluations held in memory at once by a mean embedding
    "embedding_chunk": 2_000_000,
    "support": (0.0, 1.0),
    # slack on the support bounds when validating inputs
    "support_tolerance": 1e-12,
}

JITTER_POLICY = {
    "relative": 1e-8,
}

SOLVER_DEFAULTS = {
    "tol": 1e-4,
    "max_sweeps": 1000,
    "block_tol": 1e-10,
    "block_max_iter": 200,
    "damping": 0.5,
    "min_damping": 1.0 / 1024,
    "zero_threshold": 1e-12,
    "root_tol": 1e-10,
    "allow_zero_mu": False,
}

TUNING_DEFAULTS = {
    "dmax": 3,
    "lmax": 8,
    "gamma_multipliers": (0.0, 1.0, 0.25, 0.0625, 0.015625),
    "n_lambda": 10,
    "lambda_range": (1e-6, 1.0),
    "weights": "unit",
    "order_base": 2.0,
    "delta": 1.0,
    "cv_folds": 5,
    "seed": 0,
    "threads": 1,
}

BENCHMARK_DEFAULTS = {
    "n": 100,
    "sigma": 0.2,
    "kernel": "matern",
    "replications": 100,
    "rho": 1e-4,
    "procedures": ("gs", "rdg"),
    "seed": 2024,
}

G_FUNCTION_C = (0.2, 0.6, 0.8, 100.0, 100.0)

SENSITIVITY_DEFAULTS = {
    "method": "quadratic",
    "negative_tolerance": 1e-10,
    # sample size and seed for the empirical cross-check when no evaluation design is given
    "empirical_samples": 10_000,
    "empirical_seed": 0,
}

# exit status per error category
EXIT_CODES: Dict[str, int] = {
    "argument": 2,
    "parse": 2,
    "validation": 2,
    "domain": 2,
    "numerical": 3,
    "solver": 3,
    "degenerate": 3,
    "kernel": 3,
    "internal": 1,
}

OUTPUT_FILES = {
    "model": "model.json",
    "sobol": "sobol.json",
    "pe_surface": "pe_surface.csv",
    "ridge_surface": "ridge_surface.csv",
    "benchmark_json": "benchmark.json",
    "benchmark_csv": "benchmark.csv",
    "error": "error.json",
    "dataset": "dataset.csv",
}
