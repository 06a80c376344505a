"""
Sensitivity Engine for the sparse ANOVA metamodel workbench
Variance decomposition of a fitted metamodel and the resulting Sobol indices
"""

import logging
from dataclasses import dataclass, field
from typing import Dict, List, Mapping, Optional, Union

import numpy as np
import pandas as pd

from analytics.errors import ArgumentError, DegenerateModelError, NumericalError
from analytics.gram_system import GroupIndex, OmegaBundle, build_omega, omega_factor
from analytics.model_select import Metamodel, component_values
from config import SENSITIVITY_DEFAULTS

logger = logging.getLogger(__name__)

SENSITIVITY_METHODS = ("quadratic", "empirical", "both")


@dataclass
class SobolReport:
    per_group_variance: Dict[GroupIndex, float]
    total_variance: float
    indices: Dict[GroupIndex, float]
    global_indices: Dict[int, float]
    method: str = "quadratic"
    clamped: List[GroupIndex] = field(default_factory=list)
    empirical_indices: Optional[Dict[GroupIndex, float]] = None

    def to_frame(self) -> pd.DataFrame:
        rows = []
        for v in sorted(self.indices, key=GroupIndex.sort_key):
            row = {"group": v.label, "variance": self.per_group_variance[v], "index": self.indices[v]}
            if self.empirical_indices is not None:
                row["empirical_index"] = self.empirical_indices.get(v, 0.0)
            rows.append(row)
        return pd.DataFrame(rows)


def omegas_for_model(model: Metamodel, groups=None) -> Dict[GroupIndex, OmegaBundle]:
    """Omega matrices on the model's training design for its active groups"""
    groups = model.support if groups is None else groups
    X = model.training_design
    factors = {a: omega_factor(X[:, a - 1], model.kernels[a - 1])
               for a in sorted({a for v in groups for a in v.members})}
    return {v: build_omega(X, v, model.kernels, factors) for v in groups}


def _omega_matrix(omega: Union[OmegaBundle, np.ndarray]) -> np.ndarray:
    return omega.Omega if isinstance(omega, OmegaBundle) else np.asarray(omega, dtype=float)


def variance_quadratic(model: Metamodel, omegas: Mapping[GroupIndex, Union[OmegaBundle, np.ndarray]],
                       negative_tolerance: float = SENSITIVITY_DEFAULTS["negative_tolerance"],
                       clamped: Optional[List[GroupIndex]] = None) -> Dict[GroupIndex, float]:
    """Var(f_v) = theta_v' Omega_v theta_v for every group in the model or in ``omegas``"""
    variances = {}
    for v in sorted(set(model.coefficients) | set(omegas), key=GroupIndex.sort_key):
        theta = model.coefficients.get(v)
        if theta is None or not np.any(theta):
            variances[v] = 0.0
            continue
        if v not in omegas:
            raise ArgumentError(f"No Omega matrix for active group {v.label}", module=__name__)
        Omega = _omega_matrix(omegas[v])
        value = float(theta @ Omega @ theta)
        if value < 0:
            scale = max(1.0, float(theta @ theta) * float(np.abs(Omega).max()))
            if value < -negative_tolerance * scale:
                raise NumericalError(f"Negative variance {value:.3e} for group {v.label}",
                                     module=__name__, group=v.label, residual=value)
            logger.warning(f"Clamped variance {value:.3e} of group {v.label} to 0")
            if clamped is not None:
                clamped.append(v)
            value = 0.0
        variances[v] = value
    return variances


def variance_empirical(model: Metamodel, X_eval: np.ndarray) -> Dict[GroupIndex, float]:
    """Sample variance (m - 1 denominator) of each component over the rows of X_eval"""
    X_eval = np.atleast_2d(np.asarray(X_eval, dtype=float))
    if X_eval.shape[0] < 2:
        raise ArgumentError("Empirical variances need at least two evaluation points", module=__name__)
    return {v: float(np.var(component_values(model, X_eval, v), ddof=1))
            for v in sorted(model.coefficients, key=GroupIndex.sort_key)}


def global_indices(indices: Mapping[GroupIndex, float], d: Optional[int] = None) -> Dict[int, float]:
    """G_a = sum of S_v over the groups containing a"""
    if d is None:
        d = max((max(v.members) for v in indices), default=0)
    return {a: float(sum(s for v, s in indices.items() if a in v)) for a in range(1, d + 1)}


def sobol_indices(variances: Mapping[GroupIndex, float], d: Optional[int] = None,
                  method: str = "quadratic") -> SobolReport:
    total = float(sum(variances.values()))
    if not total > 0:
        raise DegenerateModelError("All component variances are zero; Sobol indices are undefined",
                                   module=__name__)
    indices = {v: float(value) / total for v, value in variances.items()}
    return SobolReport(dict(variances), total, indices, global_indices(indices, d), method)


def sample_inputs(model: Metamodel, size: int = SENSITIVITY_DEFAULTS["empirical_samples"],
                  seed: int = SENSITIVITY_DEFAULTS["empirical_seed"]) -> np.ndarray:
    """Independent draws from each coordinate's marginal"""
    rng = np.random.default_rng(seed)
    return np.column_stack([kernel.marginal.sample(rng, size) for kernel in model.kernels])


def component_covariance(model: Metamodel, X_eval: np.ndarray) -> pd.DataFrame:
    """Empirical covariance between the active components; off-diagonal terms should vanish"""
    support = model.support
    values = np.column_stack([component_values(model, X_eval, v) for v in support])
    labels = [v.label for v in support]
    return pd.DataFrame(np.atleast_2d(np.cov(values, rowvar=False)), index=labels, columns=labels)


def sensitivity_report(model: Metamodel, method: str = SENSITIVITY_DEFAULTS["method"],
                       X_eval: Optional[np.ndarray] = None,
                       omegas: Optional[Mapping[GroupIndex, OmegaBundle]] = None,
                       negative_tolerance: float = SENSITIVITY_DEFAULTS["negative_tolerance"]) -> SobolReport:
    """
    Sobol report by the Omega quadratic form, by empirical variances, or both
    (quadratic indices with the empirical ones attached as a cross-check)
    """
    if method not in SENSITIVITY_METHODS:
        raise ArgumentError(f"Unknown sensitivity method '{method}'", module=__name__)
    if not model.support:
        raise DegenerateModelError("Intercept-only model has no variance to decompose", module=__name__)

    if method == "empirical":
        X_eval = sample_inputs(model) if X_eval is None else X_eval
        return sobol_indices(variance_empirical(model, X_eval), model.d, "empirical")

    clamped: List[GroupIndex] = []
    omegas = omegas_for_model(model) if omegas is None else omegas
    report = sobol_indices(variance_quadratic(model, omegas, negative_tolerance, clamped), model.d, method)
    report.clamped = clamped
    if method == "both":
        X_eval = sample_inputs(model) if X_eval is None else X_eval
        report.empirical_indices = sobol_indices(variance_empirical(model, X_eval), model.d).indices
    return report
