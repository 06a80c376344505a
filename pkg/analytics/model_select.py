"""
Model Selection Engine for the sparse ANOVA metamodel workbench
Tuning grids over (mu, gamma), the regularization path, prediction error on a
test set or by V-fold cross validation, the group-sparse and ridge procedures,
prediction and the per-kernel "mixed" choice
"""

import logging
from dataclasses import dataclass, field, replace
from typing import Dict, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from joblib import Parallel, delayed
from scipy import linalg
from sklearn.model_selection import KFold

from analytics.errors import ArgumentError, DegenerateModelError, MetamodelError, NumericalError
from analytics.gram_system import GramBundle, GramSystem, GroupIndex, enumerate_groups
from analytics.kernel_core import CenteredKernel, anova_cross_gram
from analytics.rgs_solver import FitResult, PenaltyWeights, SolverConfig, fit
from config import TUNING_DEFAULTS

logger = logging.getLogger(__name__)

PROCEDURES = ("gs", "rdg")
WEIGHT_MODES = ("unit", "nu", "order")
TIE_TOLERANCE = 1e-12


def _arrays(data) -> Tuple[np.ndarray, np.ndarray]:
    """Accept a dataset object with Y and X attributes or a (Y, X) pair"""
    if hasattr(data, "Y") and hasattr(data, "X"):
        Y, X = data.Y, data.X
    else:
        Y, X = data
    Y = np.asarray(Y, dtype=float).ravel()
    X = np.atleast_2d(np.asarray(X, dtype=float))
    if X.shape[0] != Y.size:
        raise ArgumentError(f"Response has {Y.size} rows but design has {X.shape[0]}", module=__name__)
    return Y, X


@dataclass(frozen=True)
class TuningGrid:
    mu_values: Tuple[float, ...]
    gamma_values: Tuple[float, ...]
    omega: Mapping[GroupIndex, float]
    zeta: Mapping[GroupIndex, float]
    mu_max: float

    def __post_init__(self):
        mus = np.asarray(self.mu_values, dtype=float)
        if mus.size == 0 or not self.gamma_values:
            raise ArgumentError("Tuning grid is empty", module=__name__)
        if np.any(mus <= 0) or np.any(np.diff(mus) >= 0):
            raise ArgumentError("mu values must be positive and strictly decreasing", module=__name__)
        if any(g < 0 for g in self.gamma_values):
            raise ArgumentError("gamma values must be nonnegative", module=__name__)
        if any(w <= 0 for w in self.omega.values()) or any(z <= 0 for z in self.zeta.values()):
            raise ArgumentError("Penalty weights must be strictly positive", module=__name__)

    def points(self) -> List[Tuple[float, float]]:
        return [(mu, gamma) for gamma in self.gamma_values for mu in self.mu_values]

    def penalties(self, mu: float, gamma: float) -> PenaltyWeights:
        return PenaltyWeights.scaled(mu, gamma, self.omega, self.zeta)


@dataclass(frozen=True)
class TuningSettings:
    dmax: int = TUNING_DEFAULTS["dmax"]
    lmax: int = TUNING_DEFAULTS["lmax"]
    gamma_multipliers: Tuple[float, ...] = TUNING_DEFAULTS["gamma_multipliers"]
    n_lambda: int = TUNING_DEFAULTS["n_lambda"]
    lambda_range: Tuple[float, float] = TUNING_DEFAULTS["lambda_range"]
    weights: str = TUNING_DEFAULTS["weights"]
    order_base: float = TUNING_DEFAULTS["order_base"]
    delta: float = TUNING_DEFAULTS["delta"]
    cv_folds: int = TUNING_DEFAULTS["cv_folds"]
    seed: int = TUNING_DEFAULTS["seed"]
    threads: int = TUNING_DEFAULTS["threads"]
    solver: SolverConfig = field(default_factory=SolverConfig)

    def __post_init__(self):
        if self.dmax < 1:
            raise ArgumentError("dmax must be at least 1", module=__name__)
        if self.lmax < 1:
            raise ArgumentError("lmax must be at least 1", module=__name__)
        if self.weights not in WEIGHT_MODES:
            raise ArgumentError(f"Unknown weight mode '{self.weights}'", module=__name__)
        if self.n_lambda < 1 or not 0 < self.lambda_range[0] <= self.lambda_range[1]:
            raise ArgumentError("Invalid lambda grid settings", module=__name__)
        if any(m < 0 for m in self.gamma_multipliers) or not self.gamma_multipliers:
            raise ArgumentError("gamma multipliers must be nonnegative", module=__name__)
        if self.threads < 1:
            raise ArgumentError("threads must be at least 1", module=__name__)


@dataclass
class Metamodel:
    """f(x) = f0 + sum_v sum_i theta_{v,i} k_v(X_{v,i}, x_v)"""

    f0: float
    coefficients: Dict[GroupIndex, np.ndarray]
    training_design: np.ndarray
    kernels: Tuple[CenteredKernel, ...]
    procedure: str = "gs"
    penalties: Dict[str, object] = field(default_factory=dict)
    warning: Optional[str] = None

    @property
    def support(self) -> List[GroupIndex]:
        return sorted((v for v, t in self.coefficients.items() if np.linalg.norm(t) > 0),
                      key=GroupIndex.sort_key)

    @property
    def kernel_name(self) -> str:
        names = sorted({k.name for k in self.kernels})
        return names[0] if len(names) == 1 else "+".join(names)

    @property
    def d(self) -> int:
        return self.training_design.shape[1]

    def predict(self, X_new: np.ndarray) -> np.ndarray:
        return predict(self, X_new)

    def component_values(self, X: np.ndarray, v: GroupIndex) -> np.ndarray:
        return component_values(self, X, v)


@dataclass
class SelectionResult:
    procedure: str
    pe_surface: pd.DataFrame
    chosen: Dict[str, object]
    model: Metamodel
    pe: float
    kernel: str
    ridge_surface: Optional[pd.DataFrame] = None
    warning: Optional[str] = None
    cv_folds: Optional[int] = None
    seed: Optional[int] = None


def _check_design(model: Metamodel, X_new: np.ndarray) -> np.ndarray:
    X_new = np.atleast_2d(np.asarray(X_new, dtype=float))
    if X_new.shape[1] != model.d:
        raise ArgumentError(f"Design has {X_new.shape[1]} columns, model expects {model.d}",
                            module=__name__)
    return X_new


def component_values(model: Metamodel, X: np.ndarray, v: GroupIndex) -> np.ndarray:
    """f_v evaluated at the rows of X"""
    X = _check_design(model, X)
    theta = model.coefficients.get(v)
    if theta is None:
        return np.zeros(X.shape[0])
    return anova_cross_gram(model.kernels, v, X, model.training_design) @ theta


def predict(model: Metamodel, X_new: np.ndarray) -> np.ndarray:
    X_new = _check_design(model, X_new)
    values = np.full(X_new.shape[0], model.f0)
    cache: Dict[int, np.ndarray] = {}
    for v in model.support:
        values += anova_cross_gram(model.kernels, v, X_new, model.training_design, cache) @ model.coefficients[v]
    return values


def prediction_error(model: Metamodel, test) -> float:
    """Mean squared prediction error on a test set"""
    Y_test, X_test = _arrays(test)
    if Y_test.size == 0:
        raise ArgumentError("Test set is empty", module=__name__)
    return float(np.mean((Y_test - predict(model, X_test)) ** 2))


class _CrossGramCache:
    """Test-by-train kernel matrices per group, computed on first use"""

    def __init__(self, kernels: Sequence[CenteredKernel], X_test: np.ndarray, X_train: np.ndarray):
        self.kernels = kernels
        self.X_test = X_test
        self.X_train = X_train
        self._univariate: Dict[int, np.ndarray] = {}
        self._grams: Dict[GroupIndex, np.ndarray] = {}

    def __getitem__(self, v: GroupIndex) -> np.ndarray:
        if v not in self._grams:
            self._grams[v] = anova_cross_gram(self.kernels, v, self.X_test, self.X_train, self._univariate)
        return self._grams[v]

    def predict(self, f0: float, coefficients: Mapping[GroupIndex, np.ndarray]) -> np.ndarray:
        values = np.full(self.X_test.shape[0], f0)
        for v, theta in coefficients.items():
            values += self[v] @ theta
        return values


def compute_weights(system: GramSystem, mode: str = TUNING_DEFAULTS["weights"],
                    order_base: float = TUNING_DEFAULTS["order_base"],
                    Delta: float = TUNING_DEFAULTS["delta"]) -> Tuple[Dict[GroupIndex, float], Dict[GroupIndex, float]]:
    """Group weights (omega_v, zeta_v) scaling mu and gamma"""
    if mode == "unit":
        omega = {v: 1.0 for v in system.groups}
        return omega, dict(omega)
    if mode == "nu":
        nu = system.nu(Delta)
        if any(value <= 0 for value in nu.values()):
            raise ArgumentError("Empirical rate is zero for some group; use unit weights",
                                module=__name__)
        return {v: value ** 2 for v, value in nu.items()}, dict(nu)
    if mode == "order":
        if order_base <= 0:
            raise ArgumentError("Order weight base must be positive", module=__name__)
        omega = {v: float(order_base) ** (len(v) - 1) for v in system.groups}
        return omega, dict(omega)
    raise ArgumentError(f"Unknown weight mode '{mode}'", module=__name__)


def compute_mu_max(Y: np.ndarray, grams: Mapping[GroupIndex, GramBundle],
                   omega: Mapping[GroupIndex, float]) -> float:
    """Smallest mu at which the empty model solves the gamma = 0 problem"""
    Y = np.asarray(Y, dtype=float)
    centered = Y - float(np.mean(Y))
    # same arithmetic as the gamma' = 0 branch of the zero test
    return float(max(2.0 * np.linalg.norm(np.sqrt(bundle.eigenvalues) * bundle.rotate(centered)) / omega[v]
                     for v, bundle in grams.items()))


def build_grid(mu_max: float, n: int, omega: Mapping[GroupIndex, float], zeta: Mapping[GroupIndex, float],
               lmax: int = TUNING_DEFAULTS["lmax"],
               gamma_multipliers: Sequence[float] = TUNING_DEFAULTS["gamma_multipliers"]) -> TuningGrid:
    """mu_l = mu_max 2^-l for l = 1..lmax; gamma values are multiples of mu_max / sqrt(n)"""
    if not mu_max > 0:
        raise DegenerateModelError("mu_max is zero: the response is constant", module=__name__)
    mu_values = tuple(mu_max * 2.0 ** -level for level in range(1, lmax + 1))
    gamma0 = mu_max / np.sqrt(n)
    gamma_values = tuple(sorted({float(m) * gamma0 for m in gamma_multipliers}, reverse=True))
    logger.info(f"Tuning grid: mu_max={mu_max:.6g}, {len(mu_values)} mu x {len(gamma_values)} gamma values")
    return TuningGrid(mu_values, gamma_values, dict(omega), dict(zeta), float(mu_max))


def prepare_grid(Y: np.ndarray, system: GramSystem, settings: TuningSettings) -> TuningGrid:
    omega, zeta = compute_weights(system, settings.weights, settings.order_base, settings.delta)
    mu_max = compute_mu_max(Y, system.bundles, omega)
    return build_grid(mu_max, system.n, omega, zeta, settings.lmax, settings.gamma_multipliers)


PathResults = Dict[Tuple[float, float], Union[FitResult, MetamodelError]]


def _gamma_path(Y: np.ndarray, grams: Mapping[GroupIndex, GramBundle], grid: TuningGrid, gamma: float,
                config: SolverConfig) -> PathResults:
    results: PathResults = {}
    init = None
    for mu in grid.mu_values:
        try:
            result = fit(Y, grams, grid.penalties(mu, gamma), config, init)
        except MetamodelError as e:
            logger.warning(f"Fit failed at mu={mu:.6g}, gamma={gamma:.6g}: {e}")
            results[(mu, gamma)] = e
            continue
        results[(mu, gamma)] = result
        init = result.state
    return results


def fit_path(train, system: GramSystem, grid: TuningGrid, solver: Optional[SolverConfig] = None,
             threads: int = 1) -> PathResults:
    """
    Fits at every grid point, warm-started along decreasing mu for each gamma.
    Failed points hold the raised error instead of a FitResult.
    """
    Y, _ = _arrays(train)
    solver = solver or SolverConfig()
    paths = Parallel(n_jobs=threads, prefer="threads")(
        delayed(_gamma_path)(Y, system.bundles, grid, gamma, solver) for gamma in grid.gamma_values
    )
    merged: PathResults = {}
    for path in paths:
        merged.update(path)
    return {point: merged[point] for point in grid.points()}


def model_from_fit(result: FitResult, X: np.ndarray, kernels: Sequence[CenteredKernel],
                   mu: float, gamma: float) -> Metamodel:
    state = result.state
    return Metamodel(state.f0, {v: state.theta[v].copy() for v in state.support}, np.array(X, dtype=float),
                     tuple(kernels), procedure="gs", penalties={"mu": mu, "gamma": gamma})


def _path_surface(path: PathResults, cache: _CrossGramCache, Y_test: np.ndarray) -> pd.DataFrame:
    rows = []
    for (mu, gamma), result in path.items():
        if isinstance(result, FitResult):
            state = result.state
            fitted = cache.predict(state.f0, {v: state.theta[v] for v in state.support})
            rows.append({"mu": mu, "gamma": gamma, "pe": float(np.mean((Y_test - fitted) ** 2)),
                         "support_size": len(state.support), "status": "ok"})
        else:
            rows.append({"mu": mu, "gamma": gamma, "pe": np.nan, "support_size": np.nan,
                         "status": result.category})
    return pd.DataFrame(rows, columns=["mu", "gamma", "pe", "support_size", "status"])


def _choose_penalty_point(surface: pd.DataFrame) -> Tuple[float, float, float]:
    """Minimal PE; ties go to the larger mu, then the larger gamma"""
    valid = surface[np.isfinite(surface["pe"])]
    if valid.empty:
        raise NumericalError("Every grid point failed", module=__name__)
    best = valid["pe"].min()
    tied = valid[valid["pe"] - best <= TIE_TOLERANCE]
    row = tied.sort_values(["mu", "gamma"], ascending=[False, False]).iloc[0]
    return float(row["mu"]), float(row["gamma"]), float(row["pe"])


def ridge_refit(train, S: Sequence[GroupIndex], lam: float, grams: Mapping[GroupIndex, GramBundle],
                kernels: Sequence[CenteredKernel] = ()) -> Metamodel:
    """
    Ridge fit restricted to the groups in S:
        ||Y - f0 1 - sum_v K_v theta_v||^2 + lam n sum_v theta_v' K_v theta_v
    Stationarity forces a common theta across groups, leaving the bordered system
        [[K_S + lam n I, 1], [1', 0]] [theta; f0] = [Y; 0] with K_S = sum_v K_v.
    """
    Y, X = _arrays(train)
    S = sorted(S, key=GroupIndex.sort_key)
    if not S:
        raise ArgumentError("Ridge refit needs a nonempty support", module=__name__)
    if not lam > 0:
        raise ArgumentError("Ridge parameter must be positive", module=__name__)
    n = Y.size
    K_S = sum((grams[v].K for v in S), np.zeros((n, n)))
    system = np.zeros((n + 1, n + 1))
    system[:n, :n] = K_S + lam * n * np.eye(n)
    system[:n, n] = 1.0
    system[n, :n] = 1.0
    rhs = np.append(Y, 0.0)
    try:
        solution = linalg.solve(system, rhs, assume_a="sym")
    except (linalg.LinAlgError, ValueError) as e:
        raise NumericalError(f"Singular ridge system for support {[v.label for v in S]}: {e}",
                             module=__name__)
    theta, f0 = solution[:n], float(solution[n])

    stationarity = np.linalg.norm(system @ solution - rhs)
    if stationarity > 1e-8 * max(1.0, np.linalg.norm(Y)):
        logger.warning(f"Ridge stationarity residual {stationarity:.3e} above tolerance")
    return Metamodel(f0, {v: theta.copy() for v in S}, X.copy(), tuple(kernels), procedure="rdg",
                     penalties={"lambda": float(lam)})


def lambda_grid(grams: Mapping[GroupIndex, GramBundle], S: Sequence[GroupIndex],
                n_lambda: int = TUNING_DEFAULTS["n_lambda"],
                lambda_range: Tuple[float, float] = TUNING_DEFAULTS["lambda_range"]) -> np.ndarray:
    """Log-spaced ridge parameters scaled by trace(K_S) / n"""
    n = next(iter(grams.values())).n
    scale = sum(float(np.trace(grams[v].K)) for v in S) / n
    return np.geomspace(lambda_range[0] * scale, lambda_range[1] * scale, n_lambda)


def collect_supports(path: PathResults) -> List[Tuple[GroupIndex, ...]]:
    supports = {tuple(result.state.support) for result in path.values()
                if isinstance(result, FitResult) and result.state.support}
    return sorted(supports, key=lambda S: (len(S), [v.sort_key() for v in S]))


def _support_label(S: Sequence[GroupIndex]) -> str:
    return ";".join(v.label for v in S)


def _choose_ridge_point(surface: pd.DataFrame) -> pd.Series:
    """Minimal PE; ties go to the smaller support, then the larger lambda, then the label"""
    valid = surface[np.isfinite(surface["pe"])]
    if valid.empty:
        raise NumericalError("Every ridge refit failed", module=__name__)
    best = valid["pe"].min()
    tied = valid[valid["pe"] - best <= TIE_TOLERANCE]
    return tied.sort_values(["support_size", "lambda", "support"],
                            ascending=[True, False, True]).iloc[0]


def _ridge_surface(train, test_cache: _CrossGramCache, Y_test: np.ndarray, supports, grams,
                   lambdas: Mapping[Tuple[GroupIndex, ...], np.ndarray]) -> pd.DataFrame:
    rows = []
    for S in supports:
        for lam in lambdas[S]:
            try:
                model = ridge_refit(train, S, lam, grams)
                fitted = test_cache.predict(model.f0, model.coefficients)
                pe = float(np.mean((Y_test - fitted) ** 2))
            except MetamodelError as e:
                logger.warning(f"Ridge refit failed for support {_support_label(S)}: {e}")
                pe = np.nan
            rows.append({"support": _support_label(S), "support_size": len(S),
                         "lambda": float(lam), "pe": pe})
    return pd.DataFrame(rows, columns=["support", "support_size", "lambda", "pe"])


def _intercept_only(Y: np.ndarray, X: np.ndarray, kernels, message: str) -> Metamodel:
    return Metamodel(float(np.mean(Y)), {}, X.copy(), tuple(kernels), procedure="rdg", warning=message)


def _fold_indices(n: int, V: int, seed: int) -> List[Tuple[np.ndarray, np.ndarray]]:
    if V < 2:
        raise ArgumentError("Cross validation needs at least 2 folds", module=__name__)
    if V > n:
        raise ArgumentError(f"Cannot split {n} observations into {V} folds", module=__name__)
    return list(KFold(n_splits=V, shuffle=True, random_state=seed).split(np.arange(n)))


def cross_validate(data, V: int, grid: TuningGrid, system: GramSystem,
                   procedure: str = "gs", settings: Optional[TuningSettings] = None,
                   supports: Optional[Sequence[Tuple[GroupIndex, ...]]] = None) -> pd.DataFrame:
    """
    V-fold prediction error averaged over folds, for every (mu, gamma) point or,
    with procedure 'rdg', for every (lambda, S) pair over the given supports.
    Gram matrices are rebuilt on each training fold.
    """
    settings = settings or TuningSettings()
    Y, X = _arrays(data)
    folds = _fold_indices(Y.size, V, settings.seed)
    if procedure == "rdg":
        if not supports:
            raise ArgumentError("Ridge cross validation needs at least one support", module=__name__)
        lambdas = {S: lambda_grid(system.bundles, S, settings.n_lambda, settings.lambda_range)
                   for S in supports}

    def run_fold(train_idx: np.ndarray, test_idx: np.ndarray) -> pd.DataFrame:
        fold_system = GramSystem(X[train_idx], system.kernels, system.groups)
        cache = _CrossGramCache(system.kernels, X[test_idx], X[train_idx])
        train = (Y[train_idx], X[train_idx])
        if procedure == "rdg":
            return _ridge_surface(train, cache, Y[test_idx], supports, fold_system.bundles, lambdas)
        path = fit_path(train, fold_system, grid, settings.solver)
        return _path_surface(path, cache, Y[test_idx])

    surfaces = Parallel(n_jobs=settings.threads, prefer="threads")(
        delayed(run_fold)(train_idx, test_idx) for train_idx, test_idx in folds
    )
    keys = ["support", "support_size", "lambda"] if procedure == "rdg" else ["mu", "gamma"]
    stacked = pd.concat([s.assign(fold=k) for k, s in enumerate(surfaces)], ignore_index=True)
    # a point failing in any fold is excluded
    averaged = stacked.groupby(keys, sort=False)["pe"].agg(lambda pe: pe.mean() if pe.notna().all() else np.nan)
    surface = averaged.reset_index()
    if procedure != "rdg":
        sizes = stacked.groupby(keys, sort=False)["support_size"].mean().reset_index(drop=True)
        surface["support_size"] = sizes
        surface["status"] = np.where(np.isfinite(surface["pe"]), "ok", "failed")
    logger.info(f"{V}-fold cross validation over {len(surface)} {procedure} configurations")
    return surface


def proc_gs(train, test, grid: TuningGrid, system: GramSystem,
            settings: Optional[TuningSettings] = None,
            path: Optional[PathResults] = None) -> SelectionResult:
    """
    Group-sparse procedure: the fit minimizing prediction error over the grid,
    measured on ``test`` or, when ``test`` is None, by cross validation.
    """
    settings = settings or TuningSettings()
    Y, X = _arrays(train)
    path = path if path is not None else fit_path(train, system, grid, settings.solver, settings.threads)
    if test is not None:
        Y_test, X_test = _arrays(test)
        surface = _path_surface(path, _CrossGramCache(system.kernels, X_test, X), Y_test)
        cv_folds = None
    else:
        surface = cross_validate(train, settings.cv_folds, grid, system, "gs", settings)
        cv_folds = settings.cv_folds
    mu, gamma, pe = _choose_penalty_point(surface)
    result = path[(mu, gamma)]
    if not isinstance(result, FitResult):
        raise result
    model = model_from_fit(result, X, system.kernels, mu, gamma)
    logger.info(f"GS selected mu={mu:.6g}, gamma={gamma:.6g}, PE={pe:.6g}, "
                f"support={[v.label for v in model.support]}")
    return SelectionResult("gs", surface, {"mu": mu, "gamma": gamma}, model, pe,
                           model.kernel_name, cv_folds=cv_folds,
                           seed=settings.seed if cv_folds else None)


def proc_rdg(train, test, grid: TuningGrid, system: GramSystem,
             settings: Optional[TuningSettings] = None,
             path: Optional[PathResults] = None) -> SelectionResult:
    """
    Ridge procedure: refit a ridge model on every distinct support found along
    the grid, then pick lambda per support and the support by prediction error.
    """
    settings = settings or TuningSettings()
    Y, X = _arrays(train)
    path = path if path is not None else fit_path(train, system, grid, settings.solver, settings.threads)
    supports = collect_supports(path)

    if test is not None:
        Y_test, X_test = _arrays(test)
        cache = _CrossGramCache(system.kernels, X_test, X)
        gs_surface = _path_surface(path, cache, Y_test)
    else:
        cache = Y_test = None
        gs_surface = pd.DataFrame([{"mu": mu, "gamma": gamma,
                                    "support_size": len(r.state.support) if isinstance(r, FitResult) else np.nan}
                                   for (mu, gamma), r in path.items()])
    cv_folds = None if test is not None else settings.cv_folds

    if not supports:
        message = "Every fit along the grid has an empty support; returning the intercept-only model"
        logger.warning(message)
        model = _intercept_only(Y, X, system.kernels, message)
        pe = prediction_error(model, test) if test is not None else float(np.mean((Y - Y.mean()) ** 2))
        return SelectionResult("rdg", gs_surface, {"lambda": None, "support": []}, model, pe,
                               model.kernel_name, ridge_surface=pd.DataFrame(
                                   columns=["support", "support_size", "lambda", "pe"]),
                               warning=message, cv_folds=cv_folds)

    if test is not None:
        lambdas = {S: lambda_grid(system.bundles, S, settings.n_lambda, settings.lambda_range)
                   for S in supports}
        ridge_surface = _ridge_surface(train, cache, Y_test, supports, system.bundles, lambdas)
    else:
        ridge_surface = cross_validate(train, settings.cv_folds, grid, system, "rdg", settings, supports)

    row = _choose_ridge_point(ridge_surface)
    S = next(S for S in supports if _support_label(S) == row["support"])
    lam = float(row["lambda"])
    model = ridge_refit(train, S, lam, system.bundles, system.kernels)
    logger.info(f"rdg selected support={row['support']}, lambda={lam:.6g}, PE={row['pe']:.6g}")
    return SelectionResult("rdg", gs_surface, {"lambda": lam, "support": [v.label for v in S]}, model,
                           float(row["pe"]), model.kernel_name, ridge_surface=ridge_surface,
                           cv_folds=cv_folds, seed=settings.seed if cv_folds else None)


class ModelSelector:
    """
    Runs a selection procedure end to end for one training set: Gram system,
    weights, grid, regularization path and the chosen procedure
    """

    def __init__(self, settings: Optional[TuningSettings] = None):
        self.logger = logging.getLogger(__name__)
        self.settings = settings or TuningSettings()

    def prepare(self, train, kernels: Sequence[CenteredKernel]) -> Tuple[GramSystem, TuningGrid]:
        Y, X = _arrays(train)
        if len(kernels) != X.shape[1]:
            raise ArgumentError(f"{len(kernels)} kernels for {X.shape[1]} input columns", module=__name__)
        groups = enumerate_groups(X.shape[1], min(self.settings.dmax, X.shape[1]))
        system = GramSystem(X, kernels, groups, threads=self.settings.threads)
        return system, prepare_grid(Y, system, self.settings)

    def select(self, train, kernels: Sequence[CenteredKernel], test=None,
               procedure: str = "gs") -> SelectionResult:
        if procedure not in PROCEDURES:
            raise ArgumentError(f"Unknown procedure '{procedure}'", module=__name__)
        system, grid = self.prepare(train, kernels)
        path = fit_path(train, system, grid, self.settings.solver, self.settings.threads)
        runner = proc_gs if procedure == "gs" else proc_rdg
        return runner(train, test, grid, system, self.settings, path)

    def select_both(self, train, kernels: Sequence[CenteredKernel], test=None) -> Dict[str, SelectionResult]:
        """Both procedures on one shared regularization path"""
        system, grid = self.prepare(train, kernels)
        path = fit_path(train, system, grid, self.settings.solver, self.settings.threads)
        return {"gs": proc_gs(train, test, grid, system, self.settings, path),
                "rdg": proc_rdg(train, test, grid, system, self.settings, path)}


def choose_kernel_mixed(train, test, kernel_sets: Mapping[str, Sequence[CenteredKernel]],
                        procedure: str = "gs", settings: Optional[TuningSettings] = None) -> SelectionResult:
    """Run the procedure once per kernel and keep the smallest prediction error"""
    if len(kernel_sets) < 2:
        raise ArgumentError("Kernel choice needs at least two kernels", module=__name__)
    selector = ModelSelector(settings)
    best = None
    for name, kernels in kernel_sets.items():
        result = selector.select(train, kernels, test, procedure)
        result.kernel = name
        logger.info(f"Kernel {name}: {procedure} PE={result.pe:.6g}")
        if best is None or result.pe < best.pe - TIE_TOLERANCE:
            best = result
    return best


def with_settings(settings: Optional[TuningSettings], **changes) -> TuningSettings:
    return replace(settings or TuningSettings(), **changes)
