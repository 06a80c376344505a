"""
Sparse ANOVA Metamodel Workbench
Command line front end: fit, tune, sobol, benchmark and gen-data
"""

import argparse
import logging
import sys
from dataclasses import dataclass, fields, replace
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

from dotenv import dotenv_values

from analytics.errors import ArgumentError, MetamodelError, ValidationError
from analytics.kernel_core import KernelFamily, MarginalDistribution, build_kernels
from analytics.model_select import (ModelSelector, TuningSettings, choose_kernel_mixed,
                                    model_from_fit)
from analytics.rgs_solver import fit
from analytics.sensitivity import SENSITIVITY_METHODS, sensitivity_report
from analytics.sim_bench import ReplicationConfig, run_benchmark
from config import (BENCHMARK_DEFAULTS, EXIT_CODES, KERNEL_DEFAULTS, KERNEL_FAMILIES, OUTPUT_FILES,
                    SENSITIVITY_DEFAULTS, TUNING_DEFAULTS)
from data.artifacts import (read_model, selection_summary, write_benchmark, write_error, write_model,
                            write_sobol, write_surfaces)
from data.datasets import Dataset, load_dataset, load_marginals, save_dataset
from data.g_function import GFunctionSpec, analytic_sobol, simulate_dataset
from ui.components import UIComponents

COMMANDS = ("fit", "tune", "sobol", "benchmark", "gen-data")


def _parse_multipliers(text) -> Tuple[float, ...]:
    if isinstance(text, (tuple, list)):
        return tuple(float(v) for v in text)
    try:
        return tuple(float(part) for part in str(text).split(",") if part.strip())
    except ValueError:
        raise ValidationError(f"gamma grid must be comma-separated numbers, got '{text}'", module=__name__)


def _parse_bool(text) -> bool:
    if isinstance(text, bool):
        return text
    return str(text).strip().lower() in ("1", "true", "yes", "on")


@dataclass(frozen=True)
class RunConfig:
    command: str = "tune"
    input: Optional[Path] = None
    test_input: Optional[Path] = None
    marginals: Optional[Path] = None
    model: Optional[Path] = None
    kernel: str = KERNEL_DEFAULTS["family"]
    dmax: int = TUNING_DEFAULTS["dmax"]
    weights: str = TUNING_DEFAULTS["weights"]
    order_base: float = TUNING_DEFAULTS["order_base"]
    lmax: int = TUNING_DEFAULTS["lmax"]
    gamma_grid: Tuple[float, ...] = TUNING_DEFAULTS["gamma_multipliers"]
    procedure: str = "gs"
    cv: Optional[int] = None
    seed: int = TUNING_DEFAULTS["seed"]
    replications: int = BENCHMARK_DEFAULTS["replications"]
    n: int = BENCHMARK_DEFAULTS["n"]
    sigma: float = BENCHMARK_DEFAULTS["sigma"]
    mu: Optional[float] = None
    gamma: float = 0.0
    method: str = SENSITIVITY_DEFAULTS["method"]
    out: Path = Path("out")
    threads: int = TUNING_DEFAULTS["threads"]
    verbose: bool = False
    quiet: bool = False

    def validate(self) -> "RunConfig":
        if self.command not in COMMANDS:
            raise ValidationError(f"Unknown command '{self.command}'", module=__name__)
        for name in ("input", "test_input", "marginals", "model"):
            path = getattr(self, name)
            if path is not None and not Path(path).is_file():
                raise ValidationError(f"--{name.replace('_', '-')} file not found: {path}", module=__name__)
        if self.command in ("fit", "tune") and self.input is None:
            raise ValidationError(f"'{self.command}' needs --input", module=__name__)
        if self.kernel != "mixed" and self.kernel not in KERNEL_FAMILIES:
            raise ValidationError(f"Unknown kernel '{self.kernel}'", module=__name__)
        if self.kernel == "mixed" and self.command == "fit":
            raise ValidationError("'fit' needs a single kernel", module=__name__)
        if self.procedure not in ("gs", "rdg", "both"):
            raise ValidationError(f"Unknown procedure '{self.procedure}'", module=__name__)
        if self.method not in SENSITIVITY_METHODS:
            raise ValidationError(f"Unknown sensitivity method '{self.method}'", module=__name__)
        if self.dmax < 1 or self.lmax < 1 or self.threads < 1 or self.replications < 1:
            raise ValidationError("dmax, lmax, threads and replications must be at least 1", module=__name__)
        if self.cv is not None and self.cv < 2:
            raise ValidationError("--cv needs at least 2 folds", module=__name__)
        if self.n < 2 or self.sigma < 0:
            raise ValidationError("Need n >= 2 and sigma >= 0", module=__name__)
        if (self.mu is not None and self.mu <= 0) or self.gamma < 0:
            raise ValidationError("Need mu > 0 and gamma >= 0", module=__name__)
        if any(m < 0 for m in self.gamma_grid) or not self.gamma_grid:
            raise ValidationError("gamma grid multipliers must be nonnegative", module=__name__)
        return self

    def tuning_settings(self) -> TuningSettings:
        return TuningSettings(dmax=self.dmax, lmax=self.lmax, gamma_multipliers=self.gamma_grid,
                              weights=self.weights, order_base=self.order_base,
                              cv_folds=self.cv or TUNING_DEFAULTS["cv_folds"], seed=self.seed,
                              threads=self.threads)


_CONVERTERS = {
    "input": Path, "test_input": Path, "marginals": Path, "model": Path, "out": Path,
    "dmax": int, "lmax": int, "cv": int, "seed": int, "replications": int, "n": int, "threads": int,
    "order_base": float, "sigma": float, "mu": float, "gamma": float,
    "gamma_grid": _parse_multipliers, "verbose": _parse_bool, "quiet": _parse_bool,
}


def _convert(key: str, value):
    converter = _CONVERTERS.get(key, str)
    try:
        return converter(value)
    except (TypeError, ValueError):
        raise ValidationError(f"Invalid value '{value}' for {key}", module=__name__)


def read_config_file(path: Path) -> Dict:
    """Flat key = value file; keys are flag names with '-' or '_'"""
    if not Path(path).is_file():
        raise ValidationError(f"Config file not found: {path}", module=__name__)
    known = {f.name for f in fields(RunConfig)}
    values = {}
    for key, value in dotenv_values(path).items():
        name = key.strip().lstrip("-").replace("-", "_").lower()
        if name not in known or name == "command":
            raise ValidationError(f"Unknown key '{key}' in {path}", module=__name__)
        if value is not None:
            values[name] = _convert(name, value)
    return values


def merge_config(command: str, file_values: Dict, flag_values: Dict) -> RunConfig:
    """Defaults, then the config file, then explicit flags"""
    merged = {**file_values, **{k: v for k, v in flag_values.items() if v is not None}}
    return replace(RunConfig(command=command), **merged).validate()


class _Parser(argparse.ArgumentParser):
    """Usage errors raise instead of exiting so that they still produce error.json"""

    def error(self, message):
        raise ArgumentError(f"{self.prog}: {message}", module=__name__)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(
        prog="app.py",
        description="Sparse ANOVA kernel metamodels: fitting, tuning, Sobol indices and the g-function benchmark")
    subparsers = parser.add_subparsers(dest="command", required=True)

    common = _Parser(add_help=False)
    common.add_argument("--config", type=Path, help="flat key = value file; flags override it")
    common.add_argument("--out", type=Path, help="output directory (default ./out)")
    common.add_argument("--seed", type=int)
    common.add_argument("--threads", type=int)
    verbosity = common.add_mutually_exclusive_group()
    verbosity.add_argument("--verbose", action="store_true", default=None)
    verbosity.add_argument("--quiet", action="store_true", default=None)

    modelling = _Parser(add_help=False)
    modelling.add_argument("--input", type=Path, help="CSV with header y,x1,...,xd")
    modelling.add_argument("--marginals", type=Path, help="CSV of point,weight[,coordinate] quadrature tables")
    modelling.add_argument("--kernel", choices=KERNEL_FAMILIES + ["mixed"])
    modelling.add_argument("--dmax", type=int)
    modelling.add_argument("--weights", choices=["unit", "nu", "order"])
    modelling.add_argument("--order-base", dest="order_base", type=float)

    grid = _Parser(add_help=False)
    grid.add_argument("--lmax", type=int)
    grid.add_argument("--gamma-grid", dest="gamma_grid", type=_parse_multipliers,
                      help="comma-separated multipliers of mu_max / sqrt(n)")
    grid.add_argument("--procedure", choices=["gs", "rdg", "both"])

    fit_parser = subparsers.add_parser("fit", parents=[common, modelling],
                                       help="fit at one (mu, gamma) point")
    fit_parser.add_argument("--mu", type=float, help="default mu_max / 2")
    fit_parser.add_argument("--gamma", type=float)

    tune_parser = subparsers.add_parser("tune", parents=[common, modelling, grid],
                                        help="select (mu, gamma) or (lambda, S) by prediction error")
    tune_parser.add_argument("--test-input", dest="test_input", type=Path)
    tune_parser.add_argument("--cv", type=int, help="V-fold cross validation when no test set is given")

    sobol_parser = subparsers.add_parser("sobol", parents=[common], help="Sobol indices of a fitted model")
    sobol_parser.add_argument("--model", type=Path, help="default <out>/model.json")
    sobol_parser.add_argument("--method", choices=list(SENSITIVITY_METHODS))

    bench_parser = subparsers.add_parser("benchmark", parents=[common, grid],
                                         help="replicated g-function study")
    bench_parser.add_argument("--n", type=int)
    bench_parser.add_argument("--sigma", type=float)
    bench_parser.add_argument("--kernel", choices=KERNEL_FAMILIES + ["mixed"])
    bench_parser.add_argument("--dmax", type=int)
    bench_parser.add_argument("--weights", choices=["unit", "nu", "order"])
    bench_parser.add_argument("--replications", type=int)

    gen_parser = subparsers.add_parser("gen-data", parents=[common], help="write a simulated g-function dataset")
    gen_parser.add_argument("--n", type=int)
    gen_parser.add_argument("--sigma", type=float)
    return parser


def configure_logging(config: RunConfig) -> None:
    level = logging.DEBUG if config.verbose else logging.WARNING if config.quiet else logging.INFO
    logging.basicConfig(level=level, format="%(asctime)s %(levelname)s %(name)s: %(message)s", force=True)


class MetamodelWorkbench:
    def __init__(self, config: RunConfig):
        self.logger = logging.getLogger(__name__)
        self.config = config
        self.ui = UIComponents()

    def _marginals(self, d: int) -> List[MarginalDistribution]:
        if self.config.marginals is not None:
            return load_marginals(self.config.marginals, d)
        return [MarginalDistribution.uniform(*KERNEL_DEFAULTS["support"])] * d

    def _kernel_sets(self, d: int) -> Dict[str, Tuple]:
        marginals = self._marginals(d)
        names = KERNEL_FAMILIES if self.config.kernel == "mixed" else [self.config.kernel]
        return {name: build_kernels(KernelFamily(name), marginals) for name in names}

    def _load(self, path: Path) -> Dataset:
        marginals = load_marginals(self.config.marginals, self._width(path)) if self.config.marginals else None
        return load_dataset(path, marginals)

    @staticmethod
    def _width(path: Path) -> int:
        with open(path) as handle:
            return max(len(handle.readline().split(",")) - 1, 1)

    def run_fit(self) -> List[Path]:
        train = self._load(self.config.input)
        kernels = self._kernel_sets(train.d)[self.config.kernel]
        selector = ModelSelector(self.config.tuning_settings())
        system, grid = selector.prepare(train, kernels)
        mu = self.config.mu if self.config.mu is not None else grid.mu_max / 2.0
        result = fit(train.Y, system.bundles, grid.penalties(mu, self.config.gamma),
                     selector.settings.solver)
        model = model_from_fit(result, train.X, kernels, mu, self.config.gamma)
        print(self.ui.render_model(model))
        return [write_model(model, self.config.out, {"sweeps": result.sweeps, "converged": result.converged,
                                                     "objective": result.objective,
                                                     "mu_max": grid.mu_max})]

    def run_tune(self) -> List[Path]:
        train = self._load(self.config.input)
        test = self._load(self.config.test_input) if self.config.test_input else None
        settings = self.config.tuning_settings()
        kernel_sets = self._kernel_sets(train.d)
        procedures = ["gs", "rdg"] if self.config.procedure == "both" else [self.config.procedure]

        results = {}
        for procedure in procedures:
            if len(kernel_sets) > 1:
                results[procedure] = choose_kernel_mixed(train, test, kernel_sets, procedure, settings)
            else:
                results[procedure] = ModelSelector(settings).select(
                    train, next(iter(kernel_sets.values())), test, procedure)

        # with both procedures each one gets its own subdirectory
        written = []
        for procedure, result in results.items():
            print(self.ui.render_selection(result))
            out_dir = Path(self.config.out) / procedure if len(results) > 1 else Path(self.config.out)
            written += write_surfaces(result, out_dir)
            written.append(write_model(result.model, out_dir, selection_summary(result)))
        return written

    def run_sobol(self) -> List[Path]:
        path = self.config.model or Path(self.config.out) / OUTPUT_FILES["model"]
        model = read_model(path)
        report = sensitivity_report(model, self.config.method)
        print(self.ui.render_sobol(report))
        return [write_sobol(report, self.config.out)]

    def run_benchmark(self) -> List[Path]:
        procedures = ("gs", "rdg") if self.config.procedure == "both" else (self.config.procedure,)
        config = ReplicationConfig(n=self.config.n, sigma=self.config.sigma, kernel=self.config.kernel,
                                   dmax=self.config.dmax, replications=self.config.replications,
                                   seed=self.config.seed, procedures=procedures,
                                   settings=self.config.tuning_settings(), threads=self.config.threads)
        report = run_benchmark(GFunctionSpec(), config)
        print(self.ui.render_benchmark(report))
        return write_benchmark(report.to_dict(), report.records, self.config.out)

    def run_gen_data(self) -> List[Path]:
        dataset = simulate_dataset(GFunctionSpec(), self.config.n, self.config.sigma, self.config.seed)
        path = save_dataset(dataset, Path(self.config.out) / OUTPUT_FILES["dataset"])
        reference = {v.label: s for v, s in analytic_sobol(GFunctionSpec().c).items() if s > 1e-3}
        print(self.ui.render_card("Generated g-function dataset",
                                  {"n": dataset.n, "d": dataset.d, "sigma": self.config.sigma,
                                   "seed": self.config.seed, **{f"S {k}": v for k, v in reference.items()}}))
        return [path]

    def run(self) -> List[Path]:
        handler = {"fit": self.run_fit, "tune": self.run_tune, "sobol": self.run_sobol,
                   "benchmark": self.run_benchmark, "gen-data": self.run_gen_data}[self.config.command]
        written = handler()
        for path in written:
            self.logger.info(f"Wrote {path}")
        return written


def main(argv: Optional[Sequence[str]] = None) -> int:
    out = Path("out")
    try:
        args = build_parser().parse_args(argv)
        flags = {k: v for k, v in vars(args).items() if k not in ("command", "config")}
        file_values = read_config_file(args.config) if args.config else {}
        out = flags.get("out") or file_values.get("out") or out
        (Path(out) / OUTPUT_FILES["error"]).unlink(missing_ok=True)
        if args.command == "benchmark" and "procedure" not in file_values and flags.get("procedure") is None:
            flags["procedure"] = "both"
        if args.command == "benchmark" and "seed" not in file_values and flags.get("seed") is None:
            flags["seed"] = BENCHMARK_DEFAULTS["seed"]
        config = merge_config(args.command, file_values, flags)
        configure_logging(config)
        MetamodelWorkbench(config).run()
    except MetamodelError as e:
        logging.getLogger(__name__).error(f"{e.category} error in {e.module}: {e}")
        write_error(e, out)
        return EXIT_CODES.get(e.category, 1)
    except Exception as e:
        logging.getLogger(__name__).exception("Unexpected failure")
        write_error(e, out)
        return EXIT_CODES["internal"]
    return 0


if __name__ == "__main__":
    sys.exit(main())
