"""
Artifact Writers for the sparse ANOVA metamodel workbench
JSON and CSV outputs: fitted models, Sobol reports, prediction error surfaces,
benchmark reports and error records
"""

import json
import logging
from pathlib import Path
from typing import Dict, List, Mapping, Optional, Union

import numpy as np
import pandas as pd

from analytics.errors import MetamodelError, ParseError, ValidationError
from analytics.gram_system import GroupIndex
from analytics.kernel_core import KernelFamily, MarginalDistribution, build_kernels
from analytics.model_select import Metamodel, SelectionResult
from analytics.sensitivity import SobolReport
from config import OUTPUT_FILES
from data.datasets import FLOAT_FORMAT

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]
MODEL_SCHEMA = "sparse-anova-metamodel/1"


def _clean(value):
    """Plain JSON types; NaN and infinities become null"""
    if isinstance(value, dict):
        return {str(k): _clean(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_clean(v) for v in value]
    if isinstance(value, np.ndarray):
        return _clean(value.tolist())
    if isinstance(value, (np.integer,)):
        return int(value)
    if isinstance(value, (float, np.floating)):
        value = float(value)
        return value if np.isfinite(value) else None
    if isinstance(value, GroupIndex):
        return value.label
    return value


def write_json(payload: Mapping, path: PathLike) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    # repr of a float round-trips exactly
    path.write_text(json.dumps(_clean(payload), indent=2, sort_keys=True, allow_nan=False) + "\n")
    return path


def read_json(path: PathLike) -> Dict:
    path = Path(path)
    if not path.is_file():
        raise ValidationError(f"File not found: {path}", module=__name__)
    try:
        return json.loads(path.read_text())
    except json.JSONDecodeError as e:
        raise ParseError(f"Invalid JSON in {path}: {e.msg}", module=__name__, line=e.lineno)


def marginal_from_description(description: Mapping) -> MarginalDistribution:
    kind = description.get("kind")
    if kind == "uniform":
        return MarginalDistribution.uniform(description["lo"], description["hi"], description["nodes"])
    if kind == "table":
        return MarginalDistribution.from_table(description["points"], description["weights"],
                                               description["lo"], description["hi"])
    raise ValidationError(f"Cannot rebuild a '{kind}' marginal from its description", module=__name__)


def model_to_dict(model: Metamodel) -> Dict:
    family = model.kernels[0].base
    return {
        "schema": MODEL_SCHEMA,
        "procedure": model.procedure,
        "kernel": {
            **family.to_dict(),
            "marginals": [dict(k.marginal.description) for k in model.kernels],
        },
        "d": model.d,
        "n": int(model.training_design.shape[0]),
        "f0": model.f0,
        "groups": {v.label: model.coefficients[v] for v in model.support},
        "support": [v.label for v in model.support],
        "penalties": dict(model.penalties),
        "training_design": model.training_design,
        "warning": model.warning,
    }


def model_from_dict(payload: Mapping) -> Metamodel:
    try:
        kernel = payload["kernel"]
        family = KernelFamily(kernel["family"], tuple(kernel.get("parameters", ())))
        cache: Dict[str, MarginalDistribution] = {}
        marginals = []
        for description in kernel["marginals"]:
            key = json.dumps(description, sort_keys=True)
            if key not in cache:
                cache[key] = marginal_from_description(description)
            marginals.append(cache[key])
        X = np.asarray(payload["training_design"], dtype=float)
        coefficients = {GroupIndex.parse(label): np.asarray(theta, dtype=float)
                        for label, theta in payload["groups"].items()}
        return Metamodel(float(payload["f0"]), coefficients, X, build_kernels(family, marginals),
                         procedure=payload.get("procedure", "gs"),
                         penalties=dict(payload.get("penalties") or {}), warning=payload.get("warning"))
    except (KeyError, TypeError) as e:
        raise ValidationError(f"Malformed model description: missing or invalid {e}", module=__name__)


def write_model(model: Metamodel, out_dir: PathLike, extra: Optional[Mapping] = None) -> Path:
    payload = model_to_dict(model)
    if extra:
        payload["selection"] = dict(extra)
    return write_json(payload, Path(out_dir) / OUTPUT_FILES["model"])


def read_model(path: PathLike) -> Metamodel:
    return model_from_dict(read_json(path))


def selection_summary(result: SelectionResult) -> Dict:
    return {"procedure": result.procedure, "kernel": result.kernel, "chosen": result.chosen,
            "pe": result.pe, "cv_folds": result.cv_folds, "seed": result.seed, "warning": result.warning}


def sobol_to_dict(report: SobolReport) -> Dict:
    payload = {
        "method": report.method,
        "total_variance": report.total_variance,
        "per_group_variance": {v.label: value for v, value in report.per_group_variance.items()},
        "indices": {v.label: value for v, value in report.indices.items()},
        "global_indices": {str(a): value for a, value in report.global_indices.items()},
        "clamped": [v.label for v in report.clamped],
    }
    if report.empirical_indices is not None:
        payload["empirical_indices"] = {v.label: value for v, value in report.empirical_indices.items()}
    return payload


def write_sobol(report: SobolReport, out_dir: PathLike) -> Path:
    return write_json(sobol_to_dict(report), Path(out_dir) / OUTPUT_FILES["sobol"])


def write_frame(frame: pd.DataFrame, path: PathLike) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    frame.to_csv(path, index=False, float_format=FLOAT_FORMAT)
    return path


def write_surfaces(result: SelectionResult, out_dir: PathLike) -> List[Path]:
    """Plot-ready (mu, gamma, PE) rows, plus (support, lambda, PE) rows for the ridge procedure"""
    written = [write_frame(result.pe_surface, Path(out_dir) / OUTPUT_FILES["pe_surface"])]
    if result.ridge_surface is not None:
        written.append(write_frame(result.ridge_surface, Path(out_dir) / OUTPUT_FILES["ridge_surface"]))
    return written


def write_benchmark(summary: Mapping, records: pd.DataFrame, out_dir: PathLike) -> List[Path]:
    out_dir = Path(out_dir)
    return [write_json(summary, out_dir / OUTPUT_FILES["benchmark_json"]),
            write_frame(records, out_dir / OUTPUT_FILES["benchmark_csv"])]


def write_error(error: BaseException, out_dir: PathLike) -> Path:
    if isinstance(error, MetamodelError):
        payload = error.to_dict()
    else:
        payload = {"category": "internal", "module": type(error).__module__,
                   "message": str(error) or type(error).__name__, "details": {}}
    return write_json(payload, Path(out_dir) / OUTPUT_FILES["error"])


