"""
Dataset Provider for the sparse ANOVA metamodel workbench
Reads and writes regression datasets (y, x1..xd) and marginal quadrature tables
"""

import logging
import re
from dataclasses import dataclass
from pathlib import Path
from typing import List, Optional, Sequence, Union

import numpy as np
import pandas as pd

from analytics.errors import ParseError, ValidationError
from analytics.kernel_core import MarginalDistribution
from config import KERNEL_DEFAULTS

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]
FLOAT_FORMAT = "%.17g"


@dataclass
class Dataset:
    Y: np.ndarray
    X: np.ndarray
    name: str = "dataset"

    def __post_init__(self):
        self.Y = np.asarray(self.Y, dtype=float).ravel()
        self.X = np.atleast_2d(np.asarray(self.X, dtype=float))
        if self.X.shape[0] != self.Y.size:
            raise ValidationError(f"{self.Y.size} responses for {self.X.shape[0]} design rows",
                                  module=__name__)

    @property
    def n(self) -> int:
        return self.Y.size

    @property
    def d(self) -> int:
        return self.X.shape[1]

    def subset(self, rows: np.ndarray) -> "Dataset":
        return Dataset(self.Y[rows], self.X[rows], self.name)

    def to_frame(self) -> pd.DataFrame:
        frame = pd.DataFrame(self.X, columns=[f"x{a}" for a in range(1, self.d + 1)])
        frame.insert(0, "y", self.Y)
        return frame


def _read_table(path: PathLike) -> pd.DataFrame:
    path = Path(path)
    if not path.is_file():
        raise ValidationError(f"File not found: {path}", module=__name__)
    try:
        return pd.read_csv(path, dtype=str, keep_default_na=False, skipinitialspace=True)
    except pd.errors.EmptyDataError:
        raise ParseError(f"{path} is empty", module=__name__, line=1)
    except pd.errors.ParserError as e:
        match = re.search(r"line (\d+)", str(e))
        line = int(match.group(1)) if match else None
        raise ParseError(f"Ragged row in {path}: {e}", module=__name__, line=line)


def _to_float(frame: pd.DataFrame, path: PathLike) -> np.ndarray:
    values = np.empty(frame.shape, dtype=float)
    for j, column in enumerate(frame.columns):
        for i, cell in enumerate(frame[column]):
            try:
                value = float(cell)
            except (TypeError, ValueError):
                value = np.nan
            if not np.isfinite(value):
                # header is line 1
                raise ParseError(f"Non-numeric or non-finite cell '{cell}' in {path}, "
                                 f"line {i + 2}, column '{column}'",
                                 module=__name__, line=i + 2, column=str(column))
            values[i, j] = value
    return values


def load_dataset(path: PathLike, marginals: Optional[Sequence[MarginalDistribution]] = None) -> Dataset:
    """CSV with header y, x1..xd; inputs must lie in [0, 1] unless marginals are given"""
    frame = _read_table(path)
    columns = [str(c).strip() for c in frame.columns]
    expected = ["y"] + [f"x{a}" for a in range(1, len(columns))]
    if len(columns) < 2 or columns != expected:
        raise ParseError(f"Header of {path} must be {','.join(expected) if len(columns) > 1 else 'y,x1,...'}, "
                         f"got {','.join(columns)}", module=__name__, line=1)
    values = _to_float(frame, path)
    if values.shape[0] < 2:
        raise ValidationError(f"{path} needs at least two data rows", module=__name__)

    Y, X = values[:, 0], values[:, 1:]
    tol = KERNEL_DEFAULTS["support_tolerance"]
    if marginals is None:
        bounds = [KERNEL_DEFAULTS["support"]] * X.shape[1]
    else:
        if len(marginals) != X.shape[1]:
            raise ValidationError(f"{len(marginals)} marginals for {X.shape[1]} input columns",
                                  module=__name__)
        bounds = [m.support for m in marginals]
    for a, (lo, hi) in enumerate(bounds, start=1):
        outside = np.flatnonzero((X[:, a - 1] < lo - tol) | (X[:, a - 1] > hi + tol))
        if outside.size:
            raise ValidationError(f"x{a} = {X[outside[0], a - 1]} on line {outside[0] + 2} "
                                  f"is outside [{lo}, {hi}]", module=__name__)

    logger.info(f"Loaded {path}: n={X.shape[0]}, d={X.shape[1]}")
    return Dataset(Y, X, Path(path).stem)


def save_dataset(dataset: Dataset, path: PathLike) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    dataset.to_frame().to_csv(path, index=False, float_format=FLOAT_FORMAT)
    return path


def load_marginals(path: PathLike, d: int) -> List[MarginalDistribution]:
    """
    Quadrature tables with columns point,weight and optionally coordinate (1-based),
    lo and hi. Without a coordinate column one table serves every input.
    """
    frame = _read_table(path)
    frame.columns = [str(c).strip() for c in frame.columns]
    if not {"point", "weight"} <= set(frame.columns):
        raise ParseError(f"Marginals table {path} needs 'point' and 'weight' columns",
                         module=__name__, line=1)
    unknown = set(frame.columns) - {"point", "weight", "coordinate", "lo", "hi"}
    if unknown:
        raise ParseError(f"Unknown columns {sorted(unknown)} in {path}", module=__name__, line=1)
    table = pd.DataFrame(_to_float(frame, path), columns=frame.columns)

    def build(rows: pd.DataFrame) -> MarginalDistribution:
        lo = float(rows["lo"].iloc[0]) if "lo" in rows else None
        hi = float(rows["hi"].iloc[0]) if "hi" in rows else None
        try:
            return MarginalDistribution.from_table(rows["point"].to_numpy(), rows["weight"].to_numpy(), lo, hi)
        except ValueError as e:
            raise ValidationError(f"Invalid marginal table in {path}: {e}", module=__name__)

    if "coordinate" not in table:
        shared = build(table)
        return [shared] * d

    marginals = []
    for a in range(1, d + 1):
        rows = table[table["coordinate"] == a]
        if rows.empty:
            raise ValidationError(f"No marginal table for coordinate {a} in {path}", module=__name__)
        marginals.append(build(rows))
    return marginals
