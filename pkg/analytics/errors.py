"""
Error hierarchy shared by the analytics engines and the command line front end
"""

from typing import Any, Dict, Optional


class MetamodelError(Exception):
    """Base class; every error carries a category and the module it came from"""

    category = "internal"

    def __init__(self, message: str, module: Optional[str] = None, **details: Any):
        super().__init__(message)
        self.message = message
        self.module = module
        self.details = {k: v for k, v in details.items() if v is not None}

    def to_dict(self) -> Dict[str, Any]:
        return {
            "category": self.category,
            "module": self.module,
            "message": self.message,
            "details": {k: _jsonable(v) for k, v in self.details.items()},
        }


class ArgumentError(MetamodelError, ValueError):
    category = "argument"


class DomainError(MetamodelError, ValueError):
    category = "domain"


class KernelConstructionError(MetamodelError):
    category = "kernel"


class NumericalError(MetamodelError, ArithmeticError):
    category = "numerical"

    def __init__(self, message: str, module: Optional[str] = None,
                 group: Optional[str] = None, residual: Optional[float] = None, **details: Any):
        super().__init__(message, module, group=group, residual=residual, **details)
        self.group = group
        self.residual = residual


class SolverError(MetamodelError):
    category = "solver"


class DegenerateModelError(MetamodelError):
    category = "degenerate"


class ParseError(MetamodelError, ValueError):
    category = "parse"

    def __init__(self, message: str, module: Optional[str] = None,
                 line: Optional[int] = None, column: Optional[str] = None, **details: Any):
        super().__init__(message, module, line=line, column=column, **details)
        self.line = line
        self.column = column


class ValidationError(MetamodelError, ValueError):
    category = "validation"


def _jsonable(value: Any) -> Any:
    if isinstance(value, (str, int, float, bool)) or value is None:
        return value
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    return str(value)
