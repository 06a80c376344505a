"""
UI Components for the sparse ANOVA metamodel workbench
Plain-text summaries of selections, Sobol reports and benchmarks for the terminal
"""

from typing import Dict, List, Optional

import numpy as np
import pandas as pd

from analytics.gram_system import GroupIndex
from analytics.model_select import Metamodel, SelectionResult
from analytics.sensitivity import SobolReport
from analytics.sim_bench import BenchmarkReport


class UIComponents:
    """
    Reusable text components for the command line front end
    """

    def __init__(self, precision: int = 4, max_rows: int = 20):
        self.precision = precision
        self.max_rows = max_rows

    def _table(self, frame: pd.DataFrame) -> str:
        with pd.option_context("display.precision", self.precision, "display.max_rows", self.max_rows,
                               "display.width", 120):
            return frame.to_string(index=False)

    def render_card(self, title: str, details: Dict) -> str:
        """Title line followed by aligned key: value rows"""
        width = max((len(str(k)) for k in details), default=0)
        lines = [title, "-" * len(title)]
        lines += [f"{str(k).ljust(width)} : {self._format(v)}" for k, v in details.items()]
        return "\n".join(lines)

    def _format(self, value) -> str:
        if isinstance(value, float):
            return "nan" if np.isnan(value) else f"{value:.{self.precision}g}"
        if isinstance(value, (list, tuple)):
            return ", ".join(self._format(v) for v in value) or "(none)"
        return str(value)

    def render_model(self, model: Metamodel) -> str:
        return self.render_card("Metamodel", {
            "kernel": model.kernel_name,
            "procedure": model.procedure,
            "n": model.training_design.shape[0],
            "d": model.d,
            "f0": model.f0,
            "support": [v.label for v in model.support],
            **{k: v for k, v in model.penalties.items()},
        })

    def render_selection(self, result: SelectionResult) -> str:
        details = {"procedure": result.procedure, "kernel": result.kernel, "PE": result.pe}
        details.update({k: v for k, v in result.chosen.items()})
        if result.cv_folds:
            details["cv folds"] = result.cv_folds
        card = self.render_card("Selection", details)
        surface = result.ridge_surface if result.procedure == "rdg" else result.pe_surface
        best = surface.dropna(subset=["pe"]).nsmallest(5, "pe") if surface is not None and len(surface) else None
        parts = [card]
        if best is not None and len(best):
            parts.append("Best configurations\n" + self._table(best))
        if result.warning:
            parts.append(f"WARNING: {result.warning}")
        return "\n\n".join(parts)

    def render_sobol(self, report: SobolReport, reference: Optional[Dict[GroupIndex, float]] = None) -> str:
        frame = report.to_frame()
        frame["index x100"] = 100.0 * frame["index"]
        if reference is not None:
            frame["reference x100"] = [100.0 * reference.get(GroupIndex.parse(g), 0.0) for g in frame["group"]]
        global_frame = pd.DataFrame({"coordinate": list(report.global_indices),
                                     "global index": list(report.global_indices.values())})
        return "\n\n".join([
            self.render_card("Sobol indices", {"method": report.method,
                                               "total variance": report.total_variance}),
            self._table(frame),
            self._table(global_frame),
        ])

    def render_benchmark(self, report: BenchmarkReport, groups: Optional[List[str]] = None) -> str:
        rows = []
        for procedure, s in report.summaries.items():
            rows.append({"procedure": procedure, "reps": s.replications, "failed": s.failures,
                         "R2": s.mean_R2, "ER": s.mean_ER, "GE x100": 100.0 * s.mean_GE,
                         "pSel S>rho": s.p_sel_above, "pSel S<=rho": s.p_sel_below})
        parts = ["Benchmark summary\n" + self._table(pd.DataFrame(rows))]

        groups = groups or [label for label, value in report.analytic_indices.items() if value > 1e-3]
        index_rows = []
        for label in groups:
            row = {"group": label, "analytic x100": 100.0 * report.analytic_indices[label]}
            for procedure, s in report.summaries.items():
                row[f"{procedure} x100"] = 100.0 * s.mean_indices.get(label, np.nan)
                row[f"{procedure} sd"] = 100.0 * s.sd_indices.get(label, np.nan)
                row[f"{procedure} pSel"] = s.p_sel.get(label, np.nan)
            index_rows.append(row)
        if index_rows:
            parts.append("Sobol indices across replications\n" + self._table(pd.DataFrame(index_rows)))
        return "\n\n".join(parts)
