"""
Analytics module for the sparse ANOVA metamodel workbench
"""

from .errors import MetamodelError
from .kernel_core import CenteredKernel, KernelFamily, MarginalDistribution
from .gram_system import GramSystem, GroupIndex
from .rgs_solver import PenaltyWeights, SolverConfig, fit
from .model_select import Metamodel, ModelSelector, TuningSettings
from .sensitivity import SobolReport, sensitivity_report

__all__ = ['MetamodelError', 'CenteredKernel', 'KernelFamily', 'MarginalDistribution', 'GramSystem',
           'GroupIndex', 'PenaltyWeights', 'SolverConfig', 'fit', 'Metamodel', 'ModelSelector',
           'TuningSettings', 'SobolReport', 'sensitivity_report']
