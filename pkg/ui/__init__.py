# UI components package for the sparse ANOVA metamodel workbench
