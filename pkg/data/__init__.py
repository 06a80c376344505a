# Data package for the sparse ANOVA metamodel workbench
