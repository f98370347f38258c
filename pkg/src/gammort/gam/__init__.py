"""Penalized additive model engine: design assembly, sparse solves, REML."""
from .design import (Design, ModelSpec, Penalty, SmoothTerm, assemble_design, design_rows,
                     multi_population_spec, single_population_spec)
from .model import FittedModel, fit_gam, optimize_reml, trim_mask, trim_refit
from .reml import RemlProblem, minimize_reml, pls_solve, reml_score

__all__ = [
    "Design", "ModelSpec", "Penalty", "SmoothTerm", "assemble_design", "design_rows",
    "multi_population_spec", "single_population_spec", "FittedModel", "fit_gam", "optimize_reml",
    "trim_mask", "trim_refit", "RemlProblem", "minimize_reml", "pls_solve", "reml_score",
]
