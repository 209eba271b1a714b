"""Automatic redundant-constraint learning and tightness testing for QCQP relaxations."""

from .autotemplate import (
    AutoTemplateOptions,
    TemplateLibrary,
    VariableSet,
    apply_templates,
    autotemplate,
    learn_templates,
    reduce_constraints,
    variable_set_sequence,
)
from .autotight import AutoTightOptions, TightnessReport, autotight
from .conic import certify, solve_primal
from .liftprob import LiftedProblem, ProblemSetup, Template
from .localsolve import gauss_newton
from .polymat import PolyMatrix, VarLayout
from .problems import generate_setup, make_problem

__version__ = "0.1.0"

__all__ = [
    "AutoTemplateOptions",
    "AutoTightOptions",
    "LiftedProblem",
    "PolyMatrix",
    "ProblemSetup",
    "Template",
    "TemplateLibrary",
    "TightnessReport",
    "VarLayout",
    "VariableSet",
    "apply_templates",
    "autotemplate",
    "autotight",
    "certify",
    "gauss_newton",
    "generate_setup",
    "learn_templates",
    "make_problem",
    "reduce_constraints",
    "solve_primal",
    "variable_set_sequence",
]
