"""Mixed-integer formulation of the control problem, solver, and exporters."""

from .model import MilpModel, Variable, Row, linearize_product, export_model, parse_lp, parse_mps
from .build import (VariableAtlas, Transcription, BuildOptions, build_milp,
                    build_objective, fix_plan, plan_from_values,
                    trajectory_to_assignment)
from .simplex import solve_lp
from .bnb import solve_bnb, Solution
from .equivalence import check_equivalence, EquivalenceReport

__all__ = [
    "MilpModel", "Variable", "Row", "linearize_product", "export_model",
    "parse_lp", "parse_mps", "VariableAtlas", "Transcription", "BuildOptions",
    "build_milp", "build_objective", "fix_plan", "plan_from_values",
    "trajectory_to_assignment", "solve_lp", "solve_bnb", "Solution",
    "check_equivalence", "EquivalenceReport",
]
