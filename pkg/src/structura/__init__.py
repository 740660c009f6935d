"""Differentiable LP-SparseMAP inference over factor graphs."""

from .activeset import SparseMapConfig, jvp_sparsemap, solve_sparsemap
from .admm import AdmmConfig, LpSparseMapSolution, SolveError, solve
from .backward import BackwardConfig, jvp, materialize_jacobian
from .factors import (
    AtMostOne,
    Assignment,
    Budget,
    Dense,
    Knapsack,
    Negated,
    Or,
    OrOut,
    Pair,
    Sequence,
    Tree,
    Xor,
)
from .graph import FactorGraph, GraphError
from .loss import GoldAssignment, GoldError, evaluate_loss, loss_value

__all__ = [
    "AdmmConfig", "Assignment", "AtMostOne", "BackwardConfig", "Budget", "Dense", "FactorGraph",
    "GoldAssignment", "GoldError", "GraphError", "Knapsack", "LpSparseMapSolution", "Negated",
    "Or", "OrOut", "Pair", "Sequence", "SolveError", "SparseMapConfig", "Tree", "Xor",
    "evaluate_loss", "jvp", "jvp_sparsemap", "loss_value", "materialize_jacobian", "solve",
    "solve_sparsemap",
]
