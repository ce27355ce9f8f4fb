"""Simulation and verification workbench for massless-electron Vlasov-Poisson.

Regularized N-particle dynamics on the torus, the nonlinear electrostatic
field solve, optimal-transport diagnostics, and batch convergence studies
for the mean-field, quasineutral, combined, and typicality regimes.
"""

__version__ = "0.1.0"

from .torus_field import (
    FieldSolution,
    ScalarField,
    SolverError,
    TorusGrid,
    VectorField,
    evaluate_field_at,
    field_norm_report,
    gradient_field,
    solve_full_potential,
    solve_linear_poisson,
)
from .mollifier import MollifierSpec, make_mollifier, mollify_field, regularized_pair_force

__all__ = [
    "__version__",
    "TorusGrid",
    "ScalarField",
    "VectorField",
    "FieldSolution",
    "SolverError",
    "solve_linear_poisson",
    "solve_full_potential",
    "gradient_field",
    "evaluate_field_at",
    "field_norm_report",
    "MollifierSpec",
    "make_mollifier",
    "mollify_field",
    "regularized_pair_force",
]
