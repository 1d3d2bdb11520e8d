"""ODE integration for sampling flow models."""

from .solvers import (
    FIXED_METHODS,
    METHODS,
    DerivativeField,
    SolverConfig,
    SolverError,
    SolverTrace,
    as_field,
    fixed_step,
    guided_field,
    integrate,
    integrate_dopri5,
    integrate_fixed,
)

__all__ = [
    "DerivativeField", "FIXED_METHODS", "METHODS", "SolverConfig", "SolverError", "SolverTrace",
    "as_field", "fixed_step", "guided_field", "integrate", "integrate_dopri5", "integrate_fixed",
]
