"""Numerical weak-KAM toolkit for contact Hamilton-Jacobi equations
``u_t + H(x, u, u_x) = 0`` on the flat circle and 2-torus."""

from .errors import (
    ConfigError,
    ContactHJBError,
    ExpressionError,
    GridMismatchError,
    ModelError,
    NotConvergedError,
    OracleMismatchError,
    PreconditionError,
    RangeError,
    SchemeError,
    SizeLimitError,
)
from .expression import Expression, parse_expression
from .grid import (
    GridFunction,
    PeriodicGrid,
    SpaceTimeField,
    from_expression,
    interpolate,
    sup_norm_diff,
    wrap,
)
from .model import (
    DualLagrangian,
    QuadraticContactHamiltonian,
    TabulatedHamiltonian,
    hamiltonian_eval,
    lagrangian,
    lagrangian_eval,
    legendre_transform,
    validate_lipschitz,
)
from .semigroup import SchemeParams, picard, sl_step, solve_frozen, t_minus, t_plus

__version__ = "0.1.0"
