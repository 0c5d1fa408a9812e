"""Second differences, linear and extremal nonlocal operators."""
from .operators import (
    DiscreteOperator,
    Field,
    OperatorSpec,
    TailError,
    apply_linear,
    apply_operator,
    apply_pucci,
    apply_pucci_star,
    bind,
    ellipticity_test,
    infsup,
    linear,
    pucci,
    second_diff,
    zero_exterior,
)
from .stencil import Stencil, build_fitted_1d, build_lattice, get_stencil

__all__ = [
    "DiscreteOperator", "Field", "OperatorSpec", "Stencil", "TailError",
    "apply_linear", "apply_operator", "apply_pucci", "apply_pucci_star", "bind",
    "build_fitted_1d", "build_lattice", "ellipticity_test", "get_stencil", "infsup",
    "linear", "pucci", "second_diff", "zero_exterior",
]
