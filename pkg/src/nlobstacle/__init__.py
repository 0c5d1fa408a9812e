"""Grid solver and verification lab for nonlocal double obstacle problems.

    max{ min{ -Iu - f, u - psi^- }, u - psi^+ } = 0 in U,   u = phi outside U.
"""
from .geometry import Disk, Grid, GridError, Interval, build_grid, dilate, distance, smoothed_distance
from .kernel import (EllipticityParams, KernelSpec, frac_constant, frac_kernel, frac_params,
                     homogeneous_kernel, l0_check, tail_mass)
from .nonlocal_op import (Field, OperatorSpec, TailError, apply_linear, apply_operator, apply_pucci,
                          apply_pucci_star, ellipticity_test, infsup, linear, pucci, second_diff)
from .obstacles import ObstacleSet, blend, make_preset, mollify, mollify_set
from .penalty import PenaltyFn, beta_eval, penal_residual
from .solver import (BaseProblem, NonConvergence, ProblemInstance, SolutionField, SolveConfig,
                     continuation_delta, continuation_epsilon, solve_direct, solve_penalized)

__version__ = "0.1.0"

__all__ = [
    "BaseProblem", "Disk", "EllipticityParams", "Field", "Grid", "GridError", "Interval",
    "KernelSpec", "NonConvergence", "ObstacleSet", "OperatorSpec", "PenaltyFn", "ProblemInstance",
    "SolutionField", "SolveConfig", "TailError", "apply_linear", "apply_operator", "apply_pucci",
    "apply_pucci_star", "beta_eval", "blend", "build_grid", "continuation_delta",
    "continuation_epsilon", "dilate", "distance", "ellipticity_test", "frac_constant",
    "frac_kernel", "frac_params", "homogeneous_kernel", "infsup", "l0_check", "linear",
    "make_preset", "mollify", "mollify_set", "penal_residual", "pucci", "second_diff",
    "smoothed_distance", "solve_direct", "solve_penalized", "tail_mass",
]
