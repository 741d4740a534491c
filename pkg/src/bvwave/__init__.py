"""Optimal control of the linear wave equation with BV-in-time controls.

The control enters through its distributional time derivative.  The problem
is regularized with an ``H^1`` term, the regularized optimality system is
solved by a semi-smooth Newton method with a matrix-free derivative, and the
regularization parameter is driven to zero by path following.
"""

from .cantor import cantor_function, mollified_plateau, mollifier
from .control import (AdjointFunctional, apply_B, apply_Bstar, apply_S, apply_S_tilde,
                      compute_adjoint_functional, control_values, cost_J, cost_Jgamma,
                      normal_operator, prox, residual_F, smooth_gradient)
from .errors import ConfigError, KrylovError, SolverError, ValidationError
from .fem import apply_L, apply_Lstar, apply_Q, assemble, discrete_energy, inner_h, \
    solve_wave
from .manufactured import (ManufacturedProblem, build_cantor_example, build_dirac_example,
                           build_dirac_example_discrete, build_plateau_example,
                           verify_manufactured)
from .ssn import (ActiveSets, PathFollowingError, SolveReport, apply_DF, diagnostics,
                  krylov_solve, path_following, semismooth_newton)
from .types import (CantorPiece, ControlComponent, DensityPiece, DerivativeControl,
                    ExactControl, Grid, ProblemData, RegularizationParams, SpaceTimeField)

__version__ = "0.1.0"

__all__ = [
    "ActiveSets", "AdjointFunctional", "CantorPiece", "ConfigError", "ControlComponent",
    "DensityPiece", "DerivativeControl", "ExactControl", "Grid", "KrylovError",
    "ManufacturedProblem", "PathFollowingError", "ProblemData", "RegularizationParams",
    "SolveReport", "SolverError", "SpaceTimeField", "ValidationError", "apply_B",
    "apply_Bstar", "apply_DF", "apply_L", "apply_Lstar", "apply_Q", "apply_S",
    "apply_S_tilde", "assemble", "build_cantor_example", "build_dirac_example",
    "build_dirac_example_discrete", "build_plateau_example", "cantor_function",
    "compute_adjoint_functional", "control_values", "cost_J", "cost_Jgamma", "diagnostics",
    "discrete_energy", "inner_h", "krylov_solve", "mollified_plateau", "mollifier",
    "normal_operator", "path_following", "prox", "residual_F", "semismooth_newton",
    "smooth_gradient", "solve_wave", "verify_manufactured",
]
