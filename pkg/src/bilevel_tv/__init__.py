"""Bilevel learning of variational image-restoration parameters.

Single-loop forward-backward solvers (with exact or iteratively relaxed
adjoint states) and an implicit-differentiation baseline, applied to
learning total-variation weights for denoising and 5x5 blur kernels for
deconvolution, plus the numerical verification suite behind them.
"""

from .adjoint import (AdjointInfo, KrylovConfig, KrylovResult, adjoint_step, bicgstab,
                      conjugate_gradient, frob_inner, frob_norm, krylov_solve, solve_adjoint)
from .estimators import KernelDeblurrer, TVDenoiser
from .grids import (DIFF_NORM_SQ_BOUND, add_noise, backward_diff, backward_diff_adjoint,
                    blur_kernel, convolve, huber, kernel_basis, phantom)
from .problems import BilevelProblem, DeconvolutionProblem, DenoisingProblem, Regularizer
from .solvers import (ImplicitConfig, InnerInfo, NumericalError, SolverState, StepSizes, Trace,
                      fefb_step, fifb_step, hessian_norm_estimate, hypergradient, implicit_step,
                      initial_state, read_trace, relative_error, run, solve_inner, write_trace)
from .verify import (CheckResult, QuadraticBilevel, check_hypergradient, check_inner_derivatives,
                     check_prox_contractivity, check_row_matrix_norms,
                     check_three_point_monotonicity, geometric_rate, hypergradient_fd,
                     make_toy_problem, max_increase, monitor_run, monitor_weights, run_suites)

__version__ = "0.1.0"

__all__ = [
    "AdjointInfo", "BilevelProblem", "CheckResult", "DeconvolutionProblem", "DenoisingProblem",
    "DIFF_NORM_SQ_BOUND", "ImplicitConfig", "InnerInfo", "KernelDeblurrer", "KrylovConfig",
    "KrylovResult", "NumericalError", "QuadraticBilevel", "Regularizer", "SolverState",
    "StepSizes", "TVDenoiser", "Trace", "add_noise", "adjoint_step", "backward_diff",
    "backward_diff_adjoint", "bicgstab", "blur_kernel", "check_hypergradient",
    "check_inner_derivatives", "check_prox_contractivity", "check_row_matrix_norms",
    "check_three_point_monotonicity", "conjugate_gradient", "convolve", "fefb_step", "fifb_step",
    "frob_inner", "frob_norm", "geometric_rate", "hessian_norm_estimate", "huber",
    "hypergradient", "hypergradient_fd", "implicit_step", "initial_state", "kernel_basis",
    "krylov_solve", "make_toy_problem", "max_increase", "monitor_run", "monitor_weights",
    "phantom", "read_trace", "relative_error", "run", "run_suites", "solve_adjoint",
    "solve_inner", "write_trace",
]
