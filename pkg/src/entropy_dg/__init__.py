"""Positivity-preserving interior-penalty DG solver for the Fisher-KPP
equation in the log-density variable, with runtime structure certificates."""

from .dgspace import (DgFunction, Quadrature, dg_norm, elementwise_linf,
                      face_trace, gauss_legendre_rule, jump_average,
                      project_l2)
from .diagnostics import (StepReport, check_dgnorm_bound, check_entropy_step,
                          check_mass_bounds, compute_c_inv, discrete_entropy,
                          entropy_density, fit_decay_rate, l1_distance_to_one,
                          remark_counterexample, sigma_minus, sigma_plus)
from .errors import DensityOverflowError, NewtonDivergenceError, StiffnessError
from .forms import (FaceData, NewtonControls, SchemeParams, assemble_B,
                    jacobian, residual, stabilization_alpha)
from .mesh import Mesh1D, build_graded_mesh, build_uniform_mesh
from .solver import TimeSeries, newton_solve, run_simulation

__version__ = "0.1.0"
