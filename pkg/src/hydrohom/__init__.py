"""Effective tensors of multi-current fluids by cell-problem minimization.

Media are described by pointwise coefficients (:mod:`hydrohom.fields`) on
periodic or boxed grids (:mod:`hydrohom.grid`). The dissipation form
(:mod:`hydrohom.forms`) is minimized over divergence-free currents
(:mod:`hydrohom.solver`), and effective tensors are post-processed into
transport coefficients (:mod:`hydrohom.transport`) or used in numerical
studies (:mod:`hydrohom.experiments`).
"""

from .exceptions import (ConfigError, DegenerateForm, DegenerateThermodynamics,
                         DimensionMismatch, HydroHomError, NoConvergence, NonIntegerScale,
                         ResolutionInsufficient, SingularBasis, SingularTensor, TooLarge)
from .estimator import HydroHomogenizer
from .experiments import (StudyResult, bc_ordering_check, eps_convergence_study, small_osc_sweep,
                          subadditivity_mc)
from .fields import (CoefficientSet, build_dual_basis, dirac_preset, dual_residual,
                     galilean_preset, make_coefficients, oscillation, random_stationary_field,
                     scalar_preset, small_oscillation_family)
from .forms import FormContext, apply_form, apply_form_eps, normal_apply, tile_coefficients
from .grid import CurrentField, Grid, PotentialField
from .solver import (EffectiveTensor, SolveReport, dense_oracle_tensor, effective_tensor,
                     effective_tensor_natural, effective_tensor_natural_periodic,
                     reconstruct_fields, solve_cell_problem)
from .transport import (TransportSummary, exact_1d_tensor, invert_to_conductivities,
                        lorenz_ratio, measured_kappa, small_oscillation_eigen_split,
                        transport_summary, voigt_bound, wf_deviation)

__version__ = "0.1.0"

__all__ = [
    "ConfigError", "DegenerateForm", "DegenerateThermodynamics", "DimensionMismatch",
    "HydroHomError", "NoConvergence", "NonIntegerScale", "ResolutionInsufficient",
    "SingularBasis", "SingularTensor", "TooLarge",
    "HydroHomogenizer",
    "StudyResult", "bc_ordering_check", "eps_convergence_study", "small_osc_sweep",
    "subadditivity_mc",
    "CoefficientSet", "build_dual_basis", "dirac_preset", "dual_residual", "galilean_preset",
    "make_coefficients", "oscillation", "random_stationary_field", "scalar_preset",
    "small_oscillation_family",
    "FormContext", "apply_form", "apply_form_eps", "normal_apply", "tile_coefficients",
    "CurrentField", "Grid", "PotentialField",
    "EffectiveTensor", "SolveReport", "dense_oracle_tensor", "effective_tensor",
    "effective_tensor_natural", "effective_tensor_natural_periodic", "reconstruct_fields",
    "solve_cell_problem",
    "TransportSummary", "exact_1d_tensor", "invert_to_conductivities", "lorenz_ratio",
    "measured_kappa", "small_oscillation_eigen_split", "transport_summary", "voigt_bound",
    "wf_deviation",
]
