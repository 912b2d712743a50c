"""Numerical laboratory for the potential-to-ground-state map of few-fermion systems in one dimension."""

__version__ = "0.1.0"

from .discretization import (Grid, HamiltonianMatrix, InteractionKernel, ManyBodyBasis, PotentialField,
                             assemble_hamiltonian, build_grid, hamiltonian, laplacian_eigenvalues,
                             multiplication_operator, one_body_laplacian, slater_basis)
from .errors import (DegeneracyHit, DegenerateLevel, InvalidArgument, NotApplicable, PathFailure, SolverFailure,
                     StepTooLarge)
from .spectra import (ReducedResolvent, SpectralSolution, binding_threshold, detect_clusters, solve, solve_all,
                      solve_lowest)
from .state_maps import (DensityVector, JacobianMatrix, density_jacobian, density_of, energy_differential,
                         projector_report, quadratic_form_split, state_differential)
from .degenerate import (BranchTable, DiniReport, breaking_report, dini_derivatives, kernel_basis,
                         perturbation_matrix, track_branches)
from .binding import BindingReport, PathParams, addos_admissible, check_binding, connect_pair, construct_path
from .ks_inverse import InversionConfig, InversionResult, ks_invert, svd_decay, weak_inverse_residual

__all__ = [name for name in dir() if not name.startswith("_")]
