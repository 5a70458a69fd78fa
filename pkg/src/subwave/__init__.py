"""Numerical toolkit for Hamiltonian flows, eikonal phases and spectral multipliers
on sub-Riemannian model manifolds."""

__version__ = "0.1.0"

from .models import (CotangentPoint, InvariantViolation, ModelError, ModelSpec, bracket_generating_step,
                     cometric, hamiltonian, hamiltonian_derivs, load_model_file, register_builtin,
                     resolve_model)
from .flow import (DegenerateCovectorError, FlowError, FlowTrajectory, exp_A, exp_H, hamilton_flow)
from .varjac import (RankReport, conjugate_scan, dexp_A_fd, dexp_H, numerical_rank, rank_reduction_check,
                     re_witness)
from .eikonal import (NewtonError, PhaseSample, critical_check, eikonal_residual,
                      hessian_rank_at_critical, phase_w, rho, sigma, transport_q0)
from .oscint import (CriticalPointData, find_critical_point, mixed_phase_critical, oscillatory_integral,
                     stationary_phase_leading)
from .mult import (CutoffSpec, MultiplierGrid, apply_multiplier_spectral, euclidean_opnorm_L1,
                   grushin_operator_matrix, mh_lowerbound_experiment, mp_lowerbound_experiment,
                   schrodinger_multiplier, sobolev_sloc_norm, wave_multiplier)
