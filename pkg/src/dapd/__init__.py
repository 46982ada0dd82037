"""Accelerated primal-dual methods for bilinearly coupled saddle-point problems.

``min_x max_y f(x) + y^T M x - b^T y - phi(y)``
"""
from .det import (derive_papc_params, derive_x_params, derive_y_params, papc_init, papc_step, x_dapd_init,
                  x_dapd_step, y_dapd_init, y_dapd_step)
from .experiments import (CstConfig, NseConfig, QpConfig, certify_spectrum, gen_cst, gen_nse, gen_qp,
                          rescale_spectrum)
from .hard import (build_c1, build_c1_stoc, build_c2, lower_bound_iterations_c1, saddle_c1, saddle_c2,
                   verify_empirical_lower_bound)
from .lyapunov import LyapunovSpec, check_contraction_det, check_contraction_stoc, psi
from .problem import (BlockObjective, Counters, DenseCoupling, KroneckerCoupling, ParameterDomainError,
                      PseudoHuberOracle, QuadraticOracle, SaddleCertificate, SaddleProblem, bregman_f,
                      dphi_bregman, kkt_residual, weighted_norm_sq)
from .prox import GroupBallTerm, L1Term, NonnegTerm, ZeroTerm, make_prox_term
from .runner import METHODS, RunOptions, RunTrace, derive_params, reference_certificate, run
from .stoc import derive_xsbc_nonsep_params, derive_xsbc_params, derive_ysbc_params

__version__ = "0.1.0"
