"""Wasserstein projection statistics for moment-equation hypotheses."""

from .bartlett import (BartlettCoeffs, MomentInputs, compute_bartlett_coeffs, correct_quantile,
                       correct_statistic, plugin_moments)
from .errors import *  # noqa: F401,F403
from .expansion import (ExpansionTerms, GammaMoments, compute_expansion_terms,
                        compute_gamma_moments, expansion_approx)
from .hyptest import (DecisionInput, QuantileEstimate, TestOutcome, compute_el_statistic,
                      compute_hotelling, estimate_quantile, hotelling_raw, recommend_test,
                      run_el_test, run_t2_test, run_wp_test)
from .model import (CostModel, DataSet, MomentModel, make_linear_model, make_quadratic_norm_model,
                    make_zero_power_model, with_fd_third)
from .power import PowerInputs, compute_k_constants, power_expansion, power_gap_b
from .sim import (Scenario, SimReport, run_coverage_study, run_example62, run_expansion_study,
                  run_power_study)
from .solver import (SolverOptions, WpResult, compute_wp_statistic, solve_inner_transport,
                     wp_closed_form_linear, wp_closed_form_quadratic)

__version__ = "0.1.0"
