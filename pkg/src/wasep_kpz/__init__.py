"""Weakly asymmetric exclusion, its fluctuation field and the KPZ-limit checks."""

__version__ = "0.1.0"

from .basis import (DirichletBasis, HermiteBasis, SobolevWeights, hermite_eval,
                    neg_sobolev_norm, project, sup_by_l2_rhs, weighted_sup_norm)
from .exclusion import (EventLog, JumpEvent, SimParams, SpinState, Trajectory, advance,
                        empirical_transitions, enabled_jumps, exact_generator_matrix,
                        replay_states, replica_rng, sample_initial, simulate,
                        total_rate, transition_matrix)
from .field import (DecompositionLedger, QuadraticForm, decompose, drift_term, eval_field,
                    martingale_path, mollified_field, mollified_functional_path,
                    nonlinear_integral, remainder_terms, taylor_bound, taylor_residual)
from .functions import MOLLIFIERS, Mollifier, TestFunction, refine_simpson
from .gaussian import (GridSpec, SheetSample, WhiteNoiseMarginal, limit_covariance,
                       sample_sheet, sample_white_pairing, sheet_pairing)
from .harness import (EstimateTable, ExperimentConfig, cauchy_scan, martingale_test,
                      oracle_check, remainder_scan, run_replicas, sobolev_report)
