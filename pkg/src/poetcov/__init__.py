"""Large covariance and precision estimation by principal orthogonal complement thresholding."""
__version__ = "0.1.0"

from ._backend import BACKEND
from .core import (ErrorReport, PoetEstimate, direct_threshold, evaluate_against_truth,
                   known_factor, poet, poet_substitution, precision_woodbury,
                   principal_complement, save_estimate, strict_factor)
from .errors import (BoundViolation, DegenerateObjectiveError, NonFiniteError,
                     NonStationaryError, PanelParseError, PoetError,
                     SingularIdiosyncraticError, SingularMatrixError)
from .factors import FactorFit, estimate_factors, ic_penalty, select_num_factors
from .panel import (CalibrationParams, ReturnPanel, TrueModel, calibrate_error_covariance,
                    demean, generate_ar1_sigma, generate_banded_sigma_u, load_csv,
                    sample_covariance, save_csv, simulate_calibrated, simulate_design2,
                    simulate_model, var1_stationary_covariance)
from .portfolio import (backtest, min_variance_weights, risk_error_bounds, risk_metrics)
from .selection import CvConfig, c_min, cross_validate_c, min_eigenvalue_curve, poet_cv
from .spectral import (eigh, inv_sqrt, norm_frobenius, norm_l1, norm_max, norm_spectral,
                       weighted_quadratic_norm)
from .thresholding import (ShrinkageRule, ThresholdSpec, build_tau, omega, residual_moments,
                           shrink, sparsity_measure, threshold_covariance)
