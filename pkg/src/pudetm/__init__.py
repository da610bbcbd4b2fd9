"""Double exponential tilting model for positive-unlabeled data.

Maximum empirical likelihood estimation by EM, likelihood-ratio tests and
intervals for the mixture share, a plug-in Bayes classifier and a seeded
Monte-Carlo harness.
"""

__version__ = "0.1.0"

from .core import (Dataset, FeatureMap, FitResult, LabelRule, Model, Theta,
                   apply_feature_map, validate_dataset)
from .errors import (ConfigError, DataError, DomainError, FeasibilityError,
                     NonConvergenceError, NumericalError, PUDETMError, RankError,
                     SingularMatrixError, TieError)
from .estimation import DETM, SETM, FitOptions, ModelSpec, e_step, fit, m_step, resolve_label_switch
from .likelihood import el_weights, profile_log_el, solve_lagrange
from .inference import asymptotic_covariance, ci_pi, elr_curve, elr_pi, gof_test_scar
from .classify import accuracy, l1_posterior_distance, posterior, predict

__all__ = [
    "Dataset", "FeatureMap", "FitResult", "LabelRule", "Model", "Theta",
    "apply_feature_map", "validate_dataset",
    "ConfigError", "DataError", "DomainError", "FeasibilityError", "NonConvergenceError",
    "NumericalError", "PUDETMError", "RankError", "SingularMatrixError", "TieError",
    "DETM", "SETM", "FitOptions", "ModelSpec", "e_step", "fit", "m_step",
    "resolve_label_switch", "el_weights", "profile_log_el", "solve_lagrange",
    "asymptotic_covariance", "ci_pi", "elr_curve", "elr_pi", "gof_test_scar",
    "accuracy", "l1_posterior_distance", "posterior", "predict",
]
