"""Conditional inference for weakly identified moment models.

The conditional QLR test holds the part of the moment process that is
independent of g(theta_0) fixed and simulates critical values from the
rest. The package provides the statistics, the conditional engine,
covariance estimators, nuisance-parameter concentration, a quantile-IV
application, an Euler-equation front end, simulation drivers and a CLI.
"""

from .concentrate import LongMomentModel, ProfilePath, concentrated_covariance, concentrated_moment
from .condcrit import (
    compute_h,
    conditional_critical_value,
    conditional_test,
    conditional_tests,
    invert_test,
    simulate_g_star,
)
from .core import (
    ConfidenceSet,
    CovarianceField,
    HProcess,
    MeanFunction,
    MomentProcess,
    NumericalDegradationWarning,
    ParamGrid,
    TestResult,
    validate_field,
)
from .covest import MomentPanel, iid_covariance, newey_west, psd_project
from .stats import QLR, JKStatistic, KStatistic, SStatistic, WeightedQLR, get_statistic

__version__ = "0.1.0"

__all__ = [
    "ParamGrid",
    "MomentProcess",
    "MeanFunction",
    "CovarianceField",
    "HProcess",
    "TestResult",
    "ConfidenceSet",
    "NumericalDegradationWarning",
    "validate_field",
    "compute_h",
    "simulate_g_star",
    "conditional_critical_value",
    "conditional_test",
    "conditional_tests",
    "invert_test",
    "QLR",
    "SStatistic",
    "KStatistic",
    "JKStatistic",
    "WeightedQLR",
    "get_statistic",
    "MomentPanel",
    "iid_covariance",
    "newey_west",
    "psd_project",
    "LongMomentModel",
    "ProfilePath",
    "concentrated_moment",
    "concentrated_covariance",
]
