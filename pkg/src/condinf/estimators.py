"""scikit-learn style wrappers.

The estimators follow the ``BaseEstimator`` conventions: constructor
arguments are stored verbatim, ``fit`` returns ``self`` and learned state
lives in attributes with a trailing underscore. Inference produces tests
and confidence sets rather than predictions, so ``predict`` is replaced by
``test`` and ``confidence_set``.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils import check_random_state
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from .condcrit import conditional_test, invert_test
from .core import ConfidenceSet, TestResult
from .covest import MomentPanel, iid_covariance, newey_west
from .gmm import EulerData, build_moment_process, default_euler_grid, euler_panel
from .quantile_iv import QIV_K_STEP, KernelSpec, QuantileIVData, concentrated_g, profile, qiv_covariance
from .stats import get_statistic

__all__ = ["ConditionalTest", "QuantileIVInference", "EulerConfidenceSet"]


def _seed(random_state):
    """Integer seed drawn from a sklearn-style random_state, for numpy Generators."""
    return int(check_random_state(random_state).randint(0, 2**31 - 1))


class _InferenceMixin:
    """Shared test / confidence-set logic once ``moments_`` and ``field_`` exist."""

    def _stat(self):
        opts = {}
        if self.statistic in ("k", "jk") and getattr(self, "k_step", None) is not None:
            opts["step"] = self.k_step
        return get_statistic(self.statistic, **opts)

    def test(self, theta0) -> TestResult:
        """Conditional test of H0: theta = theta0 (theta0 must be a grid point)."""
        check_is_fitted(self, ["moments_", "field_"])
        i = self.grid_.index_of(np.atleast_1d(theta0), atol=1e-9)
        g = self.moments_.with_null(i)
        rng = np.random.default_rng(_seed(self.random_state))
        return conditional_test(g, self.field_, self._stat(), self.alpha, self.n_draws, rng)

    def confidence_set(self) -> ConfidenceSet:
        """Invert the test over every grid point."""
        check_is_fitted(self, ["moments_", "field_"])
        rng = np.random.default_rng(_seed(self.random_state))
        return invert_test(self.moments_, self.field_, self._stat(), self.alpha, self.n_draws, rng, grid=self.grid_)


class ConditionalTest(_InferenceMixin, BaseEstimator):
    """Conditional inference from per-observation moment contributions.

    Parameters
    ----------
    grid : ParamGrid
        Parameter grid the contributions are evaluated on.
    statistic : {"qlr", "s", "k", "jk"}
    alpha : float
    n_draws : int
    hac_lags : int or None
        None uses the i.i.d. covariance, otherwise Newey-West with that many lags.
    k_step : float, optional
        Stencil half-width for K and JK.
    random_state : int, RandomState or None

    Examples
    --------
    >>> import numpy as np
    >>> from condinf import ParamGrid
    >>> from condinf.estimators import ConditionalTest
    >>> grid = ParamGrid(np.linspace(-1, 1, 5), null_index=2)
    >>> X = np.random.default_rng(0).standard_normal((200, 5 * 2))
    >>> est = ConditionalTest(grid, n_draws=200, random_state=0).fit(X)
    >>> est.confidence_set().accepted.shape
    (5,)
    """

    def __init__(self, grid=None, statistic="qlr", alpha=0.05, n_draws=1000, hac_lags=None, k_step=None, random_state=None):
        self.grid = grid
        self.statistic = statistic
        self.alpha = alpha
        self.n_draws = n_draws
        self.hac_lags = hac_lags
        self.k_step = k_step
        self.random_state = random_state

    def fit(self, X, y=None):
        """X holds phi_t(theta_i) flattened to shape (T, G * k), grid-major."""
        if self.grid is None:
            raise ValueError("grid must be supplied")
        X = check_array(X)
        G = self.grid.size
        if X.shape[1] % G:
            raise ValueError(f"X has {X.shape[1]} columns, not a multiple of the grid size {G}")
        panel = MomentPanel(self.grid, X.reshape(X.shape[0], G, -1))
        self.grid_ = self.grid
        self.moments_ = build_moment_process(panel)
        self.field_ = iid_covariance(panel) if self.hac_lags is None else newey_west(panel, self.hac_lags)
        self.n_features_in_ = X.shape[1]
        return self


class QuantileIVInference(_InferenceMixin, BaseEstimator):
    """Robust inference on endogenous coefficients in linear quantile IV.

    ``fit(X, y, instruments=Z, controls=C)`` treats X as the endogenous
    regressors D. Controls default to a constant column.

    Parameters
    ----------
    grid : ParamGrid
    tau : float
    statistic, alpha, n_draws, random_state
        As in :class:`ConditionalTest`.
    kernel : {"gaussian", "uniform"}
    bandwidth : float or None
        None uses the per-grid-point default bandwidth.
    k_step : float
    """

    def __init__(self, grid=None, tau=0.5, statistic="qlr", alpha=0.05, n_draws=1000, kernel="gaussian",
                 bandwidth=None, k_step=QIV_K_STEP, random_state=None):
        self.grid = grid
        self.tau = tau
        self.statistic = statistic
        self.alpha = alpha
        self.n_draws = n_draws
        self.kernel = kernel
        self.bandwidth = bandwidth
        self.k_step = k_step
        self.random_state = random_state

    def fit(self, X, y, *, instruments, controls=None):
        if self.grid is None:
            raise ValueError("grid must be supplied")
        X, y = check_X_y(X, y)
        Z = check_array(instruments)
        C = np.ones((X.shape[0], 1)) if controls is None else check_array(controls)
        data = QuantileIVData(y, X, C, Z, self.tau)
        spec = KernelSpec.from_name(self.kernel, self.bandwidth)
        path = profile(data, self.grid, spec)
        self.grid_ = self.grid
        self.path_ = path
        self.moments_ = concentrated_g(data, path)
        self.field_ = qiv_covariance(data, path, spec)
        self.n_features_in_ = X.shape[1]
        return self

    def transform(self, X=None):
        """Concentrated moment process, shape (G, k)."""
        check_is_fitted(self, "moments_")
        return np.array(self.moments_.values)


class EulerConfidenceSet(_InferenceMixin, BaseEstimator):
    """Joint (delta, gamma) confidence set for the consumption Euler equation.

    ``fit(X)`` takes a (T, 2) array of consumption levels and gross returns.
    """

    def __init__(self, grid=None, statistic="qlr", alpha=0.10, n_draws=1000, hac_lags=1, random_state=None):
        self.grid = grid
        self.statistic = statistic
        self.alpha = alpha
        self.n_draws = n_draws
        self.hac_lags = hac_lags
        self.random_state = random_state

    def fit(self, X, y=None):
        X = check_array(X)
        if X.shape[1] != 2:
            raise ValueError("X must have two columns: consumption level and gross return")
        data = EulerData.from_levels(X[:, 0], X[:, 1])
        grid = default_euler_grid() if self.grid is None else self.grid
        panel = euler_panel(data, grid)
        self.grid_ = grid
        self.moments_ = build_moment_process(panel)
        self.field_ = newey_west(panel, self.hac_lags)
        self.n_features_in_ = 2
        return self
