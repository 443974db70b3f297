"""Covariance-field estimators from per-observation moment contributions."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import CovarianceField, ParamGrid

__all__ = ["MomentPanel", "iid_covariance", "newey_west", "psd_project", "bartlett_weights"]


@dataclass(frozen=True, eq=False)
class MomentPanel:
    """Per-observation contributions phi(X_t, theta_i), shape (T, G, k)."""

    grid: ParamGrid
    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.ndim == 2:
            v = v[:, :, None]
        if v.ndim != 3 or v.shape[1] != self.grid.size:
            raise ValueError(f"panel must have shape (T, {self.grid.size}, k), got {v.shape}")
        if not np.all(np.isfinite(v)):
            raise ValueError("panel contains non-finite values")
        v = np.ascontiguousarray(v)
        v.flags.writeable = False
        object.__setattr__(self, "values", v)

    @property
    def T(self) -> int:
        return self.values.shape[0]

    @property
    def k(self) -> int:
        return self.values.shape[2]

    def flat(self) -> np.ndarray:
        """(T, G*k) view with grid point i in columns i*k:(i+1)*k."""
        return self.values.reshape(self.T, -1)


def _centered(panel: MomentPanel, center: bool) -> np.ndarray:
    X = panel.flat()
    return X - X.mean(axis=0) if center else X


def iid_covariance(panel: MomentPanel, center: bool = True, lambda_bar: float = 1e6) -> CovarianceField:
    """Sample covariance (1/T convention) of the contributions across all grid pairs."""
    if panel.T < 2:
        raise ValueError("need at least two observations")
    X = _centered(panel, center)
    return CovarianceField(panel.grid, X.T @ X / panel.T, panel.k, lambda_bar)


def bartlett_weights(lags: int) -> np.ndarray:
    """w_l = 1 - l / (lags + 1) for l = 1..lags."""
    return 1.0 - np.arange(1, lags + 1) / (lags + 1.0)


def newey_west(panel: MomentPanel, lags: int = 1, center: bool = True, lambda_bar: float = 1e6) -> CovarianceField:
    """Bartlett-kernel HAC estimator applied to every grid pair.

    ``Sigma(i, j) = Gamma_0(i, j) + sum_l w_l (Gamma_l(i, j) + Gamma_l(j, i)')`` with
    ``Gamma_l(i, j) = (1/T) sum_{t > l} phi_t(theta_i) phi_{t-l}(theta_j)'``.
    """
    T = panel.T
    if T < 2:
        raise ValueError("need at least two observations")
    if not 0 <= int(lags) < T:
        raise ValueError(f"lags must satisfy 0 <= lags < T={T}, got {lags}")
    X = _centered(panel, center)
    S = X.T @ X / T
    for lag, w in zip(range(1, int(lags) + 1), bartlett_weights(int(lags))):
        gamma = X[lag:].T @ X[:-lag] / T
        S += w * (gamma + gamma.T)
    return CovarianceField(panel.grid, S, panel.k, lambda_bar)


def psd_project(field: CovarianceField, return_clip: bool = False):
    """Nearest PSD field: clip negative eigenvalues of the assembled matrix to zero.

    With ``return_clip`` also returns the largest clipped magnitude.
    """
    w, U = np.linalg.eigh(field.matrix)
    clip = float(max(0.0, -w.min())) if w.size else 0.0
    if clip == 0.0:
        out = field
    else:
        out = CovarianceField(field.grid, (U * np.clip(w, 0.0, None)) @ U.T, field.k, field.lambda_bar)
    return (out, clip) if return_clip else out
