"""Concentrating strongly identified nuisance parameters out of a long moment model.

The concentrated process is ``g(theta) = g_long(beta_hat(theta), theta)``
and its covariance is the sandwich

    Sigma(theta_i, theta_j) = (I_k, M(theta_i)) Sigma_L(i, j) (I_k, M(theta_j))'

where ``Sigma_L`` is the covariance of the stacked process (long moments,
sqrt(T)-scaled nuisance estimation error) and ``M(theta)`` is the Jacobian of
the long mean function in beta. How ``beta_hat`` is computed is up to the
application; this module only consumes the resulting :class:`ProfilePath`.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .core import CovarianceField, MomentProcess, ParamGrid
from .covest import MomentPanel

__all__ = [
    "LongMomentModel",
    "ProfilePath",
    "concentrated_moment",
    "concentrated_covariance",
    "long_panel",
    "stack_panels",
]


class LongMomentModel:
    """Moment contributions phi_L(X_t, beta, theta) of a model with nuisance beta.

    Parameters
    ----------
    contributions : callable
        ``contributions(beta, theta)`` returning the ``(T, k)`` array of
        per-observation moments.
    T, k, p, q : int
        Sample size, moment, nuisance and parameter-of-interest dimensions.
    """

    def __init__(self, contributions: Callable[[np.ndarray, np.ndarray], np.ndarray], T: int, k: int, p: int, q: int):
        self.contributions = contributions
        self.T, self.k, self.p, self.q = int(T), int(k), int(p), int(q)

    @classmethod
    def from_observation(cls, fn, T, k, p, q) -> "LongMomentModel":
        """Wrap a per-observation function ``fn(t, beta, theta) -> k-vector``."""

        def contributions(beta, theta):
            return np.array([fn(t, beta, theta) for t in range(T)], dtype=float).reshape(T, k)

        return cls(contributions, T, k, p, q)

    def evaluate(self, beta, theta) -> np.ndarray:
        out = np.asarray(self.contributions(np.asarray(beta, float), np.asarray(theta, float)), dtype=float)
        if out.shape != (self.T, self.k):
            raise ValueError(f"moment model returned shape {out.shape}, expected {(self.T, self.k)}")
        if not np.all(np.isfinite(out)):
            raise ValueError("moment model returned non-finite values")
        return out


@dataclass(frozen=True, eq=False)
class ProfilePath:
    """Profiled nuisance estimates along a grid.

    ``betas[i]`` is beta_hat(theta_i) and ``m_hats[i]`` the (k, p) Jacobian
    estimate M(theta_i). Optional ``bounds`` is a (p, 2) array of the
    nuisance parameter space; estimates must lie strictly inside it.
    """

    grid: ParamGrid
    betas: np.ndarray
    m_hats: np.ndarray
    bounds: np.ndarray | None = None

    def __post_init__(self):
        G = self.grid.size
        b = np.asarray(self.betas, dtype=float).reshape(G, -1)
        m = np.asarray(self.m_hats, dtype=float)
        if m.ndim == 2 and b.shape[1] == 0:
            m = m.reshape(G, m.shape[1] if m.shape[0] == G else 0, 0)
        if m.ndim != 3 or m.shape[0] != G or m.shape[2] != b.shape[1]:
            raise ValueError(f"m_hats must have shape (G, k, p) = ({G}, k, {b.shape[1]}), got {m.shape}")
        if not np.all(np.isfinite(b)):
            raise ValueError("profiled nuisance estimates must be finite")
        if self.bounds is not None:
            lim = np.asarray(self.bounds, dtype=float).reshape(b.shape[1], 2)
            inside = (b > lim[:, 0]) & (b < lim[:, 1])
            if not np.all(inside):
                bad = int(np.flatnonzero(~inside.all(axis=1))[0])
                raise ValueError(f"beta_hat at grid point {bad} is not interior to the declared bounds")
        b.flags.writeable = False
        m = np.array(m)
        m.flags.writeable = False
        object.__setattr__(self, "betas", b)
        object.__setattr__(self, "m_hats", m)

    @property
    def p(self) -> int:
        return self.betas.shape[1]

    @classmethod
    def empty(cls, grid: ParamGrid, k: int) -> "ProfilePath":
        """Path for a model without nuisance parameters (p = 0)."""
        return cls(grid, np.zeros((grid.size, 0)), np.zeros((grid.size, k, 0)))


def long_panel(model: LongMomentModel, path: ProfilePath) -> MomentPanel:
    """Long contributions phi_L(X_t, beta_hat(theta_i), theta_i), shape (T, G, k)."""
    pts = path.grid.points
    vals = np.stack([model.evaluate(path.betas[i], pts[i]) for i in range(path.grid.size)], axis=1)
    return MomentPanel(path.grid, vals)


def concentrated_moment(model: LongMomentModel, path: ProfilePath) -> MomentProcess:
    """g(theta_i) = T^{-1/2} sum_t phi_L(X_t, beta_hat(theta_i), theta_i)."""
    pts = path.grid.points
    T = model.T
    vals = np.stack([model.evaluate(path.betas[i], pts[i]).sum(axis=0) for i in range(path.grid.size)])
    return MomentProcess(path.grid, vals / np.sqrt(T), T)


def stack_panels(moments: MomentPanel, influence: MomentPanel) -> MomentPanel:
    """Stack long moments with the nuisance estimator's influence contributions.

    The result has dimension k + p; its covariance field is the long field
    consumed by :func:`concentrated_covariance`.
    """
    if moments.T != influence.T or moments.grid.size != influence.grid.size:
        raise ValueError("panels disagree in T or grid size")
    return MomentPanel(moments.grid, np.concatenate([moments.values, influence.values], axis=2))


def concentrated_covariance(long_field: CovarianceField, path: ProfilePath, check: bool = True) -> CovarianceField:
    """Sandwich (I_k, M_i) Sigma_L(i, j) (I_k, M_j)' for every grid pair.

    With ``check`` the diagonal blocks of the long field are tested for
    degeneracy, which happens when the nuisance estimator reuses a subset
    of the long moments; the fix is to drop the redundant directions from
    the long moment vector.
    """
    G, p = path.grid.size, path.p
    kl = long_field.k
    k = kl - p
    if long_field.grid.size != G or k < 1 or path.m_hats.shape[1] != k:
        raise ValueError(
            f"dimension mismatch: long field is {kl}-dimensional on {long_field.grid.size} points, "
            f"path has p={p}, M is {path.m_hats.shape[1:]} on {G} points"
        )
    if check:
        diag = long_field.diag_blocks()
        eig = np.linalg.eigvalsh(diag)
        scale = np.maximum(np.trace(diag, axis1=1, axis2=2) / kl, np.finfo(float).tiny)
        bad = np.flatnonzero(eig[:, 0] <= 1e-10 * scale)
        if bad.size:
            raise ValueError(
                f"long covariance is degenerate at grid point {int(bad[0])}; "
                "drop redundant moment directions (e.g. those used to estimate the nuisance parameter)"
            )
    if p == 0:
        return CovarianceField(long_field.grid, long_field.matrix, k, long_field.lambda_bar)
    S = np.concatenate([np.broadcast_to(np.eye(k), (G, k, k)), path.m_hats], axis=2)  # (G, k, k+p)
    L4 = long_field.matrix.reshape(G, kl, G, kl)
    tmp = np.einsum("iab,ibjc->iajc", S, L4, optimize=True)
    out = np.einsum("iajc,jdc->iajd", tmp, S, optimize=True)
    return CovarianceField(long_field.grid, out.reshape(G * k, G * k), k, long_field.lambda_bar)
