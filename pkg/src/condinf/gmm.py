"""Moment-model front end and the consumption Euler equation model.

The Euler model has moment contributions

    phi_t(delta, gamma) = (delta (C_t / C_{t-1})^{-gamma} R_t - 1) Z_t,
    Z_t = (1, C_{t-1} / C_{t-2}, R_{t-1})'.

The power term is evaluated as ``exp(-gamma log ratio)`` so the default
box ``gamma in [-6, 60]`` cannot overflow for realistic ratios.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np
import scipy.optimize

from .condcrit import invert_test
from .core import ConfidenceSet, MomentProcess, ParamGrid
from .covest import MomentPanel, newey_west
from .stats import get_statistic

__all__ = [
    "EulerData",
    "EulerParams",
    "DEFAULT_BOX",
    "default_euler_grid",
    "euler_panel",
    "build_moment_process",
    "euler_confset",
    "profile_delta",
    "euler_gamma_confset",
    "PROFILE_STRATEGIES",
]

#: default (delta, gamma) box
DEFAULT_BOX = ((0.6, 1.1), (-6.0, 60.0))


@dataclass(frozen=True, eq=False)
class EulerData:
    """Consumption growth ratios C_t / C_{t-1} and gross returns R_t, aligned in t."""

    consumption_ratio: np.ndarray
    returns: np.ndarray

    def __post_init__(self):
        c = np.asarray(self.consumption_ratio, dtype=float).ravel()
        r = np.asarray(self.returns, dtype=float).ravel()
        if c.size != r.size:
            raise ValueError("consumption_ratio and returns must have equal length")
        if c.size < 3:
            raise ValueError("need at least 3 observations")
        if not (np.all(np.isfinite(c)) and np.all(np.isfinite(r))):
            raise ValueError("data contain non-finite values")
        if np.any(c <= 0):
            raise ValueError("consumption ratios must be positive")
        for name, a in (("consumption_ratio", c), ("returns", r)):
            a.flags.writeable = False
            object.__setattr__(self, name, a)

    @property
    def T(self) -> int:
        """Number of usable moment observations (one ratio is lost to the lag)."""
        return self.consumption_ratio.size - 1

    @classmethod
    def from_levels(cls, consumption, returns) -> "EulerData":
        """Build from consumption levels and returns observed on the same dates.

        The first date only anchors the first ratio, so the result has one
        observation fewer than the inputs.
        """
        c = np.asarray(consumption, dtype=float).ravel()
        r = np.asarray(returns, dtype=float).ravel()
        if c.size != r.size:
            raise ValueError("consumption and returns must have equal length")
        if np.any(c <= 0):
            raise ValueError("consumption levels must be positive")
        return cls(c[1:] / c[:-1], r[1:])

    @classmethod
    def from_csv(cls, path) -> "EulerData":
        """Read columns ``consumption`` (levels) and ``return`` (gross)."""
        with open(path, newline="") as fh:
            rows = [r for r in csv.reader(line for line in fh if not line.startswith("#")) if r]
        if len(rows) < 2:
            raise ValueError(f"{path}: no data rows")
        header = [h.strip().lower() for h in rows[0]]
        missing = {"consumption", "return"} - set(header)
        if missing:
            raise ValueError(f"{path}: missing column(s) {sorted(missing)}")
        try:
            body = np.array(rows[1:], dtype=float)
        except ValueError as exc:
            raise ValueError(f"{path}: malformed numeric value ({exc})") from None
        return cls.from_levels(body[:, header.index("consumption")], body[:, header.index("return")])

    def instruments(self) -> np.ndarray:
        """(T, 3) array of (1, lagged ratio, lagged return)."""
        c, r = self.consumption_ratio, self.returns
        return np.column_stack([np.ones(c.size - 1), c[:-1], r[:-1]])


@dataclass(frozen=True)
class EulerParams:
    delta: float
    gamma: float

    def __post_init__(self):
        if not self.delta > 0:
            raise ValueError(f"delta must be positive, got {self.delta}")

    def as_array(self) -> np.ndarray:
        return np.array([self.delta, self.gamma])


def default_euler_grid(n_delta: int = 26, n_gamma: int = 34, null_point=None, box=DEFAULT_BOX) -> ParamGrid:
    """Regular grid over the (delta, gamma) box, optionally containing ``null_point``."""
    (d0, d1), (g0, g1) = box
    return ParamGrid.from_axes([np.linspace(d0, d1, n_delta), np.linspace(g0, g1, n_gamma)], null_point)


def _pricing_factor(data: EulerData, gammas) -> np.ndarray:
    """a_t(gamma) = (C_t/C_{t-1})^{-gamma} R_t, shape (T, len(gammas))."""
    logc = np.log(data.consumption_ratio[1:])
    return np.exp(-np.outer(logc, np.asarray(gammas, dtype=float))) * data.returns[1:, None]


def euler_panel(data: EulerData, grid: ParamGrid) -> MomentPanel:
    """Per-observation Euler moments at every (delta, gamma) grid point, shape (T, G, 3)."""
    if grid.q != 2:
        raise ValueError("Euler grid must be over (delta, gamma)")
    pts = grid.points
    if np.any(pts[:, 0] <= 0):
        raise ValueError("delta must be positive on the grid")
    a = _pricing_factor(data, pts[:, 1])
    if not np.all(np.isfinite(a)):
        raise ValueError("pricing factor overflowed on the grid; narrow the gamma range")
    e = pts[:, 0] * a - 1.0  # (T, G)
    return MomentPanel(grid, e[:, :, None] * data.instruments()[:, None, :])


def build_moment_process(panel: MomentPanel) -> MomentProcess:
    """g(theta_i) = T^{-1/2} sum_t phi_t(theta_i)."""
    return MomentProcess(panel.grid, panel.values.sum(axis=0) / np.sqrt(panel.T), panel.T)


def euler_confset(
    data: EulerData,
    grid: ParamGrid | None = None,
    alpha: float = 0.10,
    n_draws: int = 1000,
    statistic="qlr",
    hac_lags: int = 1,
    rng=None,
    **options,
) -> ConfidenceSet:
    """Joint confidence set for (delta, gamma) by inverting a conditional test.

    The Newey-West field is built once over the whole grid; every grid point
    is then tested as the null. Extra ``options`` go to :func:`invert_test`
    (``prune``, ``common_random_numbers``, ``epsilon``) or to the statistic.
    """
    grid = default_euler_grid() if grid is None else grid
    panel = euler_panel(data, grid)
    g = build_moment_process(panel)
    field = newey_west(panel, hac_lags)
    inv_keys = {"prune", "common_random_numbers", "epsilon"}
    inv_opts = {k: v for k, v in options.items() if k in inv_keys}
    stat_opts = {k: v for k, v in options.items() if k not in inv_keys}
    stat = get_statistic(statistic, **stat_opts) if isinstance(statistic, str) else statistic
    return invert_test(g, field, stat, alpha, n_draws, rng, grid=grid, **inv_opts)


# -- profiling delta out at fixed gamma ---------------------------------------------


def _constant_profile(data, gammas, hac_lags, bounds):
    """delta_hat(gamma) = 1 / mean(a_t(gamma)) from the constant-instrument moment.

    That moment is then identically zero, so it is dropped; the two lagged
    instruments remain and the covariance carries the estimation effect of
    delta_hat through the concentration sandwich.
    """
    a = _pricing_factor(data, gammas)  # (T, G)
    Z = data.instruments()
    abar = a.mean(axis=0)
    delta = 1.0 / abar
    e = delta * a - 1.0
    long_m = e[:, :, None] * Z[:, None, 1:]  # (T, G, 2)
    infl = (-e / abar)[:, :, None]  # sqrt(T)(delta_hat - delta) contributions
    M = (a[:, :, None] * Z[:, None, 1:]).mean(axis=0)[:, :, None]  # d long mean / d delta, (G, 2, 1)
    return delta, long_m, infl, M


def _cue_objective(delta, a, Z, hac_lags):
    e = delta * a - 1.0
    X = e[:, None] * Z
    gbar = X.sum(axis=0) / np.sqrt(X.shape[0])
    S = _nw_matrix(X, hac_lags)
    try:
        return float(gbar @ np.linalg.solve(S, gbar))
    except np.linalg.LinAlgError:
        return np.inf


def _nw_matrix(X, lags):
    T = X.shape[0]
    Xc = X - X.mean(axis=0)
    S = Xc.T @ Xc / T
    for lag in range(1, lags + 1):
        gam = Xc[lag:].T @ Xc[:-lag] / T
        S += (1.0 - lag / (lags + 1.0)) * (gam + gam.T)
    return S


def _whitened_complement(S, M):
    """(k-1, k) matrix P with P M = 0 and P S P' = I."""
    w, U = np.linalg.eigh(S)
    Sih = (U / np.sqrt(np.clip(w, 1e-300, None))) @ U.T  # S^{-1/2}
    m = Sih @ M
    Q, _ = np.linalg.qr(np.column_stack([m, np.eye(S.shape[0])]))
    return Q[:, 1:S.shape[0]].T @ Sih


def _cue_profile(data, gammas, hac_lags, bounds):
    """delta_hat(gamma) minimizing the CUE objective over ``bounds``.

    The CUE first-order condition makes the concentrated moments lie in a
    (k - 1)-dimensional subspace; the returned long moments are reduced by
    a gamma-specific matrix P(gamma) that annihilates the delta-Jacobian in
    whitened coordinates. QLR is invariant to such gamma-specific
    invertible recombinations of the non-degenerate directions.
    """
    a = _pricing_factor(data, gammas)
    Z = data.instruments()
    T, k = Z.shape
    lo, hi = bounds
    deltas, long_m, infl, Ms = [], [], [], []
    for j in range(a.shape[1]):
        res = scipy.optimize.minimize_scalar(
            _cue_objective, bounds=(lo, hi), args=(a[:, j], Z, hac_lags), method="bounded",
            options={"xatol": 1e-10},
        )
        d = float(res.x)
        e = d * a[:, j] - 1.0
        X = e[:, None] * Z
        M = (a[:, j, None] * Z).mean(axis=0)[:, None]  # (k, 1)
        S = _nw_matrix(X, hac_lags)
        P = _whitened_complement(S, M)  # (k-1, k)
        W = np.linalg.solve(S, M)
        Hinv = 1.0 / float((M.T @ W)[0, 0])
        # influence of the (asymptotically GMM-efficient) CUE: -(M'S^-1M)^-1 M'S^-1 phi_t
        deltas.append(d)
        long_m.append(X @ P.T)
        infl.append(-(X @ W) * Hinv)
        Ms.append(P @ M)
    return (np.array(deltas), np.stack(long_m, axis=1), np.stack(infl, axis=1), np.stack(Ms))


PROFILE_STRATEGIES = {"constant": _constant_profile, "cue": _cue_profile}


def profile_delta(data: EulerData, gammas, strategy: str = "constant", hac_lags: int = 1, bounds=(0.05, 5.0)):
    """Concentrate delta out at each gamma.

    Returns ``(gamma_grid, g, field, delta_hat)`` where ``g`` and ``field``
    are the concentrated moment process and covariance field over the
    gamma grid (null index 0; move it with ``with_null``).
    """
    from .concentrate import ProfilePath, concentrated_covariance, stack_panels

    if strategy not in PROFILE_STRATEGIES:
        raise ValueError(f"unknown profiling strategy {strategy!r}; choose from {sorted(PROFILE_STRATEGIES)}")
    gammas = np.asarray(gammas, dtype=float).ravel()
    ggrid = ParamGrid(gammas[:, None], 0)
    delta, long_m, infl, M = PROFILE_STRATEGIES[strategy](data, gammas, hac_lags, bounds)
    long_panel = stack_panels(MomentPanel(ggrid, long_m), MomentPanel(ggrid, infl))
    long_field = newey_west(long_panel, hac_lags)
    path = ProfilePath(ggrid, delta[:, None], M)
    field = concentrated_covariance(long_field, path)
    g = MomentProcess(ggrid, long_m.sum(axis=0) / np.sqrt(long_m.shape[0]), long_m.shape[0])
    return ggrid, g, field, delta


def euler_gamma_confset(
    data: EulerData,
    gammas,
    alpha: float = 0.10,
    n_draws: int = 1000,
    statistic="qlr",
    strategy: str = "constant",
    hac_lags: int = 1,
    rng=None,
    bounds=(0.05, 5.0),
) -> ConfidenceSet:
    """Confidence set for gamma alone with delta concentrated out."""
    ggrid, g, field, _ = profile_delta(data, gammas, strategy, hac_lags, bounds)
    stat = get_statistic(statistic) if isinstance(statistic, str) else statistic
    return invert_test(g, field, stat, alpha, n_draws, rng, grid=ggrid)
