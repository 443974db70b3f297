"""Conditional critical values for full-path statistics.

Given the observed moment process g and a covariance field, the process

    h(theta) = g(theta) - Sigma(theta, theta_0) Sigma(theta_0, theta_0)^{-1} g(theta_0)

is held fixed while g(theta_0) is redrawn from N(0, Sigma(theta_0, theta_0)).
Every redraw xi* yields a simulated path h + V xi*, and the empirical
(1 - alpha) quantile of the statistic over those paths is the critical
value.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Callable, Mapping

import numpy as np

from .core import (
    ConfidenceSet,
    CovarianceField,
    HProcess,
    MomentProcess,
    ParamGrid,
    TestResult,
    solve_spd,
    sym_root,
)
from .stats import JKStatistic, Statistic

__all__ = [
    "CriticalValueResult",
    "compute_h",
    "simulate_g_star",
    "draw_xi",
    "quantile_rank",
    "conditional_critical_value",
    "conditional_test",
    "conditional_tests",
    "invert_test",
]

MIN_DRAWS = 100


@dataclass(frozen=True, eq=False)
class CriticalValueResult:
    value: float
    draws: np.ndarray
    quantile_rank: int


def _check_same_grid(grid: ParamGrid, field: CovarianceField):
    if field.grid is grid:
        return
    if field.grid.size != grid.size or not np.array_equal(field.grid.points, grid.points):
        raise ValueError("moment process and covariance field live on different grids")


def compute_h(g: MomentProcess, field: CovarianceField) -> HProcess:
    """Project g(theta_0) out of the moment process.

    The null is taken from ``g.grid.null_index``. ``V(theta_0)`` is set to
    the identity and ``h(theta_0)`` to zero exactly.
    """
    _check_same_grid(g.grid, field)
    if g.k != field.k:
        raise ValueError(f"moment dimension {g.k} does not match field dimension {field.k}")
    G, k = g.grid.size, g.k
    i0 = g.grid.null_index
    s00 = field.block(i0, i0)
    cross = field.column(i0)  # Sigma(theta_i, theta_0)
    vt, regularized = solve_spd(s00, cross.reshape(G * k, k).T, return_info=True)
    V = vt.T.reshape(G, k, k)
    V[i0] = np.eye(k)
    h = g.values - np.einsum("gij,j->gi", V, g.values[i0])
    h[i0] = 0.0
    return HProcess(g.grid, h, V, regularized)


def simulate_g_star(h: HProcess, field: CovarianceField, xi_star) -> MomentProcess:
    """Simulated path ``g*(theta_i) = h(theta_i) + V(theta_i) xi*``."""
    xi = np.asarray(xi_star, dtype=float)
    if xi.shape != (h.k,):
        raise ValueError(f"xi_star must have length {h.k}, got shape {xi.shape}")
    _check_same_grid(h.grid, field)
    vals = h.values + np.einsum("gij,j->gi", h.v_coeffs, xi)
    vals[h.grid.null_index] = xi
    return MomentProcess(h.grid, vals)


def _null_root(field: CovarianceField, null_index: int) -> np.ndarray:
    return sym_root(field.block(null_index, null_index))


def draw_xi(field: CovarianceField, rng, size: int | None = None, null_index: int | None = None):
    """Draw(s) from N(0, Sigma(theta_0, theta_0)) as ``L z`` with L the symmetric root.

    Returns a k-vector, or a ``(size, k)`` array when ``size`` is given.
    """
    rng = np.random.default_rng(rng)
    i0 = field.grid.null_index if null_index is None else null_index
    L = _null_root(field, i0)
    z = rng.standard_normal((1 if size is None else size, field.k))
    xi = z @ L.T
    return xi[0] if size is None else xi


def quantile_rank(alpha: float, n_draws: int) -> int:
    """Zero-based index of the ceil((1 - alpha) B)-th order statistic."""
    # guard against (1 - alpha) * B landing a hair above an integer
    r = math.ceil((1.0 - alpha) * n_draws - 1e-9)
    return min(max(r, 1), n_draws) - 1


def _check_alpha_draws(alpha, n_draws):
    if not 0.0 < alpha < 1.0:
        raise ValueError(f"alpha must lie in (0, 1), got {alpha}")
    if int(n_draws) < MIN_DRAWS:
        raise ValueError(f"n_draws must be at least {MIN_DRAWS}, got {n_draws}")


def _critical(draws, alpha):
    draws = np.sort(draws)
    r = quantile_rank(alpha, draws.size)
    return CriticalValueResult(float(draws[r]), draws, r)


def conditional_critical_value(
    stat: Statistic,
    h: HProcess,
    field: CovarianceField,
    alpha: float,
    n_draws: int,
    rng=None,
    xi_star=None,
) -> CriticalValueResult:
    """Empirical (1 - alpha) quantile of the statistic given h.

    ``xi_star`` may supply pre-drawn ``(n_draws, k)`` values of g(theta_0);
    otherwise they are drawn from ``rng``.
    """
    _check_alpha_draws(alpha, n_draws)
    if xi_star is None:
        xi_star = draw_xi(field, rng, size=int(n_draws), null_index=h.grid.null_index)
    return _critical(stat.prepare(h, field)(xi_star), alpha)


def _result(name, R, cv, alpha, n_draws, epsilon, flags=()):
    exceed = int(np.count_nonzero(cv.draws >= R))
    return TestResult(
        statistic=float(R),
        critical_value=cv.value,
        p_value=(1 + exceed) / (n_draws + 1),
        reject=bool(R > cv.value + epsilon),
        n_draws=int(n_draws),
        alpha=float(alpha),
        name=name,
        flags=tuple(flags),
    )


def conditional_tests(
    g: MomentProcess,
    field: CovarianceField,
    stats: Mapping[str, Statistic],
    alpha: float,
    n_draws: int,
    rng=None,
    epsilon: float = 0.0,
    xi_star=None,
) -> dict[str, TestResult]:
    """Several conditional tests sharing one h and one set of xi* draws."""
    _check_alpha_draws(alpha, n_draws)
    h = compute_h(g, field)
    if xi_star is None:
        xi_star = draw_xi(field, rng, size=int(n_draws), null_index=g.grid.null_index)
    flags_common = ("ridge",) if h.regularized else ()
    out = {}
    for name, stat in stats.items():
        if isinstance(stat, JKStatistic):
            res = stat.result(g.at_null, h, field)
            out[name] = replace(res, name=name, flags=flags_common + res.flags)
            continue
        ev = stat.prepare(h, field)
        R = float(ev(g.at_null[None, :])[0])
        cv = _critical(ev(xi_star), alpha)
        out[name] = _result(name, R, cv, alpha, n_draws, epsilon, flags_common + ev.flags)
    return out


def conditional_test(
    g: MomentProcess,
    field: CovarianceField,
    stat: Statistic,
    alpha: float = 0.05,
    n_draws: int = 1000,
    rng=None,
    epsilon: float = 0.0,
) -> TestResult:
    """Test H0: m(theta_0) = 0 with the statistic's conditional critical value.

    Rejects when the observed statistic exceeds the critical value plus
    ``epsilon``. The p-value is ``(1 + #{R* >= R}) / (n_draws + 1)``.
    """
    name = getattr(stat, "name", "statistic")
    return conditional_tests(g, field, {name: stat}, alpha, n_draws, rng, epsilon)[name]


def _resolve(obj, i):
    return obj(i) if callable(obj) else obj


def invert_test(
    moments: MomentProcess | Callable[[int], MomentProcess],
    fields: CovarianceField | Callable[[int], CovarianceField],
    stat: Statistic | JKStatistic,
    alpha: float = 0.05,
    n_draws: int = 1000,
    rng=None,
    grid: ParamGrid | None = None,
    common_random_numbers: bool = True,
    prune: bool = True,
    epsilon: float = 0.0,
) -> ConfidenceSet:
    """Confidence set by testing every grid point as the null.

    ``moments`` and ``fields`` are either fixed objects (when g and Sigma do
    not depend on the hypothesized value, as for concentrated or GMM
    moments on a common grid) or callables mapping a null index to the
    object for that null.

    With ``common_random_numbers`` one block of standard normals is reused
    for every null (scaled by that null's covariance root), which keeps the
    set boundary stable across neighbouring points. With ``prune``, a null
    is rejected without full simulation when its statistic already exceeds
    the critical value of a pointwise upper bound (exact for QLR and K,
    which never exceed S). Points whose evaluation fails are excluded and
    recorded in ``flags``.
    """
    _check_alpha_draws(alpha, n_draws)
    rng = np.random.default_rng(rng)
    if grid is None:
        grid = _resolve(moments, 0).grid
    G = grid.size
    accepted = np.zeros(G, dtype=bool)
    stats_out = np.full(G, np.nan)
    crit_out = np.full(G, np.nan)
    flags = {}
    z_common = None
    bound_ok = prune and getattr(stat, "bounded_by_s", False) and hasattr(stat, "prepare_bound")
    for i in range(G):
        try:
            g = _resolve(moments, i).with_null(i)
            field = _resolve(fields, i)
            if isinstance(stat, JKStatistic):
                res = stat.result(g.at_null, compute_h(g, field), field)
                stats_out[i], crit_out[i], accepted[i] = res.statistic, 1.0, not res.reject
                continue
            k = g.k
            if common_random_numbers:
                if z_common is None:
                    z_common = rng.standard_normal((int(n_draws), k))
                z = z_common
            else:
                z = rng.standard_normal((int(n_draws), k))
            xi = z @ _null_root(field, i).T
            h = compute_h(g, field)
            ev = stat.prepare(h, field)
            R = float(ev(g.at_null[None, :])[0])
            stats_out[i] = R
            if bound_ok:
                cb = _critical(stat.prepare_bound(h, field)(xi), alpha).value
                if R > (cb + epsilon) * (1 + 1e-10) + 1e-10:
                    continue
            cv = _critical(ev(xi), alpha)
            crit_out[i] = cv.value
            accepted[i] = not (R > cv.value + epsilon)
        except (np.linalg.LinAlgError, ValueError, FloatingPointError) as exc:
            flags[i] = str(exc)
    return ConfidenceSet(grid, accepted, 1.0 - alpha, stats_out, crit_out, flags)
