"""Simulation designs and size / power experiment drivers.

Every replication ``r`` of an experiment with master seed ``s`` draws all of
its randomness (data, then critical-value draws) from
``np.random.default_rng([s, r])``, so results do not depend on how
replications are scheduled across workers.
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass
from functools import cached_property
from typing import Callable, Mapping, Sequence

import numpy as np
import scipy.stats
from joblib import Parallel, delayed
from scipy.stats import norm

from .condcrit import _null_root, compute_h, conditional_tests, quantile_rank
from .core import CovarianceField, MeanFunction, MomentProcess, ParamGrid, sym_root
from .gmm import EulerData, euler_confset
from .quantile_iv import QIV_K_STEP, KernelSpec, QuantileIVData, concentrated_g, profile, qiv_covariance
from .stats import QLR, get_statistic

__all__ = [
    "QivSimDesign",
    "LimitDesign",
    "StrongIdDesign",
    "EulerSimDesign",
    "gen_qiv_data",
    "gen_limit_draw",
    "gen_euler_data",
    "default_qiv_grid",
    "limit_designs",
    "QivScenario",
    "LimitScenario",
    "ExperimentRow",
    "size_experiment",
    "power_curve",
    "strong_id_experiment",
    "h_independence",
    "euler_experiment",
    "write_rows",
]

log = logging.getLogger(__name__)


# -- designs --------------------------------------------------------------------------


@dataclass(frozen=True)
class QivSimDesign:
    """Gaussian-copula quantile-IV design.

    Latent normals have unit variances, ``cov(xi_U, xi_D) = rho`` and
    ``cov(xi_D, xi_Zj) = pi``. With ``margins="uniform"`` all observed
    variables are ``Phi(xi)``, giving a linear conditional-quantile model at
    every quantile since the scale ``gamma_3 + gamma_4 D`` stays positive.
    ``margins="normal"`` keeps D and Z normal (only U is transformed).
    """

    rho: float = 0.25
    pi: float = 0.4
    gammas: tuple = (1.0, 1.0, 1.0, 1.0)
    n: int = 1000
    k: int = 5
    tau: float = 0.5
    margins: str = "uniform"

    def __post_init__(self):
        if len(self.gammas) != 4:
            raise ValueError("gammas must have four entries")
        if self.n < 2 or self.k < 1:
            raise ValueError("need n >= 2 and k >= 1")
        if not 0 < self.tau < 1:
            raise ValueError("tau must lie in (0, 1)")
        if self.margins not in ("uniform", "normal"):
            raise ValueError("margins must be 'uniform' or 'normal'")
        if np.linalg.eigvalsh(self.correlation()).min() < -1e-12:
            raise ValueError(
                f"copula correlation matrix is not PSD: need 1 - rho^2 - k pi^2 >= 0, "
                f"got {1 - self.rho ** 2 - self.k * self.pi ** 2:.4g}"
            )

    def correlation(self) -> np.ndarray:
        """Correlation of (xi_U, xi_D, xi_Z1..xi_Zk)."""
        S = np.eye(self.k + 2)
        S[0, 1] = S[1, 0] = self.rho
        S[1, 2:] = S[2:, 1] = self.pi
        return S

    @property
    def theta(self) -> float:
        """True coefficient on D at the median of U."""
        return float(self.gammas[1] + self.gammas[3] * (self.tau - 0.5))

    def as_dict(self) -> dict:
        return {"rho": self.rho, "pi": self.pi, "n": self.n, "k": self.k, "tau": self.tau, "margins": self.margins}


def gen_qiv_data(design: QivSimDesign, rng) -> QuantileIVData:
    """Draw one sample from the copula design; C is a constant column."""
    rng = np.random.default_rng(rng)
    L = sym_root(design.correlation())
    xi = rng.standard_normal((design.n, design.k + 2)) @ L.T
    U = norm.cdf(xi[:, 0])
    if design.margins == "uniform":
        D, Z = norm.cdf(xi[:, 1]), norm.cdf(xi[:, 2:])
    else:
        D, Z = xi[:, 1], xi[:, 2:]
    g1, g2, g3, g4 = design.gammas
    Y = g1 + g2 * D + (g3 + g4 * D) * (U - 0.5)
    return QuantileIVData(Y, D[:, None], np.ones((design.n, 1)), Z, design.tau)


def default_qiv_grid(center: float = 1.0, fine=(0.0, 2.0, 0.05), coarse=(-4.0, 6.0, 0.25)) -> ParamGrid:
    """Fine spacing near ``center`` and coarse spacing out to the outer range."""
    f0, f1, fs = fine
    c0, c1, cs = coarse
    fine_ax = np.arange(f0, f1 + fs / 2, fs)
    coarse_ax = np.concatenate([np.arange(c0, f0, cs), np.arange(f1 + cs, c1 + cs / 2, cs)])
    ax = np.unique(np.round(np.concatenate([fine_ax, coarse_ax]), 10))
    return ParamGrid.from_axes([ax], null_point=[center])


@dataclass(frozen=True, eq=False)
class LimitDesign:
    """Gaussian limit problem g = m + G with G ~ GP(0, field) on a grid."""

    mean: MeanFunction
    field: CovarianceField
    name: str = "limit"

    def __post_init__(self):
        if self.mean.grid.size != self.field.grid.size or self.mean.k != self.field.k:
            raise ValueError("mean and field disagree in grid size or dimension")
        if not self.mean.satisfies_null:
            raise ValueError("mean function must vanish at the null")

    @property
    def grid(self) -> ParamGrid:
        return self.field.grid

    @cached_property
    def root(self) -> np.ndarray:
        return sym_root(self.field.matrix)


def gen_limit_draw(design: LimitDesign, rng, size: int | None = None):
    """One (or ``size``) draws of g = m + G as MomentProcess objects."""
    rng = np.random.default_rng(rng)
    G, k = design.grid.size, design.field.k
    n = 1 if size is None else size
    z = rng.standard_normal((n, G * k)) @ design.root.T
    vals = z.reshape(n, G, k) + design.mean.values
    out = [MomentProcess(design.grid, v) for v in vals]
    return out[0] if size is None else out


def _kernel_field(grid: ParamGrid, kernel: Callable, sigma0, scale=None) -> CovarianceField:
    """field(i, j) = kernel(theta_i, theta_j) * D_i Sigma0 D_j with diagonal scalings D."""
    sigma0 = np.atleast_2d(np.asarray(sigma0, dtype=float))
    k = sigma0.shape[0]
    pts = grid.points
    dist = np.sqrt(((pts[:, None, :] - pts[None, :, :]) ** 2).sum(axis=2))
    K = kernel(dist)
    d = np.ones((grid.size, k)) if scale is None else np.asarray(scale, dtype=float).reshape(grid.size, k)
    blocks = K[:, :, None, None] * (d[:, None, :, None] * sigma0 * d[None, :, None, :])
    return CovarianceField.from_blocks(grid, blocks)


def limit_designs(G: int = 41, k: int = 3, null_index: int = 20) -> dict[str, LimitDesign]:
    """Three limit problems on [0, 1] sharing one covariance field.

    ``flat``: m = 0. ``spike``: a narrow large bump far from the null.
    ``hump``: a weak-identification hump with m(theta_0) = 0.
    """
    pts = np.linspace(0.0, 1.0, G)
    grid = ParamGrid(pts, null_index)
    t0 = pts[null_index]
    sigma0 = 0.5 * np.eye(k) + 0.5 * np.ones((k, k))
    scale = np.outer(1.0 + 0.5 * np.sin(2 * np.pi * pts), np.ones(k))
    field = _kernel_field(grid, lambda d: np.exp(-d / 0.3), sigma0, scale)
    direction = np.linspace(1.0, -0.5, k)
    spike_at = pts[-3]
    spike = 6.0 * np.exp(-((pts - spike_at) ** 2) / (2 * 0.02 ** 2))[:, None] * direction
    hump = (2.5 * (pts - t0) / 0.25 * np.exp(-((pts - t0) ** 2) / (2 * 0.25 ** 2)))[:, None] * direction[::-1]
    means = {"flat": np.zeros((G, k)), "spike": spike, "hump": hump}
    out = {}
    for name, m in means.items():
        m = m.copy()
        m[null_index] = 0.0
        out[name] = LimitDesign(MeanFunction(grid, m), field, name)
    return out


@dataclass(frozen=True, eq=False)
class StrongIdDesign:
    """Locally linear mean m(theta) = scale * M (theta - theta_0) on a small box.

    The covariance field is a squared-exponential kernel in theta times
    ``sigma0``. ``points_per_axis`` controls grid density on
    ``theta_0 + [-radius, radius]^q``.
    """

    slope: np.ndarray
    scale: float = 50.0
    radius: float = 0.1
    points_per_axis: int | None = None
    length_scale: float = 0.5
    sigma0: np.ndarray | None = None
    theta0: np.ndarray | None = None

    def __post_init__(self):
        M = np.atleast_2d(np.asarray(self.slope, dtype=float))
        k, q = M.shape
        s0 = np.eye(k) if self.sigma0 is None else np.asarray(self.sigma0, dtype=float)
        info = M.T @ np.linalg.solve(s0, M)
        if np.linalg.matrix_rank(info) < q:
            raise ValueError("M' Sigma0^-1 M must be nonsingular")
        object.__setattr__(self, "slope", M)
        object.__setattr__(self, "sigma0", s0)
        object.__setattr__(self, "theta0", np.zeros(q) if self.theta0 is None else np.asarray(self.theta0, float))
        if self.points_per_axis is None:
            object.__setattr__(self, "points_per_axis", 401 if q == 1 else 31)

    @property
    def q(self) -> int:
        return self.slope.shape[1]

    @cached_property
    def grid(self) -> ParamGrid:
        ax = np.linspace(-self.radius, self.radius, self.points_per_axis)
        return ParamGrid.from_axes([ax + t for t in self.theta0], null_point=self.theta0)

    @cached_property
    def limit(self) -> LimitDesign:
        grid = self.grid
        m = self.scale * (grid.points - self.theta0) @ self.slope.T
        ell = self.length_scale
        field = _kernel_field(grid, lambda d: np.exp(-0.5 * (d / ell) ** 2), self.sigma0)
        return LimitDesign(MeanFunction(grid, m), field, "strong-id")


@dataclass(frozen=True)
class EulerSimDesign:
    """Synthetic CRRA economy satisfying the Euler equation exactly.

    Log consumption growth is AR(1) with mean ``mu``, persistence ``phi`` and
    innovation sd ``sigma_x``. Log returns are
    ``-log(delta) + gamma x_t + u_t`` with ``u_t ~ N(-sigma_u^2 / 2, sigma_u^2)``
    independent of the past, so ``E[delta (C_t/C_{t-1})^-gamma R_t | past] = 1``.
    """

    delta: float = 0.97
    gamma: float = 1.3
    T: int = 400
    mu: float = 0.02
    phi: float = 0.5
    sigma_x: float = 0.02
    sigma_u: float = 0.15
    burn: int = 50

    def __post_init__(self):
        if not self.delta > 0:
            raise ValueError("delta must be positive")
        if not abs(self.phi) < 1:
            raise ValueError("phi must lie in (-1, 1)")
        if self.T < 3:
            raise ValueError("T must be at least 3")

    def as_dict(self) -> dict:
        return {"delta": self.delta, "gamma": self.gamma, "T": self.T}


def gen_euler_data(design: EulerSimDesign, rng) -> EulerData:
    """Consumption levels and returns with ``design.T`` usable moment observations."""
    rng = np.random.default_rng(rng)
    n = design.T + 2 + design.burn
    e = rng.standard_normal(n)
    x = np.empty(n)
    x[0] = design.mu + design.sigma_x * e[0] / math.sqrt(1 - design.phi ** 2)
    for t in range(1, n):
        x[t] = design.mu + design.phi * (x[t - 1] - design.mu) + design.sigma_x * e[t]
    u = rng.normal(-design.sigma_u ** 2 / 2, design.sigma_u, n)
    log_r = -math.log(design.delta) + design.gamma * x + u
    x, log_r = x[design.burn:], log_r[design.burn:]
    # ratios directly: cumulated levels overflow for long samples
    return EulerData(np.exp(x[1:]), np.exp(log_r[1:]))


# -- scenarios: one replication -> (g, field) ----------------------------------------


@dataclass(frozen=True, eq=False)
class QivScenario:
    """Simulated quantile-IV samples with the profiled pipeline applied."""

    design: QivSimDesign
    grid: ParamGrid | None = None
    spec: KernelSpec | None = None
    k_step: float = QIV_K_STEP

    @property
    def stat_options(self) -> dict:
        return {"step": self.k_step}

    def __post_init__(self):
        if self.grid is None:
            object.__setattr__(self, "grid", default_qiv_grid(self.design.theta))

    def simulate(self, rng):
        data = gen_qiv_data(self.design, rng)
        path = profile(data, self.grid, self.spec)
        return concentrated_g(data, path), qiv_covariance(data, path, self.spec)

    def params(self) -> dict:
        return self.design.as_dict()


@dataclass(frozen=True, eq=False)
class LimitScenario:
    """Draws from a known limit problem; the field is the truth."""

    design: LimitDesign

    @property
    def grid(self) -> ParamGrid:
        return self.design.grid

    def simulate(self, rng):
        return gen_limit_draw(self.design, rng), self.design.field

    def params(self) -> dict:
        return {"design": self.design.name}


# -- experiment drivers ---------------------------------------------------------------


@dataclass(frozen=True)
class ExperimentRow:
    statistic: str
    params: dict
    theta: float | None
    n_reps: int
    n_failed: int
    rate: float
    se: float


def _rate(count, n):
    if n == 0:
        return math.nan, math.nan
    p = count / n
    return p, math.sqrt(p * (1 - p) / n)


def _resolve_stats(statistics, options=None) -> dict:
    options = options or {}
    if isinstance(statistics, str) or not isinstance(statistics, (Sequence, Mapping)):
        statistics = [statistics]
    if isinstance(statistics, Mapping):
        return {n: get_statistic(v, **options) if isinstance(v, str) else v for n, v in statistics.items()}
    out = {}
    for s in statistics:
        obj = get_statistic(s, **options) if isinstance(s, str) else s
        out[s if isinstance(s, str) else obj.name] = obj
    return out


def _replicate(scenario, stats, alpha, n_draws, seed, rep, null_indices, epsilon):
    """Reject indicators (len(null_indices), n_stats) for one replication, or an error string."""
    rng = np.random.default_rng([seed, rep])
    try:
        g, fld = scenario.simulate(rng)
        z = rng.standard_normal((int(n_draws), g.k))
        out = np.zeros((len(null_indices), len(stats)), dtype=bool)
        for a, i in enumerate(null_indices):
            gi = g.with_null(i)
            xi = z @ _null_root(fld, i).T
            res = conditional_tests(gi, fld, stats, alpha, n_draws, epsilon=epsilon, xi_star=xi)
            out[a] = [res[name].reject for name in stats]
        return out
    except (np.linalg.LinAlgError, ValueError, FloatingPointError, RuntimeError) as exc:
        return f"{type(exc).__name__}: {exc}"


def _run(scenario, stats, alpha, n_draws, seed, n_reps, null_indices, n_jobs, epsilon):
    reps = range(int(n_reps))
    if n_jobs == 1:
        results = [_replicate(scenario, stats, alpha, n_draws, seed, r, null_indices, epsilon) for r in reps]
    else:
        results = Parallel(n_jobs=n_jobs, batch_size="auto")(
            delayed(_replicate)(scenario, stats, alpha, n_draws, seed, r, null_indices, epsilon) for r in reps
        )
    counts = np.zeros((len(null_indices), len(stats)), dtype=np.int64)
    failed = []
    for r, res in enumerate(results):
        if isinstance(res, str):
            log.warning("replication %d failed: %s", r, res)
            failed.append((r, res))
        else:
            counts += res
    return counts, failed


def size_experiment(
    scenario,
    statistic="qlr",
    alpha: float = 0.05,
    n_reps: int = 2000,
    n_draws: int = 1000,
    seed: int = 0,
    n_jobs: int = 1,
    epsilon: float = 0.0,
    **stat_options,
) -> list[ExperimentRow]:
    """Rejection frequency of the true null, one row per statistic.

    All statistics share the data replications and the xi* draws. Failed
    replications are logged with their index and excluded from the rate;
    ``n_failed`` reports how many.
    """
    stats = _resolve_stats(statistic, {**getattr(scenario, "stat_options", {}), **stat_options})
    i0 = scenario.grid.null_index
    counts, failed = _run(scenario, stats, alpha, n_draws, seed, n_reps, [i0], n_jobs, epsilon)
    n_ok = int(n_reps) - len(failed)
    rows = []
    for j, name in enumerate(stats):
        rate, se = _rate(int(counts[0, j]), n_ok)
        rows.append(ExperimentRow(name, scenario.params(), float(scenario.grid.null_point[0]), int(n_reps), len(failed), rate, se))
    return rows


def power_curve(
    scenario,
    statistics=("s", "k", "jk", "qlr"),
    alpha: float = 0.05,
    theta_alternatives=None,
    n_reps: int = 1000,
    n_draws: int = 1000,
    seed: int = 0,
    n_jobs: int = 1,
    epsilon: float = 0.0,
    **stat_options,
) -> list[ExperimentRow]:
    """Rejection rates of H0: theta = theta_a for each alternative theta_a.

    Data are generated at the scenario's true parameter; each alternative
    must be a grid point. Data, xi* standard normals and statistics are
    shared across alternatives and statistics.
    """
    stats = _resolve_stats(statistics, {**getattr(scenario, "stat_options", {}), **stat_options})
    grid = scenario.grid
    if theta_alternatives is None:
        theta_alternatives = grid.points[:, 0]
    idx = [grid.index_of(np.atleast_1d(t), atol=1e-9) for t in np.atleast_1d(theta_alternatives)]
    counts, failed = _run(scenario, stats, alpha, n_draws, seed, n_reps, idx, n_jobs, epsilon)
    n_ok = int(n_reps) - len(failed)
    rows = []
    for a, i in enumerate(idx):
        for j, name in enumerate(stats):
            rate, se = _rate(int(counts[a, j]), n_ok)
            rows.append(ExperimentRow(name, scenario.params(), float(grid.points[i, 0]), int(n_reps), len(failed), rate, se))
    return rows


def _strong_id_rep(design, alpha, n_draws, seed, rep):
    rng = np.random.default_rng([seed, rep])
    lim = design.limit
    g = gen_limit_draw(lim, rng)
    h = compute_h(g, lim.field)
    ev = QLR().prepare(h, lim.field)
    xi = rng.standard_normal((int(n_draws), g.k)) @ _null_root(lim.field, g.grid.null_index).T
    draws = np.sort(ev(xi))
    return float(ev(g.at_null[None, :])[0]), float(draws[quantile_rank(alpha, draws.size)])


def strong_id_experiment(
    design: StrongIdDesign,
    n_reps: int = 2000,
    n_draws: int = 1000,
    seed: int = 0,
    alpha: float = 0.05,
    n_jobs: int = 1,
) -> dict:
    """QLR distribution and conditional critical values under strong identification.

    Returns the QLR draws and critical values, the Kolmogorov-Smirnov
    distance of QLR to chi2_q with its 1% critical value, and summary
    statistics of the critical values against the chi2_q quantile.
    """
    design.limit.root  # factor once before any fan-out
    reps = range(int(n_reps))
    if n_jobs == 1:
        res = [_strong_id_rep(design, alpha, n_draws, seed, r) for r in reps]
    else:
        res = Parallel(n_jobs=n_jobs)(delayed(_strong_id_rep)(design, alpha, n_draws, seed, r) for r in reps)
    qlr_vals = np.array([r[0] for r in res])
    cvs = np.array([r[1] for r in res])
    q = design.q
    ks = scipy.stats.kstest(qlr_vals, scipy.stats.chi2(q).cdf)
    target = float(scipy.stats.chi2.ppf(1 - alpha, q))
    return {
        "q": q,
        "qlr": qlr_vals,
        "critical_values": cvs,
        "ks_distance": float(ks.statistic),
        "ks_critical_1pct": float(scipy.stats.kstwo.ppf(0.99, qlr_vals.size)),
        "cv_mean": float(cvs.mean()),
        "cv_sd": float(cvs.std(ddof=1)),
        "chi2_quantile": target,
        "share_cv_off": float(np.mean(np.abs(cvs - target) > 0.15)),
    }


def h_independence(design: LimitDesign, n_draws: int = 10_000, seed: int = 0) -> np.ndarray:
    """Sample correlations between g(theta_0) and h(theta_i) coordinates, shape (G, k, k)."""
    rng = np.random.default_rng(seed)
    gs = gen_limit_draw(design, rng, size=n_draws)
    i0 = design.grid.null_index
    H = np.stack([compute_h(g, design.field).values for g in gs])  # (n, G, k)
    g0 = np.stack([g.at_null for g in gs])  # (n, k)
    Hc = H - H.mean(axis=0)
    gc = g0 - g0.mean(axis=0)
    num = np.einsum("ngk,nl->gkl", Hc, gc) / n_draws
    sd_h = Hc.std(axis=0)
    sd_g = gc.std(axis=0)
    with np.errstate(invalid="ignore", divide="ignore"):
        corr = num / (sd_h[:, :, None] * sd_g[None, None, :])
    corr[i0] = 0.0  # h(theta_0) is identically zero
    return np.nan_to_num(corr)


def _euler_rep(design, grid, statistics, alpha, n_draws, seed, rep, hac_lags):
    rng = np.random.default_rng([seed, rep])
    try:
        data = gen_euler_data(design, rng)
        truth = [design.delta, design.gamma]
        out = {}
        for s in statistics:
            cs = euler_confset(data, grid, alpha, n_draws, s, hac_lags, rng=np.random.default_rng([seed, rep, 1]))
            out[s] = (cs.contains(truth, atol=1e-9), cs.fraction)
        return out
    except (np.linalg.LinAlgError, ValueError, FloatingPointError) as exc:
        return f"{type(exc).__name__}: {exc}"


def euler_experiment(
    design: EulerSimDesign,
    grid: ParamGrid,
    statistics=("s", "qlr"),
    alpha: float = 0.10,
    n_reps: int = 500,
    n_draws: int = 1000,
    seed: int = 0,
    hac_lags: int = 1,
    n_jobs: int = 1,
) -> dict:
    """Coverage of the truth and set areas over synthetic Euler samples.

    Returns per-statistic ``coverage`` and ``area`` arrays (one entry per
    successful replication) and the list of failed replication indices.
    """
    reps = range(int(n_reps))
    args = (design, grid, tuple(statistics), alpha, n_draws, seed)
    if n_jobs == 1:
        res = [_euler_rep(*args, r, hac_lags) for r in reps]
    else:
        res = Parallel(n_jobs=n_jobs)(delayed(_euler_rep)(*args, r, hac_lags) for r in reps)
    failed = []
    cover = {s: [] for s in statistics}
    area = {s: [] for s in statistics}
    for r, out in enumerate(res):
        if isinstance(out, str):
            log.warning("replication %d failed: %s", r, out)
            failed.append(r)
            continue
        for s in statistics:
            cover[s].append(out[s][0])
            area[s].append(out[s][1])
    return {
        "coverage": {s: np.array(v, dtype=bool) for s, v in cover.items()},
        "area": {s: np.array(v) for s, v in area.items()},
        "failed": failed,
    }


def write_rows(rows: Sequence[ExperimentRow], path, header_lines: Sequence[str] = ()) -> None:
    """Long-format CSV: statistic, design parameters, theta, n_reps, n_failed, rate, se."""
    keys = sorted({k for r in rows for k in r.params})
    with open(path, "w", newline="") as fh:
        for line in header_lines:
            fh.write(f"# {line}\n")
        w = csv.writer(fh)
        w.writerow(["statistic", *keys, "theta", "n_reps", "n_failed", "rate", "se"])
        for r in rows:
            w.writerow([r.statistic, *(r.params.get(k, "") for k in keys), repr(r.theta), r.n_reps, r.n_failed,
                        repr(r.rate), repr(r.se)])
