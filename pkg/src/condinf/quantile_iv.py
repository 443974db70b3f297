"""Instrumental-variables quantile regression with a profiled intercept block.

The model is ``P(Y_t <= C_t' beta + D_t' theta | Z_t) = tau``. For each
candidate ``theta`` the controls' coefficients are profiled out by linear
quantile regression of ``Y - D theta`` on ``C``; the remaining moments

    g(theta) = T^{-1/2} sum_t (tau - 1{eps_t <= 0}) Z_t,
    eps_t = Y_t - D_t' theta - C_t' beta_hat(theta)

are then used for weak-identification robust inference on ``theta``.

Examples
--------
>>> import numpy as np
>>> from condinf.quantile_iv import QuantileIVData, fit_beta
>>> y = np.array([3.0, 1.0, 2.0, 5.0, 4.0])
>>> data = QuantileIVData(y, np.zeros((5, 1)), np.ones((5, 1)), np.ones((5, 1)), tau=0.5)
>>> fit_beta(data, [0.0])
array([3.])
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
import scipy.optimize
import scipy.sparse
from scipy.stats import norm

from .concentrate import ProfilePath
from .condcrit import conditional_tests, invert_test
from .core import RIDGE_TRIGGER, CovarianceField, MomentProcess, ParamGrid
from .covest import MomentPanel
from .stats import get_statistic

__all__ = [
    "QIV_K_STEP",
    "QuantileIVData",
    "KernelSpec",
    "QuantileFitError",
    "check_loss",
    "qr_objective",
    "fit_beta",
    "profile",
    "concentrated_g",
    "kernel_jacobians",
    "default_bandwidth",
    "qiv_covariance",
    "qiv_long_panel",
    "qiv_pipeline",
    "read_qiv_csv",
]


#: default half-width of the K / JK finite-difference stencil. The moment
#: process is a step function in theta, so the stencil must span many jumps.
QIV_K_STEP = 0.1


def _as_matrix(a, T, name):
    a = np.asarray(a, dtype=float)
    if a.ndim == 1:
        a = a[:, None]
    if a.ndim != 2 or a.shape[0] != T:
        raise ValueError(f"{name} must have {T} rows, got shape {a.shape}")
    return a


@dataclass(frozen=True, eq=False)
class QuantileIVData:
    """Outcome Y (T,), endogenous D (T, q), controls C (T, p), instruments Z (T, k)."""

    Y: np.ndarray
    D: np.ndarray
    C: np.ndarray
    Z: np.ndarray
    tau: float = 0.5

    def __post_init__(self):
        Y = np.asarray(self.Y, dtype=float).ravel()
        T = Y.size
        D, C, Z = (_as_matrix(getattr(self, n), T, n) for n in ("D", "C", "Z"))
        if not 0.0 < self.tau < 1.0:
            raise ValueError(f"tau must lie in (0, 1), got {self.tau}")
        for name, a in (("Y", Y), ("D", D), ("C", C), ("Z", Z)):
            if not np.all(np.isfinite(a)):
                raise ValueError(f"{name} contains non-finite values")
        CZ = np.hstack([C, Z])
        if T < CZ.shape[1] or np.linalg.matrix_rank(CZ) < CZ.shape[1]:
            raise ValueError("stacked (C, Z) matrix is rank deficient")
        for n, a in (("Y", Y), ("D", D), ("C", C), ("Z", Z)):
            a.flags.writeable = False
            object.__setattr__(self, n, a)

    @property
    def T(self) -> int:
        return self.Y.size

    @property
    def q(self) -> int:
        return self.D.shape[1]

    @property
    def p(self) -> int:
        return self.C.shape[1]

    @property
    def k(self) -> int:
        return self.Z.shape[1]

    def residuals(self, theta, beta) -> np.ndarray:
        return self.Y - self.D @ np.asarray(theta, float).reshape(-1) - self.C @ np.asarray(beta, float).reshape(-1)


class QuantileFitError(RuntimeError):
    """Quantile regression failed; ``best`` holds the best iterate found (or None)."""

    def __init__(self, message, best=None):
        super().__init__(message)
        self.best = best


def check_loss(u, tau: float) -> np.ndarray:
    """rho_tau(u) = u (tau - 1{u < 0})."""
    u = np.asarray(u, dtype=float)
    return u * (tau - (u < 0))


def qr_objective(data: QuantileIVData, theta, beta) -> float:
    """(1/T) sum_t rho_tau(Y_t - D_t' theta - C_t' beta)."""
    return float(check_loss(data.residuals(theta, beta), data.tau).mean())


def _constant_control(C) -> float | None:
    """The common value when C is a single nonzero constant column."""
    if C.shape[1] == 1 and C[0, 0] != 0.0 and np.all(C[:, 0] == C[0, 0]):
        return float(C[0, 0])
    return None


def _order_index(tau, T):
    # the ceil(tau T)-th order statistic minimizes the check loss
    return min(max(math.ceil(tau * T - 1e-12), 1), T) - 1


def _quantile_fit_constant(r, c, tau):
    """Minimizer of sum rho_tau(r - c b) for scalar c != 0 (r may be (T,) or (T, G)).

    With u = c b the loss is minimized by the tau-quantile of r.
    """
    idx = _order_index(tau, r.shape[0])
    return np.partition(r, idx, axis=0)[idx] / c


def _lp_fit(C, r, tau):
    T, p = C.shape
    cost = np.concatenate([np.zeros(p), np.full(T, tau), np.full(T, 1.0 - tau)])
    eye = scipy.sparse.identity(T, format="csr")
    A = scipy.sparse.hstack([scipy.sparse.csr_matrix(C), eye, -eye], format="csr")
    bounds = [(None, None)] * p + [(0, None)] * (2 * T)
    res = scipy.optimize.linprog(cost, A_eq=A, b_eq=r, bounds=bounds, method="highs-ds")
    if res.x is None:
        raise QuantileFitError(f"quantile regression LP failed: {res.message}")
    return res.x[:p], res


def _vertex_polish(C, r, tau, beta):
    """Compare beta with the exact-interpolation vertices suggested by its smallest residuals."""
    p = C.shape[1]
    best, best_obj = beta, check_loss(r - C @ beta, tau).sum()
    order = np.argsort(np.abs(r - C @ beta))
    for start in range(min(3, max(r.size - p + 1, 1))):
        rows = order[start:start + p]
        if rows.size < p:
            break
        sub = C[rows]
        if np.linalg.matrix_rank(sub) < p:
            continue
        cand = np.linalg.solve(sub, r[rows])
        obj = check_loss(r - C @ cand, tau).sum()
        if obj < best_obj:
            best, best_obj = cand, obj
    return best


def fit_beta(data: QuantileIVData, theta) -> np.ndarray:
    """Linear quantile regression of ``Y - D theta`` on ``C``.

    A single constant control is solved exactly by an order statistic.
    Otherwise the check-loss linear program is solved by the HiGHS dual
    simplex (which returns a vertex), followed by a vertex polish that
    re-solves the interpolation system on the smallest residuals.

    Raises
    ------
    QuantileFitError
        If the solver does not reach optimality; ``exc.best`` carries the
        best available iterate.
    """
    theta = np.asarray(theta, dtype=float).reshape(-1)
    if theta.size != data.q:
        raise ValueError(f"theta must have length {data.q}, got {theta.size}")
    r = data.Y - data.D @ theta
    c = _constant_control(data.C)
    if c is not None:
        return np.array([_quantile_fit_constant(r, c, data.tau)])
    beta, res = _lp_fit(data.C, r, data.tau)
    if res.status != 0:
        raise QuantileFitError(f"quantile regression did not converge: {res.message}", best=beta)
    return _vertex_polish(data.C, r, data.tau, beta)


@dataclass(frozen=True)
class KernelSpec:
    """Smoothing kernel and bandwidth for the Jacobian estimators.

    ``bandwidth=None`` requests :func:`default_bandwidth` at each grid point.
    """

    kernel: Callable[[np.ndarray], np.ndarray]
    bandwidth: float | None = None
    name: str = "custom"

    def __post_init__(self):
        if self.bandwidth is not None and not self.bandwidth > 0:
            raise ValueError(f"bandwidth must be positive, got {self.bandwidth}")

    @classmethod
    def gaussian(cls, bandwidth=None) -> "KernelSpec":
        return cls(norm.pdf, bandwidth, "gaussian")

    @classmethod
    def uniform(cls, bandwidth=None) -> "KernelSpec":
        """Uniform density on [-1/2, 1/2]."""
        return cls(lambda v: (np.abs(v) <= 0.5).astype(float), bandwidth, "uniform")

    @classmethod
    def from_name(cls, name: str, bandwidth=None) -> "KernelSpec":
        try:
            return {"gaussian": cls.gaussian, "uniform": cls.uniform}[name.lower()](bandwidth)
        except KeyError:
            raise ValueError(f"unknown kernel {name!r}; choose gaussian or uniform") from None


def default_bandwidth(residuals) -> np.ndarray:
    """1.06 sd(eps) T^{-1/5}, columnwise for a (T, G) array."""
    e = np.asarray(residuals, dtype=float)
    T = e.shape[0]
    sd = e.std(axis=0, ddof=1) if T > 1 else np.ones(e.shape[1:])
    h = 1.06 * sd * T ** (-0.2)
    return np.where(h > 0, h, 1.0)


def _residual_matrix(data, path):
    """(T, G) residuals eps_t(theta_i) at the profiled betas."""
    return data.Y[:, None] - data.D @ path.grid.points.T - data.C @ path.betas.T


def _jacobians_from_residuals(data, eps, spec):
    bw = default_bandwidth(eps) if spec.bandwidth is None else np.full(eps.shape[1], spec.bandwidth)
    w = spec.kernel(eps / bw) / bw  # (T, G)
    T = data.T
    M = np.einsum("tg,tk,tp->gkp", w, data.Z, data.C, optimize=True) / T
    J = np.einsum("tg,tp,tr->gpr", w, data.C, data.C, optimize=True) / T
    return M, J


def kernel_jacobians(data: QuantileIVData, theta, beta, spec: KernelSpec | None = None):
    """Kernel estimates (M_hat (k, p), J_hat (p, p)) at one parameter value.

    ``M_hat = (1/(T h)) sum_t Z_t C_t' k(eps_t / h)`` and ``J_hat`` the same
    with ``C_t C_t'``.
    """
    spec = KernelSpec.gaussian() if spec is None else spec
    eps = data.residuals(theta, beta)[:, None]
    M, J = _jacobians_from_residuals(data, eps, spec)
    return M[0], J[0]


def profile(data: QuantileIVData, grid: ParamGrid, spec: KernelSpec | None = None, bounds=None) -> ProfilePath:
    """Profile path: beta_hat(theta_i) and the long-mean Jacobian -M_hat(theta_i).

    The long moment's mean has beta-derivative ``-E[f(0|.) Z C']``, which
    the kernel estimator M_hat estimates up to sign.
    """
    spec = KernelSpec.gaussian() if spec is None else spec
    pts = grid.points
    if pts.shape[1] != data.q:
        raise ValueError(f"grid dimension {pts.shape[1]} does not match D columns {data.q}")
    c = _constant_control(data.C)
    if c is not None:
        R = data.Y[:, None] - data.D @ pts.T
        betas = _quantile_fit_constant(R, c, data.tau)[:, None]
    else:
        betas = np.stack([fit_beta(data, t) for t in pts])
    tmp = ProfilePath(grid, betas, np.zeros((grid.size, data.k, data.p)))
    M, _ = _jacobians_from_residuals(data, _residual_matrix(data, tmp), spec)
    return ProfilePath(grid, betas, -M, bounds)


def concentrated_g(data: QuantileIVData, path: ProfilePath) -> MomentProcess:
    """g(theta_i) = T^{-1/2} sum_t (tau - 1{eps_t(theta_i) <= 0}) Z_t."""
    eps = _residual_matrix(data, path)
    s = data.tau - (eps <= 0)
    return MomentProcess(path.grid, s.T @ data.Z / np.sqrt(data.T), data.T)


def _a_hats(data, path, spec):
    eps = _residual_matrix(data, path)
    M, J = _jacobians_from_residuals(data, eps, spec)
    lam = np.linalg.eigvalsh(J)
    scale = np.maximum(lam[:, -1], np.finfo(float).tiny)
    bad = np.flatnonzero(lam[:, 0] <= RIDGE_TRIGGER * scale)
    if bad.size:
        raise np.linalg.LinAlgError(f"J_hat is singular at grid point {int(bad[0])}")
    A = np.linalg.solve(J, np.swapaxes(M, 1, 2))  # J^{-1} M'  -> (G, p, k)
    return eps, np.swapaxes(A, 1, 2), J  # A_hat = M J^{-1}, (G, k, p)


def qiv_covariance(data: QuantileIVData, path: ProfilePath, specs: KernelSpec | None = None, lambda_bar: float = 1e6) -> CovarianceField:
    """Plug-in covariance field of the concentrated moments.

    ``block(i, j) = (1/T) sum_t s_t(i) s_t(j) (Z_t - A_i C_t)(Z_t - A_j C_t)'`` with
    ``s_t(i) = tau - 1{eps_t(theta_i) < 0}`` and ``A_i = M_hat(theta_i) J_hat(theta_i)^{-1}``.
    """
    spec = KernelSpec.gaussian() if specs is None else specs
    eps, A, _ = _a_hats(data, path, spec)
    s = data.tau - (eps < 0)  # (T, G)
    W = data.Z[:, None, :] - np.einsum("gkp,tp->tgk", A, data.C, optimize=True)
    X = (s[:, :, None] * W).reshape(data.T, -1)
    return CovarianceField(path.grid, X.T @ X / data.T, data.k, lambda_bar)


def qiv_long_panel(data: QuantileIVData, path: ProfilePath, spec: KernelSpec | None = None) -> MomentPanel:
    """Stacked (k + p) contributions: long moments and sqrt(T)-scaled beta_hat influence.

    The influence of the quantile regression estimator is
    ``J_hat^{-1} (tau - 1{eps_t < 0}) C_t``. Its covariance, passed through the
    concentration sandwich with ``-M_hat``, reproduces :func:`qiv_covariance`.
    """
    spec = KernelSpec.gaussian() if spec is None else spec
    eps, _, J = _a_hats(data, path, spec)
    s = data.tau - (eps < 0)
    infl = np.einsum("gpr,tr->tgp", np.linalg.inv(J), data.C, optimize=True)
    vals = np.concatenate([s[:, :, None] * data.Z[:, None, :], s[:, :, None] * infl], axis=2)
    return MomentPanel(path.grid, vals)


def qiv_pipeline(
    data: QuantileIVData,
    grid: ParamGrid,
    alpha: float = 0.05,
    n_draws: int = 1000,
    statistic="qlr",
    rng=None,
    mode: str = "test",
    spec: KernelSpec | None = None,
    epsilon: float = 0.0,
    **stat_options,
):
    """End-to-end conditional inference on theta.

    ``statistic`` is a name (``"qlr"``, ``"s"``, ``"k"``, ``"jk"``), a
    statistic object, or, in test mode, a sequence of names; in the latter
    case all tests share the same xi* draws and a dict is returned. In
    ``"confset"`` mode every grid point is tested and a
    :class:`~condinf.core.ConfidenceSet` is returned.
    """
    stat_options.setdefault("step", QIV_K_STEP)
    path = profile(data, grid, spec)
    g = concentrated_g(data, path)
    field = qiv_covariance(data, path, spec)
    if mode == "test":
        single = isinstance(statistic, str) or not isinstance(statistic, Sequence)
        items = [statistic] if single else list(statistic)
        stats = {}
        for item in items:
            obj = get_statistic(item, **stat_options) if isinstance(item, str) else item
            stats[item if isinstance(item, str) else obj.name] = obj
        out = conditional_tests(g, field, stats, alpha, n_draws, rng, epsilon)
        return next(iter(out.values())) if single else out
    if mode == "confset":
        stat = get_statistic(statistic, **stat_options) if isinstance(statistic, str) else statistic
        return invert_test(g, field, stat, alpha, n_draws, rng, grid=grid, epsilon=epsilon)
    raise ValueError(f"mode must be 'test' or 'confset', got {mode!r}")


def read_qiv_csv(path, tau: float = 0.5) -> QuantileIVData:
    """Read columns ``y, d1.., c1.., z1..`` (lines starting with '#' are skipped)."""
    with open(path, newline="") as fh:
        rows = [r for r in csv.reader(line for line in fh if not line.startswith("#")) if r]
    if len(rows) < 2:
        raise ValueError(f"{path}: no data rows")
    header = [h.strip().lower() for h in rows[0]]
    try:
        body = np.array(rows[1:], dtype=float)
    except ValueError as exc:
        raise ValueError(f"{path}: malformed numeric value ({exc})") from None
    if body.shape[1] != len(header):
        raise ValueError(f"{path}: rows do not match header width")

    def cols(prefix):
        idx = sorted((int(h[len(prefix):]), i) for i, h in enumerate(header) if h.startswith(prefix) and h[len(prefix):].isdigit())
        return body[:, [i for _, i in idx]]

    if "y" not in header:
        raise ValueError(f"{path}: missing column 'y'")
    D, C, Z = cols("d"), cols("c"), cols("z")
    for name, a in (("d", D), ("c", C), ("z", Z)):
        if a.shape[1] == 0:
            raise ValueError(f"{path}: no '{name}1..' columns")
    return QuantileIVData(body[:, header.index("y")], D, C, Z, tau)
