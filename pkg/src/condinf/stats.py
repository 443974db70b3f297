"""Test statistics in the (xi, h, Sigma) form consumed by the conditional engine.

Each statistic is evaluated on a candidate value ``xi`` of g(theta_0),
holding the conditioning process ``h`` and the covariance field fixed; the
implied full path is ``g(theta_i) = h(theta_i) + V(theta_i) xi``.

Statistics expose ``prepare(h, field)``, which does the per-(h, field)
linear algebra once and returns a vectorized evaluator over a ``(B, k)``
array of draws. Calling the statistic directly evaluates a single ``xi``.

K and JK are reconstructions: the score matrix is minus the finite
difference derivative of h at theta_0 on a grid stencil, and the J part of
JK is calibrated against chi-square(k - q).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.stats

from .core import CovarianceField, HProcess, ParamGrid, TestResult, _ridge

__all__ = [
    "Statistic",
    "QLR",
    "WeightedQLR",
    "SStatistic",
    "KStatistic",
    "ConstantStatistic",
    "WeightField",
    "ScoreMatrix",
    "qlr",
    "qlr_weighted",
    "s_stat",
    "score_matrix",
    "k_stat",
    "jk_test",
    "jk_result",
    "JKStatistic",
    "get_statistic",
    "STATISTIC_NAMES",
]

# cap on the (G*k, B) working array in a single evaluation chunk
_CHUNK_ELEMENTS = 4_000_000


class Evaluator:
    """Vectorized statistic over draws; ``flags`` carries degeneracy notes."""

    def __init__(self, fn, flags=()):
        self._fn = fn
        self.flags = tuple(flags)

    def __call__(self, xis) -> np.ndarray:
        xis = np.atleast_2d(np.asarray(xis, dtype=float))
        return self._fn(xis)


def _inv_chol_stack(blocks, what="diagonal block"):
    """Inverse lower Cholesky factors of a (G, k, k) stack of SPD blocks."""
    try:
        L = np.linalg.cholesky(blocks)
    except np.linalg.LinAlgError:
        L = np.empty_like(blocks)
        for i, b in enumerate(blocks):
            b, _ = _ridge(0.5 * (b + b.T))
            try:
                L[i] = np.linalg.cholesky(b)
            except np.linalg.LinAlgError as exc:
                raise np.linalg.LinAlgError(f"{what} {i} is singular") from exc
    eye = np.broadcast_to(np.eye(blocks.shape[-1]), blocks.shape)
    return np.linalg.solve(L, eye)


def _quad_terms(a, Bm, xis):
    """Rows ||a_i + Bm_i xi_b||^2 as a (G, B) array."""
    G, k = a.shape
    stacked = Bm.reshape(G * k, -1)
    chunk = max(1, _CHUNK_ELEMENTS // (G * k))
    out = np.empty((G, xis.shape[0]))
    for s in range(0, xis.shape[0], chunk):
        z = stacked @ xis[s:s + chunk].T
        z += a.reshape(-1, 1)
        z = z.reshape(G, k, -1)
        out[:, s:s + chunk] = np.einsum("gkb,gkb->gb", z, z)
    return out


class Statistic:
    """Base class; subclasses implement :meth:`prepare`."""

    name = "statistic"
    #: True when the statistic never exceeds the S statistic for the same xi
    bounded_by_s = False

    def prepare(self, h: HProcess, field: CovarianceField) -> Evaluator:
        raise NotImplementedError

    def __call__(self, xi, h: HProcess, field: CovarianceField) -> float:
        return float(self.prepare(h, field)(np.asarray(xi, dtype=float)[None, :])[0])

    def __repr__(self):
        return f"{type(self).__name__}()"


class SStatistic(Statistic):
    """Stock-Wright S (Anderson-Rubin type): xi' Sigma(theta_0, theta_0)^{-1} xi."""

    name = "s"

    def prepare(self, h, field):
        i0 = h.grid.null_index
        Li = _inv_chol_stack(field.block(i0, i0)[None], "null block")[0]

        def fn(xis):
            z = xis @ Li.T
            return np.einsum("bk,bk->b", z, z)

        return Evaluator(fn)


class QLR(Statistic):
    """Quasi-likelihood ratio: S minus the grid minimum of g' Sigma(theta,theta)^{-1} g.

    The minimum runs over every grid point including theta_0, so the value
    is always in ``[0, S]``.
    """

    name = "qlr"
    bounded_by_s = True

    def _parts(self, h, field):
        Linv = _inv_chol_stack(field.diag_blocks())
        a = np.einsum("gij,gj->gi", Linv, h.values)
        Bm = Linv @ h.v_coeffs
        return a, Bm

    def prepare(self, h, field):
        a, Bm = self._parts(h, field)
        i0 = h.grid.null_index

        def fn(xis):
            terms = _quad_terms(a, Bm, xis)
            return terms[i0] - terms.min(axis=0)

        return Evaluator(fn)

    def prepare_bound(self, h, field):
        """Cheap upper bound (the theta_0 term) used to skip hopeless simulations."""
        i0 = h.grid.null_index
        Li = _inv_chol_stack(field.block(i0, i0)[None], "null block")[0]

        def fn(xis):
            z = xis @ Li.T
            return np.einsum("bk,bk->b", z, z)

        return Evaluator(fn)


@dataclass(frozen=True, eq=False)
class WeightField:
    """Per-grid-point SPD weighting matrices W(theta_i), shape (G, k, k)."""

    grid: ParamGrid
    weights: np.ndarray

    def __post_init__(self):
        w = np.array(self.weights, dtype=float)
        if w.ndim != 3 or w.shape[0] != self.grid.size or w.shape[1] != w.shape[2]:
            raise ValueError(f"weights must have shape (G, k, k), got {w.shape}")
        if np.max(np.abs(w - w.transpose(0, 2, 1))) > 1e-10 * max(1.0, np.abs(w).max()):
            raise ValueError("weights must be symmetric")
        if np.linalg.eigvalsh(w).min() <= 0:
            raise ValueError("weights must be positive definite")
        w = 0.5 * (w + w.transpose(0, 2, 1))
        w.flags.writeable = False
        object.__setattr__(self, "weights", w)

    @classmethod
    def inverse_of(cls, field: CovarianceField) -> "WeightField":
        return cls(field.grid, np.linalg.inv(field.diag_blocks()))


class WeightedQLR(Statistic):
    """QLR-type statistic with a user weighting W(theta) in place of Sigma(theta,theta)^{-1}."""

    name = "qlr-weighted"
    bounded_by_s = False

    def __init__(self, weights: WeightField):
        self.weights = weights

    def prepare(self, h, field):
        if self.weights.grid.size != h.grid.size:
            raise ValueError("weight field and h-process grids differ")
        R = np.linalg.cholesky(self.weights.weights)  # W = R R'
        Rt = R.transpose(0, 2, 1)
        a = np.einsum("gij,gj->gi", Rt, h.values)
        Bm = Rt @ h.v_coeffs
        i0 = h.grid.null_index

        def fn(xis):
            terms = _quad_terms(a, Bm, xis)
            return terms[i0] - terms.min(axis=0)

        return Evaluator(fn)

    def __repr__(self):
        return "WeightedQLR(weights=...)"


@dataclass(frozen=True)
class ScoreMatrix:
    """D = -(dh/dtheta)(theta_0), shape (k, q)."""

    D: np.ndarray
    one_sided: tuple = ()


def _stencil(grid: ParamGrid, j: int, step, tol=1e-9):
    """Neighbours of theta_0 along coordinate j: (plus_idx, dplus, minus_idx, dminus)."""
    pts = grid.points
    t0 = grid.null_point
    others = np.delete(np.arange(grid.q), j)
    scale = max(1.0, float(np.abs(pts).max()))
    on_axis = np.all(np.abs(pts[:, others] - t0[others]) <= tol * scale, axis=1)
    diff = pts[:, j] - t0[j]
    found = []
    for sign in (1.0, -1.0):
        cand = np.flatnonzero(on_axis & (sign * diff > tol * scale))
        if step is not None:
            exact = cand[np.abs(sign * diff[cand] - step) <= tol * scale * max(1.0, step)]
            # off the preferred spacing (coarse region) use the nearest neighbour
            cand = exact if exact.size else cand
        if cand.size:
            best = cand[np.argmin(np.abs(diff[cand]))]
            found.append((int(best), float(abs(diff[best]))))
        else:
            found.append((None, None))
    return found[0][0], found[0][1], found[1][0], found[1][1]


def score_matrix(h: HProcess, grid: ParamGrid | None = None, step=None) -> ScoreMatrix:
    """Minus the finite-difference derivative of h at theta_0.

    Parameters
    ----------
    h : HProcess
    grid : ParamGrid, optional
        Defaults to ``h.grid``.
    step : float or sequence of float, optional
        Preferred stencil half-width per coordinate, used where a grid point
        lies exactly that far from theta_0. Otherwise, and by default, the
        nearest grid neighbour on each side along the coordinate axis is used.
        With neighbours on both sides the difference is centred; with only
        one it is one-sided.
    """
    grid = h.grid if grid is None else grid
    q = grid.q
    steps = [None] * q if step is None else list(np.broadcast_to(np.asarray(step, dtype=float), (q,)))
    D = np.empty((h.k, q))
    one_sided = []
    hv = h.values
    i0 = grid.null_index
    for j in range(q):
        ip, dp, im, dm = _stencil(grid, j, steps[j])
        if ip is not None and im is not None:
            D[:, j] = -(hv[ip] - hv[im]) / (dp + dm)
        elif ip is not None:
            D[:, j] = -(hv[ip] - hv[i0]) / dp
            one_sided.append(j)
        elif im is not None:
            D[:, j] = -(hv[i0] - hv[im]) / dm
            one_sided.append(j)
        else:
            raise ValueError(f"no finite-difference stencil for coordinate {j} around theta_0")
    return ScoreMatrix(D, tuple(one_sided))


def _projector_basis(Dw, rtol=1e-10):
    """Orthonormal basis of range(Dw), or None when Dw lacks full column rank."""
    if Dw.shape[1] > Dw.shape[0]:
        return None
    U, s, _ = np.linalg.svd(Dw, full_matrices=False)
    if s.size == 0 or s[0] == 0.0 or s[-1] <= rtol * s[0]:
        return None
    return U


class KStatistic(Statistic):
    """Kleibergen-type score statistic projected on the whitened score matrix.

    ``K = xi' S^-1 D (D' S^-1 D)^-1 D' S^-1 xi`` with ``S = Sigma(theta_0, theta_0)``
    and ``D = -(dh/dtheta)(theta_0)``. When D is rank deficient the
    statistic falls back to S and flags ``"rank-deficient-D"``.
    """

    name = "k"
    bounded_by_s = True

    def __init__(self, step=None):
        self.step = step

    def prepare(self, h, field, d: ScoreMatrix | None = None):
        d = score_matrix(h, step=self.step) if d is None else d
        i0 = h.grid.null_index
        Li = _inv_chol_stack(field.block(i0, i0)[None], "null block")[0]
        U = _projector_basis(Li @ d.D)
        if U is None:
            def fn(xis):
                z = xis @ Li.T
                return np.einsum("bk,bk->b", z, z)

            return Evaluator(fn, ("rank-deficient-D",))
        P = U.T @ Li  # (q, k)

        def fn(xis):
            z = xis @ P.T
            return np.einsum("bq,bq->b", z, z)

        return Evaluator(fn)

    prepare_bound = QLR.prepare_bound

    def __repr__(self):
        return f"KStatistic(step={self.step!r})"


class ConstantStatistic(Statistic):
    """Degenerate statistic returning a fixed value (for diagnostics)."""

    name = "constant"

    def __init__(self, value: float = 0.0):
        self.value = float(value)

    def prepare(self, h, field):
        return Evaluator(lambda xis: np.full(xis.shape[0], self.value))

    def __repr__(self):
        return f"ConstantStatistic({self.value!r})"


def qlr(xi, h: HProcess, field: CovarianceField) -> float:
    return QLR()(xi, h, field)


def qlr_weighted(xi, h: HProcess, field: CovarianceField, w: WeightField) -> float:
    return WeightedQLR(w)(xi, h, field)


def s_stat(xi, h: HProcess, field: CovarianceField) -> float:
    return SStatistic()(xi, h, field)


def k_stat(xi, h: HProcess, field: CovarianceField, d: ScoreMatrix | None = None) -> float:
    ev = KStatistic().prepare(h, field, d)
    return float(ev(np.asarray(xi, dtype=float)[None, :])[0])


def jk_result(xi, h, field, d: ScoreMatrix | None = None, alpha_k=0.04, alpha_j=0.01) -> TestResult:
    """K/J split test with chi-square critical values.

    Rejects when ``K > chi2_q(1 - alpha_k)`` or ``J = S - K > chi2_{k-q}(1 - alpha_j)``.
    The reported statistic is ``max(K / c_K, J / c_J)`` against critical
    value 1, and the p-value is the Bonferroni combination
    ``min(1, p_K * alpha / alpha_k, p_J * alpha / alpha_j)``.
    """
    if not (0 < alpha_k < 1 and 0 <= alpha_j < 1 and alpha_k + alpha_j < 1):
        raise ValueError("need 0 < alpha_k, 0 <= alpha_j and alpha_k + alpha_j < 1")
    xi = np.asarray(xi, dtype=float)
    d = score_matrix(h) if d is None else d
    k, q = d.D.shape
    kev = KStatistic().prepare(h, field, d)
    K = float(kev(xi[None, :])[0])
    S = s_stat(xi, h, field)
    J = max(S - K, 0.0)
    alpha = alpha_k + alpha_j
    flags = list(kev.flags)
    c_k = scipy.stats.chi2.ppf(1 - alpha_k, q)
    p_k = scipy.stats.chi2.sf(K, q)
    ratio = K / c_k
    p = p_k * alpha / alpha_k
    if k > q and alpha_j > 0 and "rank-deficient-D" not in flags:
        c_j = scipy.stats.chi2.ppf(1 - alpha_j, k - q)
        ratio = max(ratio, J / c_j)
        p = min(p, scipy.stats.chi2.sf(J, k - q) * alpha / alpha_j)
    else:
        flags.append("k-only")
    return TestResult(
        statistic=float(ratio),
        critical_value=1.0,
        p_value=float(min(1.0, p)),
        reject=bool(ratio > 1.0),
        n_draws=0,
        alpha=alpha,
        name="jk",
        flags=tuple(flags),
    )


def jk_test(xi, h, field, d: ScoreMatrix | None = None, alpha_k=0.04, alpha_j=0.01) -> bool:
    """True when the JK combination rejects."""
    return jk_result(xi, h, field, d, alpha_k, alpha_j).reject


class JKStatistic:
    """JK combination as an object; uses chi-square, not conditional, critical values."""

    name = "jk"
    bounded_by_s = False

    def __init__(self, alpha_k: float = 0.04, alpha_j: float = 0.01, step=None):
        self.alpha_k, self.alpha_j, self.step = alpha_k, alpha_j, step

    def result(self, xi, h: HProcess, field: CovarianceField) -> TestResult:
        return jk_result(xi, h, field, score_matrix(h, step=self.step), self.alpha_k, self.alpha_j)

    def __repr__(self):
        return f"JKStatistic(alpha_k={self.alpha_k!r}, alpha_j={self.alpha_j!r}, step={self.step!r})"


STATISTIC_NAMES = ("qlr", "s", "k", "jk", "qlr-weighted")


def get_statistic(name: str, **options):
    """Statistic object from its CLI name.

    Options: ``step`` (K and JK stencil), ``alpha_k``/``alpha_j`` (JK split),
    ``weights`` (weighted QLR).
    """
    key = name.lower()
    if key == "jk":
        return JKStatistic(options.get("alpha_k", 0.04), options.get("alpha_j", 0.01), options.get("step"))
    if key in ("qlr",):
        return QLR()
    if key in ("s", "ar"):
        return SStatistic()
    if key == "k":
        return KStatistic(step=options.get("step"))
    if key == "qlr-weighted":
        if "weights" not in options:
            raise ValueError("qlr-weighted needs a WeightField via weights=")
        return WeightedQLR(options["weights"])
    raise ValueError(f"unknown statistic {name!r}; choose from {', '.join(STATISTIC_NAMES)}")
