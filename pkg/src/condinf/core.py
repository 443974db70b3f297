"""Shared domain types and linear-algebra helpers.

Every object here is immutable after construction: arrays are copied and
flagged read-only, so they can be shared across threads and worker
processes without defensive copies.
"""

from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
import scipy.linalg

__all__ = [
    "NumericalDegradationWarning",
    "ParamGrid",
    "MomentProcess",
    "MeanFunction",
    "CovarianceField",
    "HProcess",
    "TestResult",
    "ConfidenceSet",
    "FieldReport",
    "validate_field",
    "solve_spd",
    "sym_root",
    "read_grid_csv",
    "write_grid_csv",
    "write_field_csv",
]

# relative eigenvalue floor below which solve_spd regularizes
RIDGE_TRIGGER = 1e-10
RIDGE_SIZE = 1e-8


class NumericalDegradationWarning(RuntimeWarning):
    """Emitted when a near-singular matrix had to be ridge-regularized."""


def _frozen(a, dtype=float):
    arr = np.array(a, dtype=dtype, copy=True)
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True, eq=False)
class ParamGrid:
    """Finite discretization of the parameter space with a distinguished null.

    Parameters
    ----------
    points : array_like of shape (G, q) or (G,)
        Grid points in parameter units. A 1-d array is read as q = 1.
    null_index : int
        Position of the hypothesized value theta_0 within ``points``.
    """

    points: np.ndarray
    null_index: int = 0

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float)
        if pts.ndim == 1:
            pts = pts[:, None]
        if pts.ndim != 2 or pts.shape[0] < 1 or pts.shape[1] < 1:
            raise ValueError(f"grid points must be a (G, q) array, got shape {pts.shape}")
        if not np.all(np.isfinite(pts)):
            raise ValueError("grid points must be finite")
        if np.unique(pts, axis=0).shape[0] != pts.shape[0]:
            raise ValueError("grid points must be pairwise distinct")
        idx = int(self.null_index)
        if not 0 <= idx < pts.shape[0]:
            raise ValueError(f"null_index {idx} out of range for {pts.shape[0]} points")
        object.__setattr__(self, "points", _frozen(pts))
        object.__setattr__(self, "null_index", idx)

    @property
    def size(self) -> int:
        return self.points.shape[0]

    @property
    def q(self) -> int:
        return self.points.shape[1]

    @property
    def null_point(self) -> np.ndarray:
        return self.points[self.null_index]

    def with_null(self, index: int) -> "ParamGrid":
        """Same points, different hypothesized value."""
        if index == self.null_index:
            return self
        if not 0 <= index < self.size:
            raise ValueError(f"null_index {index} out of range for {self.size} points")
        new = object.__new__(ParamGrid)
        object.__setattr__(new, "points", self.points)
        object.__setattr__(new, "null_index", int(index))
        return new

    def index_of(self, point, atol: float = 1e-12) -> int:
        """Index of the grid point equal to ``point`` (within ``atol``)."""
        p = np.atleast_1d(np.asarray(point, dtype=float))
        hits = np.flatnonzero(np.all(np.abs(self.points - p) <= atol, axis=1))
        if hits.size == 0:
            raise KeyError(f"point {p.tolist()} is not on the grid")
        return int(hits[0])

    @classmethod
    def from_axes(cls, axes: Sequence[Sequence[float]], null_point=None) -> "ParamGrid":
        """Cartesian product of per-coordinate axes (first coordinate varies slowest).

        If ``null_point`` is given it is inserted into every axis, so it is
        guaranteed to be a grid point.
        """
        axes = [np.asarray(a, dtype=float).ravel() for a in axes]
        if null_point is not None:
            null_point = np.atleast_1d(np.asarray(null_point, dtype=float))
            if null_point.size != len(axes):
                raise ValueError("null_point dimension does not match number of axes")
            axes = [np.union1d(a, [v]) for a, v in zip(axes, null_point)]
        else:
            axes = [np.unique(a) for a in axes]
        mesh = np.meshgrid(*axes, indexing="ij")
        pts = np.column_stack([m.ravel() for m in mesh])
        grid = cls(pts, 0)
        if null_point is not None:
            grid = grid.with_null(grid.index_of(null_point))
        return grid


@dataclass(frozen=True, eq=False)
class MomentProcess:
    """Scaled sample moment g_T evaluated on a grid; row i is g_T(theta_i)."""

    grid: ParamGrid
    values: np.ndarray
    T: int | None = None

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=float)
        if vals.ndim == 1:
            vals = vals[:, None]
        if vals.shape[0] != self.grid.size:
            raise ValueError(
                f"moment process has {vals.shape[0]} rows but the grid has {self.grid.size} points"
            )
        if vals.shape[1] < 1:
            raise ValueError("moment dimension k must be at least 1")
        if not np.all(np.isfinite(vals)):
            raise ValueError("moment process contains non-finite values")
        object.__setattr__(self, "values", _frozen(vals))

    @property
    def k(self) -> int:
        return self.values.shape[1]

    @property
    def at_null(self) -> np.ndarray:
        return self.values[self.grid.null_index]

    def with_null(self, index: int) -> "MomentProcess":
        new = object.__new__(MomentProcess)
        for name, val in (("grid", self.grid.with_null(index)), ("values", self.values), ("T", self.T)):
            object.__setattr__(new, name, val)
        return new


@dataclass(frozen=True, eq=False)
class MeanFunction:
    """Deterministic mean function m_T on a grid (used by simulation designs)."""

    grid: ParamGrid
    values: np.ndarray

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=float)
        if vals.ndim == 1:
            vals = vals[:, None]
        if vals.shape[0] != self.grid.size:
            raise ValueError("mean function rows must match grid size")
        object.__setattr__(self, "values", _frozen(vals))

    @property
    def k(self) -> int:
        return self.values.shape[1]

    @property
    def satisfies_null(self) -> bool:
        return bool(np.all(self.values[self.grid.null_index] == 0.0))


@dataclass(frozen=True, eq=False)
class CovarianceField:
    """Grid-indexed covariance blocks Sigma(theta_i, theta_j).

    Stored as the assembled (G*k, G*k) matrix; block (i, j) occupies rows
    ``i*k:(i+1)*k`` and columns ``j*k:(j+1)*k``. The matrix is symmetrized
    on construction, so ``block(i, j) == block(j, i).T`` holds exactly.
    """

    grid: ParamGrid
    matrix: np.ndarray
    k: int
    lambda_bar: float = 1e6

    def __post_init__(self):
        m = np.asarray(self.matrix, dtype=float)
        n = self.grid.size * int(self.k)
        if m.shape != (n, n):
            raise ValueError(f"assembled covariance must be {n}x{n}, got {m.shape}")
        if not np.all(np.isfinite(m)):
            raise ValueError("covariance field contains non-finite values")
        if self.lambda_bar <= 0:
            raise ValueError("lambda_bar must be positive")
        m = 0.5 * (m + m.T)
        object.__setattr__(self, "matrix", _frozen(m))
        object.__setattr__(self, "k", int(self.k))

    @classmethod
    def from_blocks(cls, grid: ParamGrid, blocks, lambda_bar: float = 1e6) -> "CovarianceField":
        """Build from a (G, G, k, k) array with ``blocks[i, j] = Sigma(theta_i, theta_j)``."""
        b = np.asarray(blocks, dtype=float)
        if b.ndim != 4 or b.shape[0] != b.shape[1] or b.shape[2] != b.shape[3]:
            raise ValueError(f"blocks must have shape (G, G, k, k), got {b.shape}")
        G, _, k, _ = b.shape
        return cls(grid, b.transpose(0, 2, 1, 3).reshape(G * k, G * k), k, lambda_bar)

    @property
    def blocks(self) -> np.ndarray:
        G, k = self.grid.size, self.k
        return self.matrix.reshape(G, k, G, k).transpose(0, 2, 1, 3)

    def block(self, i: int, j: int) -> np.ndarray:
        k = self.k
        return self.matrix[i * k:(i + 1) * k, j * k:(j + 1) * k]

    def diag_blocks(self) -> np.ndarray:
        """Sigma(theta_i, theta_i) for every grid point, shape (G, k, k)."""
        G, k = self.grid.size, self.k
        idx = np.arange(G)
        return self.matrix.reshape(G, k, G, k)[idx, :, idx, :]

    def column(self, j: int) -> np.ndarray:
        """Sigma(theta_i, theta_j) for all i, shape (G, k, k)."""
        G, k = self.grid.size, self.k
        return self.matrix[:, j * k:(j + 1) * k].reshape(G, k, k)

    def with_grid(self, grid: ParamGrid) -> "CovarianceField":
        if grid.size != self.grid.size:
            raise ValueError("replacement grid must have the same number of points")
        new = object.__new__(CovarianceField)
        for name, val in (("grid", grid), ("matrix", self.matrix), ("k", self.k), ("lambda_bar", self.lambda_bar)):
            object.__setattr__(new, name, val)
        return new

    def transformed(self, A) -> "CovarianceField":
        """Field of A G(theta): blocks become A Sigma(theta_i, theta_j) A'."""
        A = np.asarray(A, dtype=float)
        big = np.kron(np.eye(self.grid.size), A)
        return CovarianceField(self.grid, big @ self.matrix @ big.T, A.shape[0], self.lambda_bar)


@dataclass(frozen=True, eq=False)
class HProcess:
    """Conditioning process h_T and projection coefficients V(theta_i).

    ``v_coeffs[i] = Sigma(theta_i, theta_0) Sigma(theta_0, theta_0)^{-1}``.
    ``regularized`` records whether the null block needed a ridge.
    """

    grid: ParamGrid
    values: np.ndarray
    v_coeffs: np.ndarray
    regularized: bool = False

    def __post_init__(self):
        object.__setattr__(self, "values", _frozen(self.values))
        object.__setattr__(self, "v_coeffs", _frozen(self.v_coeffs))

    @property
    def k(self) -> int:
        return self.values.shape[1]


@dataclass(frozen=True)
class TestResult:
    """Outcome of one conditional test."""

    __test__ = False  # keep pytest from collecting this class

    statistic: float
    critical_value: float
    p_value: float
    reject: bool
    n_draws: int
    alpha: float
    name: str = ""
    flags: tuple = ()


@dataclass(frozen=True, eq=False)
class ConfidenceSet:
    """Accept mask over a grid from test inversion.

    ``flags`` maps grid indices to a message for points that could not be
    evaluated; those points are excluded (``accepted`` is False there).
    """

    grid: ParamGrid
    accepted: np.ndarray
    level: float
    statistics: np.ndarray | None = None
    critical_values: np.ndarray | None = None
    flags: dict = field(default_factory=dict)

    def __post_init__(self):
        acc = np.asarray(self.accepted, dtype=bool)
        if acc.shape != (self.grid.size,):
            raise ValueError("accepted mask must have one entry per grid point")
        object.__setattr__(self, "accepted", _frozen(acc, bool))

    @property
    def fraction(self) -> float:
        """Share of grid points accepted."""
        return float(self.accepted.mean())

    @property
    def points(self) -> np.ndarray:
        return self.grid.points[self.accepted]

    def contains(self, point, atol: float = 1e-12) -> bool:
        return bool(self.accepted[self.grid.index_of(point, atol)])

    def to_csv(self, path, names: Sequence[str] | None = None, header_lines: Sequence[str] = ()):
        q = self.grid.q
        names = list(names) if names is not None else [f"theta_{j + 1}" for j in range(q)]
        with open(path, "w", newline="") as fh:
            for line in header_lines:
                fh.write(f"# {line}\n")
            w = csv.writer(fh)
            w.writerow([*names, "accepted"])
            for pt, a in zip(self.grid.points, self.accepted):
                w.writerow([*(repr(float(v)) for v in pt), int(a)])


@dataclass(frozen=True)
class FieldReport:
    symmetry_violation: float
    min_block_eigenvalue: float
    max_block_eigenvalue: float
    min_eigenvalue: float
    max_eigenvalue: float
    lambda_bar: float
    singular: bool
    passed: bool


def validate_field(field: CovarianceField) -> FieldReport:
    """Check the bounded-and-positive-definite requirement on a field.

    Reports the worst asymmetry of the stored matrix, the extreme
    eigenvalues over all diagonal blocks and of the assembled matrix. The
    field passes when every diagonal-block eigenvalue is inside
    ``[1/lambda_bar, lambda_bar]``.
    """
    m = field.matrix
    sym = float(np.max(np.abs(m - m.T))) if m.size else 0.0
    block_eigs = np.linalg.eigvalsh(field.diag_blocks())
    all_eigs = np.linalg.eigvalsh(m)
    lo, hi = float(block_eigs.min()), float(block_eigs.max())
    lb = field.lambda_bar
    singular = lo <= 0.0
    return FieldReport(
        symmetry_violation=sym,
        min_block_eigenvalue=lo,
        max_block_eigenvalue=hi,
        min_eigenvalue=float(all_eigs.min()),
        max_eigenvalue=float(all_eigs.max()),
        lambda_bar=lb,
        singular=singular,
        passed=(not singular) and lo >= 1.0 / lb and hi <= lb,
    )


def _check_square(A):
    A = np.asarray(A, dtype=float)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {A.shape}")
    if not np.all(np.isfinite(A)):
        raise ValueError("matrix contains non-finite entries")
    return A


def _ridge(A):
    """Return (A', regularized) with the relative ridge applied when needed."""
    k = A.shape[0]
    scale = np.trace(A) / k
    lo = np.linalg.eigvalsh(A)[0]
    if lo >= RIDGE_TRIGGER * scale and scale > 0:
        return A, False
    eps = RIDGE_SIZE * scale if scale > 0 else RIDGE_SIZE
    return A + eps * np.eye(k), True


def solve_spd(A, b, return_info: bool = False):
    """Solve ``A x = b`` for symmetric positive (semi)definite ``A``.

    Uses a Cholesky factorization. When the smallest eigenvalue of ``A``
    falls below ``1e-10 * trace(A) / k`` the system is ridge-regularized
    with ``1e-8 * trace(A) / k`` and a :class:`NumericalDegradationWarning`
    is issued.

    Parameters
    ----------
    A : array_like of shape (k, k)
    b : array_like of shape (k,) or (k, m)
    return_info : bool, default=False
        Also return whether the ridge was applied.
    """
    A = _check_square(A)
    b = np.asarray(b, dtype=float)
    if b.shape[0] != A.shape[0]:
        raise ValueError(f"right-hand side has {b.shape[0]} rows, matrix is {A.shape[0]}x{A.shape[0]}")
    A = 0.5 * (A + A.T)
    A, regularized = _ridge(A)
    if regularized:
        warnings.warn("near-singular matrix regularized with a ridge", NumericalDegradationWarning, stacklevel=2)
    x = scipy.linalg.cho_solve(scipy.linalg.cho_factor(A, lower=True), b)
    return (x, regularized) if return_info else x


def sym_root(A) -> np.ndarray:
    """Symmetric square root L (L @ L.T == A) of a PSD matrix.

    Negative eigenvalues from round-off are clipped to zero, so singular and
    zero matrices are accepted.
    """
    A = _check_square(A)
    w, U = np.linalg.eigh(0.5 * (A + A.T))
    return (U * np.sqrt(np.clip(w, 0.0, None))) @ U.T


def write_grid_csv(grid: ParamGrid, path) -> None:
    with open(path, "w", newline="") as fh:
        fh.write(f"# null_index={grid.null_index}\n")
        w = csv.writer(fh)
        w.writerow([f"theta_{j + 1}" for j in range(grid.q)])
        for pt in grid.points:
            w.writerow([repr(float(v)) for v in pt])


def read_grid_csv(path) -> ParamGrid:
    null_index = 0
    rows = []
    for line in Path(path).read_text().splitlines():
        line = line.strip()
        if not line:
            continue
        if line.startswith("#"):
            key, _, val = line.lstrip("# ").partition("=")
            if key.strip() == "null_index":
                null_index = int(val)
            continue
        cells = [c.strip() for c in line.split(",")]
        try:
            rows.append([float(c) for c in cells])
        except ValueError:
            continue  # column-name header
    if not rows:
        raise ValueError(f"{path}: no grid points found")
    return ParamGrid(np.array(rows), null_index)


def write_field_csv(field: CovarianceField, path) -> None:
    """Debug dump: one (i, j, r, c, value) row per covariance entry."""
    b = field.blocks
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["i", "j", "r", "c", "value"])
        for idx in np.ndindex(b.shape):
            w.writerow([*idx, repr(float(b[idx]))])
