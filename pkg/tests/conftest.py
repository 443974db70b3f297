import numpy as np
import pytest

from condinf import CovarianceField, MomentProcess, ParamGrid


def random_field(rng, G, k, q=1, null_index=0, df_extra=3):
    """Wishart-type field: sample covariance of random Gk-dimensional vectors."""
    grid = ParamGrid(rng.normal(size=(G, q)), null_index)
    n = G * k + df_extra
    X = rng.normal(size=(n, G * k)) @ rng.normal(size=(G * k, G * k))
    return CovarianceField(grid, X.T @ X / n + 0.1 * np.eye(G * k), k)


def random_process(rng, field):
    return MomentProcess(field.grid, rng.normal(size=(field.grid.size, field.k)))


def scalar_field(grid, blocks):
    """k = 1 field from a (G, G) matrix."""
    b = np.asarray(blocks, dtype=float)
    return CovarianceField.from_blocks(grid, b[:, :, None, None])


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def two_point():
    """Two grid points, theta_0 first, identity field with k = 1."""
    grid = ParamGrid(np.array([0.0, 1.0]), 0)
    return grid, scalar_field(grid, np.eye(2))


_CRITERIA = []


@pytest.fixture
def criterion(capsys):
    """Record and echo one PASS/FAIL line per acceptance criterion."""

    def record(number, ok, detail):
        line = f"criterion {number}: {'PASS' if ok else 'FAIL'} - {detail}"
        _CRITERIA.append(line)
        with capsys.disabled():
            print(f"\n{line}")

    return record


def pytest_terminal_summary(terminalreporter):
    if _CRITERIA:
        terminalreporter.section("acceptance criteria")
        for line in _CRITERIA:
            terminalreporter.write_line(line)
