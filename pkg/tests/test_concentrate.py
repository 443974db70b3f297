import numpy as np
import pytest

from condinf.concentrate import (
    LongMomentModel,
    ProfilePath,
    concentrated_covariance,
    concentrated_moment,
    long_panel,
    stack_panels,
)
from condinf.condcrit import conditional_test, invert_test
from condinf.core import CovarianceField, ParamGrid, validate_field
from condinf.covest import MomentPanel, iid_covariance
from condinf.gmm import build_moment_process
from condinf.stats import QLR

from .conftest import random_field


def long_field_2x2(G=1):
    grid = ParamGrid(np.arange(G, dtype=float))
    block = np.array([[1.0, 0.5], [0.5, 2.0]])
    return CovarianceField.from_blocks(grid, np.broadcast_to(block, (G, G, 2, 2)).copy())


class TestSandwich:
    def test_hand_example(self):
        field = long_field_2x2()
        path = ProfilePath(field.grid, [[0.3]], np.ones((1, 1, 1)))
        out = concentrated_covariance(field, path)
        assert out.block(0, 0)[0, 0] == pytest.approx(4.0, abs=1e-12)

    def test_zero_jacobian_selects_top_left(self, rng):
        G, k, p = 3, 2, 2
        field = random_field(rng, G, k + p)
        path = ProfilePath(field.grid, np.zeros((G, p)), np.zeros((G, k, p)))
        out = concentrated_covariance(field, path)
        for i in range(G):
            for j in range(G):
                np.testing.assert_array_equal(out.block(i, j), field.block(i, j)[:k, :k])

    def test_matches_loop(self, rng):
        G, k, p = 4, 3, 2
        field = random_field(rng, G, k + p)
        M = rng.normal(size=(G, k, p))
        out = concentrated_covariance(field, ProfilePath(field.grid, np.zeros((G, p)), M))
        for i in range(G):
            for j in range(G):
                Si = np.hstack([np.eye(k), M[i]])
                Sj = np.hstack([np.eye(k), M[j]])
                np.testing.assert_allclose(out.block(i, j), Si @ field.block(i, j) @ Sj.T, atol=1e-12)
                np.testing.assert_array_equal(out.block(i, j), out.block(j, i).T)

    def test_output_valid_when_long_field_valid(self, rng):
        field = random_field(rng, 3, 4)
        M = 0.5 * rng.normal(size=(3, 3, 1))
        out = concentrated_covariance(field, ProfilePath(field.grid, np.zeros((3, 1)), M))
        assert validate_field(out).min_eigenvalue >= -1e-10

    def test_dimension_mismatch(self, rng):
        field = random_field(rng, 3, 3)
        with pytest.raises(ValueError):
            concentrated_covariance(field, ProfilePath(field.grid, np.zeros((3, 1)), np.zeros((3, 3, 1))))

    def test_degenerate_long_field(self):
        grid = ParamGrid([0.0])
        # nuisance influence identical to the moment: rank-one long block
        field = CovarianceField(grid, np.ones((2, 2)), 2)
        with pytest.raises(ValueError, match="redundant"):
            concentrated_covariance(field, ProfilePath(grid, [[0.0]], np.ones((1, 1, 1))))


class TestProfilePath:
    def test_bounds_interior(self):
        grid = ParamGrid([0.0, 1.0])
        ProfilePath(grid, [[0.5], [0.2]], np.zeros((2, 1, 1)), bounds=[[0.0, 1.0]])
        with pytest.raises(ValueError, match="grid point 1"):
            ProfilePath(grid, [[0.5], [1.0]], np.zeros((2, 1, 1)), bounds=[[0.0, 1.0]])

    def test_shape_and_finiteness(self):
        grid = ParamGrid([0.0, 1.0])
        with pytest.raises(ValueError):
            ProfilePath(grid, [[0.5], [0.2]], np.zeros((2, 1, 2)))
        with pytest.raises(ValueError):
            ProfilePath(grid, [[np.nan], [0.2]], np.zeros((2, 1, 1)))

    def test_empty(self):
        path = ProfilePath.empty(ParamGrid([0.0, 1.0, 2.0]), 4)
        assert path.p == 0 and path.m_hats.shape == (3, 4, 0)


def _linear_model(rng, T=40, k=2, p=1):
    X = rng.normal(size=(T, k))
    W = rng.normal(size=(T, p))

    def contributions(beta, theta):
        return X - theta[0] + (W @ beta)[:, None] * np.ones(k)

    return LongMomentModel(contributions, T, k, p, 1)


class TestConcentratedMoment:
    def test_p_zero_matches_direct_pipeline(self, rng):
        T, G, k = 60, 5, 2
        grid = ParamGrid(np.linspace(-1, 1, G), 2)
        X = rng.normal(size=(T, k))
        model = LongMomentModel(lambda beta, theta: X - theta[0], T, k, 0, 1)
        path = ProfilePath.empty(grid, k)
        panel = MomentPanel(grid, np.stack([X - t for t in grid.points[:, 0]], axis=1))
        direct_g = build_moment_process(panel)
        direct_f = iid_covariance(panel)
        g = concentrated_moment(model, path)
        f = concentrated_covariance(iid_covariance(long_panel(model, path)), path)
        np.testing.assert_array_equal(g.values, direct_g.values)
        np.testing.assert_array_equal(f.matrix, direct_f.matrix)
        a = conditional_test(g, f, QLR(), 0.05, 200, np.random.default_rng(1))
        b = conditional_test(direct_g, direct_f, QLR(), 0.05, 200, np.random.default_rng(1))
        assert a == b
        ca = invert_test(g, f, QLR(), 0.05, 200, np.random.default_rng(2))
        cb = invert_test(direct_g, direct_f, QLR(), 0.05, 200, np.random.default_rng(2))
        np.testing.assert_array_equal(ca.accepted, cb.accepted)

    def test_constant_in_beta(self, rng):
        T, k = 30, 2
        X = rng.normal(size=(T, k))
        model = LongMomentModel(lambda beta, theta: X * theta[0], T, k, 1, 1)
        grid = ParamGrid([0.5, 1.0])
        a = concentrated_moment(model, ProfilePath(grid, [[0.0], [0.0]], np.zeros((2, k, 1))))
        b = concentrated_moment(model, ProfilePath(grid, [[3.0], [-2.0]], np.zeros((2, k, 1))))
        np.testing.assert_array_equal(a.values, b.values)

    def test_scaling(self, rng):
        model = _linear_model(rng)
        grid = ParamGrid([0.0, 1.0])
        path = ProfilePath(grid, [[0.1], [0.2]], np.zeros((2, 2, 1)))
        g = concentrated_moment(model, path)
        direct = model.evaluate([0.2], [1.0]).sum(axis=0) / np.sqrt(model.T)
        np.testing.assert_allclose(g.values[1], direct, rtol=1e-14)

    def test_from_observation(self):
        model = LongMomentModel.from_observation(lambda t, b, th: [t + b[0], th[0]], 3, 2, 1, 1)
        np.testing.assert_array_equal(model.evaluate([1.0], [5.0]), [[1, 5], [2, 5], [3, 5]])

    def test_evaluate_checks(self):
        model = LongMomentModel(lambda b, t: np.full((3, 1), np.nan), 3, 1, 0, 1)
        with pytest.raises(ValueError):
            model.evaluate([], [0.0])
        model = LongMomentModel(lambda b, t: np.zeros((2, 1)), 3, 1, 0, 1)
        with pytest.raises(ValueError):
            model.evaluate([], [0.0])


def test_stack_panels(rng):
    grid = ParamGrid([0.0, 1.0])
    a = MomentPanel(grid, rng.normal(size=(10, 2, 3)))
    b = MomentPanel(grid, rng.normal(size=(10, 2, 1)))
    assert stack_panels(a, b).k == 4
    with pytest.raises(ValueError):
        stack_panels(a, MomentPanel(grid, rng.normal(size=(9, 2, 1))))
