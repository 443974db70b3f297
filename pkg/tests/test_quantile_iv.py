import itertools
import math

import numpy as np
import pytest
import scipy.integrate
import scipy.optimize
from hypothesis import given, settings
from hypothesis import strategies as st

from condinf.concentrate import LongMomentModel, ProfilePath, concentrated_covariance, concentrated_moment
from condinf.core import ParamGrid
from condinf.covest import iid_covariance
from condinf.montecarlo import QivScenario, QivSimDesign, gen_qiv_data, size_experiment
from condinf.quantile_iv import (
    KernelSpec,
    QuantileFitError,
    QuantileIVData,
    check_loss,
    concentrated_g,
    default_bandwidth,
    fit_beta,
    kernel_jacobians,
    profile,
    qiv_covariance,
    qiv_long_panel,
    qiv_pipeline,
    qr_objective,
    read_qiv_csv,
)


def make_data(seed, T=15, p=2, tau=0.5, k=2):
    r = np.random.default_rng(seed)
    D = r.normal(size=(T, 1))
    if p == 1:
        C = r.normal(size=(T, 1)) + 2.0
    else:
        C = np.column_stack([np.ones(T), r.normal(size=(T, p - 1))])
    Y = D[:, 0] + C @ r.normal(size=p) + r.standard_t(3, size=T)
    return QuantileIVData(Y, D, C, r.normal(size=(T, k)), tau)


def vertex_oracle(data, theta):
    """Exact LP minimum: best interpolating fit over all p-row subsets."""
    r = data.Y - data.D @ np.atleast_1d(theta)
    p = data.p
    best = math.inf
    for rows in itertools.combinations(range(data.T), p):
        sub = data.C[list(rows)]
        if abs(np.linalg.det(sub)) < 1e-12:
            continue
        b = np.linalg.solve(sub, r[list(rows)])
        best = min(best, check_loss(r - data.C @ b, data.tau).mean())
    return best


def grid_oracle(data, theta, center, half_width=3.0, n=401):
    axes = [np.linspace(c - half_width, c + half_width, n) for c in center]
    mesh = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, len(center))
    r = data.Y - data.D @ np.atleast_1d(theta)
    res = r[:, None] - data.C @ mesh.T
    return check_loss(res, data.tau).mean(axis=0).min()


class TestData:
    def test_rank_check(self):
        T = 10
        Z = np.ones((T, 1))
        with pytest.raises(ValueError, match="rank"):
            QuantileIVData(np.zeros(T), np.zeros(T), np.ones(T), Z)

    @pytest.mark.parametrize("tau", [0.0, 1.0, -0.5])
    def test_tau_range(self, tau):
        with pytest.raises(ValueError):
            make_data(0, tau=tau)

    def test_nonfinite(self):
        with pytest.raises(ValueError):
            QuantileIVData([np.nan, 1, 2], [0, 1, 2], [1, 1, 1], [0.0, 1.0, 3.0])

    def test_dimensions(self):
        data = make_data(0, T=12, p=2, k=3)
        assert (data.T, data.q, data.p, data.k) == (12, 1, 2, 3)


class TestFitBeta:
    def test_median_constant_only(self):
        r = np.random.default_rng(1)
        T = 21
        Y = r.normal(size=T)
        data = QuantileIVData(Y, np.zeros(T), np.ones(T), r.normal(size=T), 0.5)
        b = fit_beta(data, [0.0])
        assert qr_objective(data, [0.0], b) == pytest.approx(check_loss(Y - np.median(Y), 0.5).mean(), abs=1e-10)

    def test_quarter_quantile_constant_only(self):
        r = np.random.default_rng(2)
        T = 40
        Y = r.exponential(size=T)
        data = QuantileIVData(Y, np.zeros(T), np.ones(T), r.normal(size=T), 0.25)
        b = fit_beta(data, [0.0])
        q = np.quantile(Y, 0.25, method="inverted_cdf")
        assert qr_objective(data, [0.0], b) == pytest.approx(check_loss(Y - q, 0.25).mean(), abs=1e-12)

    def test_scaled_constant_column(self):
        r = np.random.default_rng(3)
        T = 11
        Y = r.normal(size=T)
        data = QuantileIVData(Y, np.zeros(T), 2 * np.ones(T), r.normal(size=T), 0.5)
        assert fit_beta(data, [0.0])[0] == pytest.approx(np.median(Y) / 2)

    @given(st.integers(0, 2**32 - 1), st.sampled_from([1, 2]), st.sampled_from([0.25, 0.5, 0.8]))
    @settings(max_examples=30, deadline=None)
    def test_matches_vertex_oracle(self, seed, p, tau):
        data = make_data(seed, T=14, p=p, tau=tau)
        theta = np.array([0.7])
        obj = qr_objective(data, theta, fit_beta(data, theta))
        assert obj <= vertex_oracle(data, theta) + 1e-8

    def test_row_permutation_invariance(self):
        data = make_data(4, T=30, p=2)
        perm = np.random.default_rng(0).permutation(30)
        pdata = QuantileIVData(data.Y[perm], data.D[perm], data.C[perm], data.Z[perm], data.tau)
        a = qr_objective(data, [1.0], fit_beta(data, [1.0]))
        b = qr_objective(pdata, [1.0], fit_beta(pdata, [1.0]))
        assert a == pytest.approx(b, abs=1e-12)

    def test_theta_length(self):
        with pytest.raises(ValueError):
            fit_beta(make_data(0), [0.0, 1.0])

    def test_solver_failure_carries_iterate(self, monkeypatch):
        data = make_data(5, p=2)

        class Failed:
            x = np.array([0.1, 0.2] + [0.0] * 30)
            status = 1
            message = "iteration limit"

        monkeypatch.setattr(scipy.optimize, "linprog", lambda *a, **k: Failed())
        with pytest.raises(QuantileFitError) as info:
            fit_beta(data, [0.0])
        np.testing.assert_array_equal(info.value.best, [0.1, 0.2])


def test_grid_oracle_fifty_problems():
    worst = -np.inf
    for seed in range(50):
        p = 1 + seed % 2
        data = make_data(1000 + seed, T=25, p=p, tau=(0.3, 0.5, 0.7)[seed % 3])
        b = fit_beta(data, [0.5])
        obj = qr_objective(data, [0.5], b)
        worst = max(worst, obj - grid_oracle(data, [0.5], b, n=2001 if p == 1 else 201))
    assert worst <= 1e-8


class TestConcentratedG:
    def test_four_row_hand(self):
        Y = np.array([3.0, -1.0, 2.0, -2.0])
        Z = np.array([[1.0, 2.0], [1.0, -1.0], [1.0, 0.5], [1.0, 3.0]])
        C = np.column_stack([np.ones(4), [0.0, 1.0, 0.0, 2.0]])
        data = QuantileIVData(Y, np.zeros(4), C, Z[:, 1], 0.5)
        path = ProfilePath(ParamGrid([0.0]), [[0.0, 0.0]], np.zeros((1, 1, 2)))
        g = concentrated_g(data, path)
        # signs +, -, +, -: g = T^-1/2 * 0.5 * (z1 + z3 - z2 - z4)
        assert g.values[0, 0] == pytest.approx(0.5 * 0.5 * (2.0 + 0.5 + 1.0 - 3.0))

    def test_indicator_uses_less_equal(self):
        data = QuantileIVData([0.0, 1.0, -1.0], np.zeros(3), np.ones(3), [1.0, 2.0, 4.0], 0.5)
        path = ProfilePath(ParamGrid([0.0]), [[0.0]], np.zeros((1, 1, 1)))
        s = np.array([-0.5, 0.5, -0.5])
        assert concentrated_g(data, path).values[0, 0] == pytest.approx(s @ [1.0, 2.0, 4.0] / np.sqrt(3))

    def test_median_balance(self):
        r = np.random.default_rng(6)
        T = 40
        Y = r.normal(size=T)
        D = r.normal(size=T)
        data = QuantileIVData(Y, D, np.ones(T), np.full(T, 1.0) + 1e-3 * r.normal(size=T), 0.5)
        grid = ParamGrid([0.3])
        g = concentrated_g(data, profile(data, grid))
        # exactly T/2 residuals are <= 0 at the median fit
        assert abs(g.values[0, 0]) < 0.01

    def test_saturation(self):
        T = 9
        Z = np.random.default_rng(7).normal(size=(T, 2))
        data = QuantileIVData(np.full(T, 1e6), np.zeros(T), np.ones(T), Z, 0.3)
        path = ProfilePath(ParamGrid([0.0]), [[0.0]], np.zeros((1, 2, 1)))
        np.testing.assert_allclose(concentrated_g(data, path).values[0], np.sqrt(T) * 0.3 * Z.mean(axis=0))

    @given(st.integers(0, 2**32 - 1))
    @settings(max_examples=20, deadline=None)
    def test_bounded(self, seed):
        data = make_data(seed, T=30, p=1, k=3)
        grid = ParamGrid(np.linspace(-1, 1, 5))
        g = concentrated_g(data, profile(data, grid))
        bound = np.sqrt(data.T) * max(data.tau, 1 - data.tau) * np.abs(data.Z).max()
        assert np.all(np.abs(g.values) <= bound)


class TestKernelJacobians:
    def test_uniform_flat_kernel(self):
        r = np.random.default_rng(8)
        T = 6
        C = np.column_stack([np.ones(T), r.normal(size=T)])
        Z = r.normal(size=(T, 2))
        Y = C @ [0.5, -1.0]
        data = QuantileIVData(Y, np.zeros(T), C, Z, 0.5)
        M, J = kernel_jacobians(data, [0.0], [0.5, -1.0], KernelSpec.uniform(1.0))
        np.testing.assert_allclose(M, Z.T @ C / T, atol=1e-14)
        np.testing.assert_allclose(J, C.T @ C / T, atol=1e-14)

    def test_outside_support(self):
        T = 4
        data = QuantileIVData(np.full(T, 10.0), np.zeros(T), np.ones(T), [1.0, 2.0, 3.0, 5.0], 0.5)
        M, J = kernel_jacobians(data, [0.0], [0.0], KernelSpec.uniform(1.0))
        np.testing.assert_array_equal(M, 0.0)
        np.testing.assert_array_equal(J, 0.0)

    def test_three_row_gaussian_hand(self):
        Y = np.array([0.3, -0.2, 1.1])
        C = np.ones(3)
        Z = np.array([1.0, -2.0, 0.5])
        data = QuantileIVData(Y, np.zeros(3), C, Z, 0.5)
        h = 0.7
        M, J = kernel_jacobians(data, [0.0], [0.1], KernelSpec.gaussian(h))
        phi = lambda v: math.exp(-v * v / 2) / math.sqrt(2 * math.pi)  # noqa: E731
        w = [phi((y - 0.1) / h) for y in Y]
        assert M[0, 0] == pytest.approx(sum(wi * zi for wi, zi in zip(w, Z)) / (3 * h), abs=1e-12)
        assert J[0, 0] == pytest.approx(sum(w) / (3 * h), abs=1e-12)

    def test_default_bandwidth(self):
        e = np.arange(32, dtype=float)
        assert default_bandwidth(e[:, None])[0] == pytest.approx(1.06 * e.std(ddof=1) * 32 ** -0.2)

    @pytest.mark.parametrize("name", ["gaussian", "uniform"])
    def test_kernels_integrate_to_one(self, name):
        v = np.linspace(-10, 10, 200_001)
        f = KernelSpec.from_name(name).kernel(v)
        assert scipy.integrate.trapezoid(f, v) == pytest.approx(1.0, abs=1e-4)

    def test_bad_spec(self):
        with pytest.raises(ValueError):
            KernelSpec.from_name("epanechnikov")
        with pytest.raises(ValueError):
            KernelSpec.gaussian(0.0)


class TestQivCovariance:
    def test_three_row_hand(self):
        Y = np.array([0.3, -0.2, 1.1])
        D = np.array([0.0, 1.0, 2.0])
        Z = np.array([[1.0, 0.2], [-2.0, 0.4], [0.5, -1.0]])
        C = np.ones(3)
        data = QuantileIVData(Y, D, C, Z, 0.4)
        grid = ParamGrid([0.0, 0.5])
        betas = np.array([[0.1], [-0.3]])
        path = ProfilePath(grid, betas, np.zeros((2, 2, 1)))
        h = 0.9
        field = qiv_covariance(data, path, KernelSpec.gaussian(h))
        phi = lambda v: math.exp(-v * v / 2) / math.sqrt(2 * math.pi)  # noqa: E731
        A, S = [], []
        for i, th in enumerate([0.0, 0.5]):
            eps = Y - D * th - betas[i, 0]
            w = np.array([phi(e / h) for e in eps]) / h
            M = (w[:, None] * Z).sum(axis=0) / 3
            J = w.sum() / 3
            A.append(M / J)
            S.append(0.4 - (eps < 0))
        for i in range(2):
            for j in range(2):
                expected = sum(
                    S[i][t] * S[j][t] * np.outer(Z[t] - A[i], Z[t] - A[j]) for t in range(3)
                ) / 3
                np.testing.assert_allclose(field.block(i, j), expected, atol=1e-12)

    def test_diagonal_psd(self):
        data = make_data(9, T=50, p=2, k=3)
        grid = ParamGrid(np.linspace(-1, 1, 7))
        field = qiv_covariance(data, profile(data, grid))
        assert np.linalg.eigvalsh(field.diag_blocks()).min() >= -1e-10

    def test_iid_limit(self):
        design = QivSimDesign(rho=0.0, pi=0.0, n=20_000, k=2, margins="normal")
        data = gen_qiv_data(design, np.random.default_rng(10))
        grid = ParamGrid([1.0])
        field = qiv_covariance(data, profile(data, grid))
        target = 0.25 * data.Z.T @ data.Z / data.T
        np.testing.assert_allclose(field.block(0, 0), target, atol=0.02)

    def test_singular_j_names_point(self):
        T = 5
        data = QuantileIVData(np.full(T, 10.0), np.zeros(T), np.ones(T), [1.0, 2.0, 3.0, 4.0, 6.0], 0.5)
        path = ProfilePath(ParamGrid([0.0, 20.0]), [[0.0], [-10.0]], np.zeros((2, 1, 1)))
        with pytest.raises(np.linalg.LinAlgError, match="grid point 0"):
            qiv_covariance(data, path, KernelSpec.uniform(1.0))


class TestCrossModule:
    def test_sandwich_reproduces_plugin_covariance(self):
        data = make_data(11, T=200, p=2, k=3)
        grid = ParamGrid(np.linspace(0, 2, 6), 2)
        spec = KernelSpec.gaussian()
        path = profile(data, grid, spec)
        long_field = iid_covariance(qiv_long_panel(data, path, spec), center=False)
        via_sandwich = concentrated_covariance(long_field, path)
        np.testing.assert_allclose(via_sandwich.matrix, qiv_covariance(data, path, spec).matrix, atol=1e-12)

    def test_generic_concentration_matches_direct(self):
        data = make_data(12, T=80, p=2, k=3)
        grid = ParamGrid(np.linspace(0, 2, 5), 1)
        path = profile(data, grid)

        def contributions(beta, theta):
            eps = data.Y - data.D @ theta - data.C @ beta
            return (data.tau - (eps <= 0))[:, None] * data.Z

        model = LongMomentModel(contributions, data.T, data.k, data.p, data.q)
        np.testing.assert_array_equal(concentrated_moment(model, path).values, concentrated_g(data, path).values)


class TestPipeline:
    def test_determinism(self):
        design = QivSimDesign(pi=0.4, n=300)
        data = gen_qiv_data(design, np.random.default_rng(13))
        grid = ParamGrid(np.round(np.linspace(0, 2, 21), 10), 10)
        a = qiv_pipeline(data, grid, n_draws=200, rng=np.random.default_rng(1), mode="confset")
        b = qiv_pipeline(data, grid, n_draws=200, rng=np.random.default_rng(1), mode="confset")
        np.testing.assert_array_equal(a.accepted, b.accepted)

    def test_several_statistics(self):
        design = QivSimDesign(pi=0.4, n=300)
        data = gen_qiv_data(design, np.random.default_rng(14))
        grid = ParamGrid(np.round(np.linspace(0, 2, 21), 10), 10)
        out = qiv_pipeline(data, grid, n_draws=200, statistic=["s", "k", "jk", "qlr"], rng=0)
        assert set(out) == {"s", "k", "jk", "qlr"}
        assert out["qlr"].statistic <= out["s"].statistic + 1e-12

    def test_bad_mode(self):
        data = make_data(0)
        with pytest.raises(ValueError):
            qiv_pipeline(data, ParamGrid([0.0, 0.5, 1.0]), n_draws=100, mode="nope")

    def test_exogenous_coverage(self):
        design = QivSimDesign(rho=0.0, pi=0.4, n=400)
        scenario = QivScenario(design, ParamGrid(np.round(np.linspace(0.5, 1.5, 21), 10), 10))
        row = size_experiment(scenario, "qlr", n_reps=300, n_draws=300, seed=3)[0]
        assert abs((1 - row.rate) - 0.95) < 3 * np.sqrt(0.05 * 0.95 / 300)


def test_read_csv(tmp_path):
    path = tmp_path / "qiv.csv"
    path.write_text("# comment\ny,d1,c1,z2,z1\n1,0.5,1,3,2\n2,0.1,1,1,5\n0,0.2,1,0,1\n4,1.0,1,2,2\n")
    data = read_qiv_csv(path, tau=0.5)
    np.testing.assert_array_equal(data.Z[0], [2.0, 3.0])
    assert data.C.shape == (4, 1)
    bad = tmp_path / "bad.csv"
    bad.write_text("y,d1,c1\n1,2,3\n")
    with pytest.raises(ValueError, match="z1"):
        read_qiv_csv(bad)
