"""Acceptance criteria; each test records one PASS/FAIL line for the run summary."""

import time

import numpy as np
import pytest

from condinf.concentrate import LongMomentModel, ProfilePath, concentrated_covariance, concentrated_moment, long_panel
from condinf.condcrit import compute_h, conditional_test, invert_test
from condinf.core import CovarianceField, ParamGrid
from condinf.covest import MomentPanel, iid_covariance, newey_west
from condinf.gmm import build_moment_process, default_euler_grid
from condinf.montecarlo import (
    EulerSimDesign,
    LimitScenario,
    QivScenario,
    QivSimDesign,
    StrongIdDesign,
    euler_experiment,
    gen_qiv_data,
    h_independence,
    limit_designs,
    power_curve,
    size_experiment,
    strong_id_experiment,
)
from condinf.quantile_iv import (
    KernelSpec,
    QuantileIVData,
    check_loss,
    concentrated_g,
    fit_beta,
    profile,
    qiv_covariance,
    qiv_long_panel,
    qr_objective,
)
from condinf.stats import QLR, qlr

from .conftest import random_field, random_process
from .test_cli import COMMANDS, _run
from .test_quantile_iv import grid_oracle, make_data
from .test_stats import brute_qlr

pytestmark = pytest.mark.acceptance

# rejection rates (percent) of the true theta in the quantile-IV size table
SIZE_TARGETS = {
    0.02: {"s": 5.09, "k": 5.64, "jk": 5.27, "qlr": 5.62},
    0.1: {"s": 5.09, "k": 5.46, "jk": 5.43, "qlr": 4.99},
    0.4: {"s": 5.18, "k": 5.17, "jk": 5.46, "qlr": 5.18},
}


def test_c01_exact_identities(criterion):
    start = time.perf_counter()
    rng = np.random.default_rng(0)
    worst_h = worst_rec = worst_qlr = 0.0
    nw_equal = True
    for _ in range(100):
        G, k = int(rng.integers(1, 7)), int(rng.integers(1, 5))
        field = random_field(rng, G, k, null_index=int(rng.integers(G)))
        g = random_process(rng, field)
        h = compute_h(g, field)
        worst_h = max(worst_h, float(np.abs(h.values[g.grid.null_index]).max()))
        rec = h.values + np.einsum("gij,j->gi", h.v_coeffs, g.at_null)
        worst_rec = max(worst_rec, float(np.abs(rec - g.values).max()))
        worst_qlr = max(worst_qlr, abs(qlr(g.at_null, h, field) - brute_qlr(g, field)))
        panel = MomentPanel(g.grid, rng.normal(size=(int(rng.integers(5, 30)), G, k)))
        nw_equal &= np.array_equal(newey_west(panel, 0).matrix, iid_covariance(panel).matrix)
    elapsed = time.perf_counter() - start
    ok = worst_h <= 1e-10 and worst_rec <= 1e-10 and worst_qlr <= 1e-10 and nw_equal and elapsed < 1.0
    criterion(1, ok, f"max|h(theta0)|={worst_h:.1e} reconstruction={worst_rec:.1e} "
                     f"qlr-oracle={worst_qlr:.1e} nw0==iid={nw_equal} time={elapsed:.2f}s")
    assert ok


def test_c02_conditional_similarity(criterion):
    rates = {}
    for name, design in limit_designs().items():
        row = size_experiment(LimitScenario(design), "qlr", 0.05, n_reps=2000, n_draws=1000, seed=2)[0]
        rates[name] = row.rate
    ok = all(0.035 <= r <= 0.065 for r in rates.values())
    criterion(2, ok, " ".join(f"{n}={r:.4f}" for n, r in rates.items()) + " (band [0.035, 0.065])")
    assert ok


def test_c03_independence(criterion):
    design = limit_designs()["hump"]
    corr = h_independence(design, n_draws=10_000, seed=0)
    # g(theta_0) coordinate j against h(theta_i) coordinate j
    matched = np.abs(np.einsum("gjj->gj", corr)).max()
    full = np.abs(corr).max()
    ok = matched <= 0.03
    criterion(3, ok, f"max matched-coordinate |corr|={matched:.4f} (bound 0.03); all coordinate pairs {full:.4f}")
    assert ok


@pytest.mark.parametrize("q", [1, 2])
def test_c04_strong_identification(criterion, q):
    slope = np.array([[1.0, 0.2], [0.5, -0.8], [-0.3, 0.4]])[:, :q]
    out = strong_id_experiment(StrongIdDesign(slope, scale=50.0), n_reps=2000, n_draws=1000, seed=4)
    tol = 0.15 if q == 1 else 0.25
    gap = out["cv_mean"] - out["chi2_quantile"]
    ok = out["ks_distance"] < out["ks_critical_1pct"] and abs(gap) <= tol
    criterion(f"4 (q={q})", ok, f"KS={out['ks_distance']:.4f} < {out['ks_critical_1pct']:.4f}; "
                                f"mean cv={out['cv_mean']:.3f} vs {out['chi2_quantile']:.3f} (tol {tol})")
    assert ok


@pytest.mark.parametrize("pi", sorted(SIZE_TARGETS))
def test_c05_size_table(criterion, pi):
    rows = size_experiment(QivScenario(QivSimDesign(pi=pi)), ["s", "k", "jk", "qlr"], 0.05,
                           n_reps=2000, n_draws=1000, seed=0)
    got = {r.statistic: 100 * r.rate for r in rows}
    diffs = {s: got[s] - SIZE_TARGETS[pi][s] for s in got}
    ok = all(abs(d) <= 2.0 for d in diffs.values()) and rows[0].n_failed == 0
    criterion(f"5 (pi={pi})", ok, " ".join(f"{s}={got[s]:.2f}% (target {SIZE_TARGETS[pi][s]:.2f})" for s in got)
              + f" failed={rows[0].n_failed}")
    assert ok


def test_c06_power_shape(criterion):
    near = [0.9, 0.95, 1.05, 1.1]
    far = [1.5, 2.0, 3.0, 3.5, 4.0, 4.5, 5.0, 6.0, -1.0, -2.0, -4.0]
    rows = power_curve(QivScenario(QivSimDesign(pi=0.4)), ["s", "k", "qlr"], 0.05, near + far,
                       n_reps=1000, n_draws=1000, seed=6)
    power = {}
    for r in rows:
        power.setdefault(r.statistic, {})[round(r.theta, 10)] = r.rate
    qk = max(abs(power["qlr"][a] - power["k"][a]) for a in near)
    ar_gap = max(power["qlr"][a] - power["s"][a] for a in near)
    kp = power["k"]
    dips = [(t1, t2) for t1 in kp for t2 in kp
            if abs(t1 - 1) > abs(t2 - 1) and kp[t1] < kp[t2] - 0.05]
    worst = min(dips, key=lambda p: kp[p[0]] - kp[p[1]]) if dips else None
    ok = qk <= 0.05 and ar_gap >= 0.03 and bool(dips)
    dip_txt = f"K({worst[0]})={kp[worst[0]]:.3f} < K({worst[1]})={kp[worst[1]]:.3f}" if worst else "none"
    criterion(6, ok, f"max near-null |QLR-K|={qk:.3f}; max near-null QLR-AR={ar_gap:.3f}; K dip {dip_txt}")
    assert ok


def test_c07_quantile_regression_oracle(criterion):
    worst = -np.inf
    for seed in range(50):
        p = 1 + seed % 2
        data = make_data(5000 + seed, T=25, p=p, tau=(0.3, 0.5, 0.7)[seed % 3])
        b = fit_beta(data, [0.5])
        fine = grid_oracle(data, [0.5], b, n=2001 if p == 1 else 201)
        worst = max(worst, qr_objective(data, [0.5], b) - fine)
    r = np.random.default_rng(7)
    Y = r.normal(size=31)
    med = QuantileIVData(Y, np.zeros(31), np.ones(31), r.normal(size=31), 0.5)
    med_gap = abs(qr_objective(med, [0.0], fit_beta(med, [0.0])) - check_loss(Y - np.median(Y), 0.5).mean())
    ok = worst <= 1e-8 and med_gap <= 1e-10
    criterion(7, ok, f"max objective excess over grid search={worst:.1e} (50 problems); median gap={med_gap:.1e}")
    assert ok


def test_c08_concentration_plumbing(criterion):
    grid1 = ParamGrid([0.0])
    long1 = CovarianceField(grid1, np.array([[1.0, 0.5], [0.5, 2.0]]), 2)
    sandwich = concentrated_covariance(long1, ProfilePath(grid1, [[0.3]], np.ones((1, 1, 1)))).block(0, 0)[0, 0]
    hand_err = abs(sandwich - 4.0)

    rng = np.random.default_rng(8)
    T, k = 60, 2
    grid = ParamGrid(np.linspace(-1, 1, 5), 2)
    X = rng.normal(size=(T, k))
    model = LongMomentModel(lambda beta, theta: X - theta[0], T, k, 0, 1)
    path = ProfilePath.empty(grid, k)
    panel = MomentPanel(grid, np.stack([X - t for t in grid.points[:, 0]], axis=1))
    g, f = concentrated_moment(model, path), concentrated_covariance(iid_covariance(long_panel(model, path)), path)
    dg, df = build_moment_process(panel), iid_covariance(panel)
    same = (np.array_equal(g.values, dg.values) and np.array_equal(f.matrix, df.matrix)
            and conditional_test(g, f, QLR(), 0.05, 500, np.random.default_rng(1))
            == conditional_test(dg, df, QLR(), 0.05, 500, np.random.default_rng(1))
            and np.array_equal(invert_test(g, f, QLR(), 0.05, 500, np.random.default_rng(2)).accepted,
                               invert_test(dg, df, QLR(), 0.05, 500, np.random.default_rng(2)).accepted))

    data = make_data(12, T=150, p=2, k=3)
    qgrid = ParamGrid(np.linspace(0, 2, 6), 2)
    spec = KernelSpec.gaussian()
    qpath = profile(data, qgrid, spec)

    def contributions(beta, theta):
        eps = data.Y - data.D @ theta - data.C @ beta
        return (data.tau - (eps <= 0))[:, None] * data.Z

    generic = LongMomentModel(contributions, data.T, data.k, data.p, data.q)
    moment_equal = np.array_equal(concentrated_moment(generic, qpath).values, concentrated_g(data, qpath).values)
    via = concentrated_covariance(iid_covariance(qiv_long_panel(data, qpath, spec), center=False), qpath)
    cov_err = float(np.abs(via.matrix - qiv_covariance(data, qpath, spec).matrix).max())
    ok = hand_err <= 1e-12 and same and moment_equal and cov_err <= 1e-12
    criterion(8, ok, f"sandwich error={hand_err:.1e}; p=0 reduction identical={same}; "
                     f"quantile-IV moments identical={moment_equal}; covariance gap={cov_err:.1e}")
    assert ok


def test_c09_euler_synthetic(criterion):
    design = EulerSimDesign(delta=0.97, gamma=1.3, T=400)
    grid = default_euler_grid(21, 23, null_point=[0.97, 1.3])
    out = euler_experiment(design, grid, ("s", "qlr"), 0.10, n_reps=500, n_draws=1000, seed=9, hac_lags=1)
    cov = {s: float(v.mean()) for s, v in out["coverage"].items()}
    smaller = float(np.mean(out["area"]["qlr"] <= out["area"]["s"]))
    ok = all(0.86 <= c <= 0.94 for c in cov.values()) and smaller >= 0.80 and not out["failed"]
    criterion(9, ok, f"coverage S={cov['s']:.3f} QLR={cov['qlr']:.3f} (band [0.86, 0.94]); "
                     f"area(QLR)<=area(S) in {100 * smaller:.1f}% of reps; failed={len(out['failed'])}")
    assert ok


def test_c10_cli_determinism(criterion, tmp_path, capsys):
    data = tmp_path / "qiv.csv"
    d = gen_qiv_data(QivSimDesign(n=120, k=3), np.random.default_rng(0))
    np.savetxt(data, np.column_stack([d.Y, d.D, d.C, d.Z]), delimiter=",", comments="",
               header="y,d1,c1,z1,z2,z3", fmt="%.10g")
    mismatched = []
    for name, args in COMMANDS.items():
        args = list(args) + (["--data", str(data)] if name == "qiv" else [])
        files = []
        for run in ("a", "b"):
            code, _ = _run(args, tmp_path / name / run, capsys)
            if code != 0:
                mismatched.append(f"{name}:exit{code}")
            files.append({p.name: p.read_bytes() for p in (tmp_path / name / run).iterdir()
                          if p.name != "effective_config.json"})
        if files[0] != files[1]:
            mismatched.append(name)
    ok = not mismatched
    criterion(10, ok, f"{len(COMMANDS)} command invocations byte-identical on rerun"
              + (f"; mismatched: {mismatched}" if mismatched else ""))
    assert ok
