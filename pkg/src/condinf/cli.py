"""Command-line interface.

Every command writes its outputs into ``--out`` (default ``condinf_out``):
result CSVs carrying a ``# config-hash=<sha256>`` line, a summary JSON where
applicable, and ``effective_config.json`` with the merged configuration.
Settings resolve as command-line flags, then the ``--config`` file (JSON or
TOML), then built-in defaults.

Exit status is 0 on success, 2 on invalid input and 3 on numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import os
import sys
from importlib import resources
from pathlib import Path

import numpy as np

from .core import ParamGrid
from .gmm import DEFAULT_BOX, EulerData, euler_confset, euler_gamma_confset
from .montecarlo import (
    QivScenario,
    QivSimDesign,
    StrongIdDesign,
    default_qiv_grid,
    power_curve,
    size_experiment,
    strong_id_experiment,
    write_rows,
)
from .quantile_iv import QIV_K_STEP, KernelSpec, QuantileFitError, qiv_pipeline, read_qiv_csv

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

DEFAULTS = {
    "statistic": "qlr",
    "statistics": None,
    "alpha": 0.05,
    "draws": 1000,
    "seed": 0,
    "out": "condinf_out",
    "model": "euler",
    "data": None,
    "grid": None,
    "null": None,
    "hac_lags": 1,
    "alpha_k": 0.04,
    "alpha_j": 0.01,
    "k_step": None,
    "kernel": "gaussian",
    "bandwidth": None,
    "tau": 0.5,
    "reps": 2000,
    "pi": None,
    "rho": 0.25,
    "n": 1000,
    "k": 5,
    "gammas": [1.0, 1.0, 1.0, 1.0],
    "margins": "uniform",
    "alternatives": None,
    "q": 1,
    "scale": 50.0,
    "profile": None,
    "gamma_grid": None,
}

COMMAND_DEFAULTS = {
    "euler": {"alpha": 0.10, "statistics": ["s", "k", "jk", "qlr"]},
    "confset": {"alpha": 0.10},
    "simulate-size": {"pi": [0.02, 0.1, 0.4], "statistics": ["s", "k", "jk", "qlr"]},
    "simulate-power": {"pi": [0.4], "reps": 1000, "statistics": ["s", "k", "jk", "qlr"]},
    "qiv": {"statistics": ["s", "k", "jk", "qlr"]},
}


class ConfigError(ValueError):
    """Invalid configuration; maps to exit status 2."""


# -- configuration --------------------------------------------------------------------


def _load_config_file(path) -> dict:
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"config: file not found: {path}")
    try:
        if p.suffix.lower() == ".toml":
            with open(p, "rb") as fh:
                cfg = tomllib.load(fh)
        else:
            cfg = json.loads(p.read_text())
    except (ValueError, tomllib.TOMLDecodeError) as exc:
        raise ConfigError(f"config: cannot parse {path}: {exc}") from None
    if not isinstance(cfg, dict):
        raise ConfigError("config: top level must be a mapping")
    cfg = {k.replace("-", "_"): v for k, v in cfg.items()}
    unknown = sorted(set(cfg) - set(DEFAULTS) - {"threads"})
    if unknown:
        raise ConfigError(f"config: unknown field(s) {unknown}")
    return cfg


def _threads(flag) -> int:
    if flag is not None:
        n = flag
    elif os.environ.get("CONDINF_THREADS"):
        try:
            n = int(os.environ["CONDINF_THREADS"])
        except ValueError:
            raise ConfigError("threads: CONDINF_THREADS must be an integer") from None
    else:
        n = os.cpu_count() or 1
    if n < 1:
        raise ConfigError(f"threads: must be at least 1, got {n}")
    return int(n)


def effective_config(args: argparse.Namespace) -> dict:
    """Merge defaults < config file < flags and validate."""
    cfg = dict(DEFAULTS)
    cfg.update(COMMAND_DEFAULTS.get(args.command, {}))
    if args.config:
        cfg.update(_load_config_file(args.config))
    for key in DEFAULTS:
        val = getattr(args, key, None)
        if val is not None:
            cfg[key] = val
    cfg.pop("threads", None)
    cfg["command"] = args.command
    _validate(cfg)
    return cfg


def _validate(cfg):
    a = cfg["alpha"]
    if not isinstance(a, (int, float)) or not 0 < a < 1:
        raise ConfigError(f"alpha: must lie in (0, 1), got {a}")
    if not isinstance(cfg["draws"], int) or cfg["draws"] < 100:
        raise ConfigError(f"draws: must be an integer >= 100, got {cfg['draws']}")
    if not isinstance(cfg["seed"], int) or not 0 <= cfg["seed"] < 2**64:
        raise ConfigError(f"seed: must be a 64-bit nonnegative integer, got {cfg['seed']}")
    if not isinstance(cfg["reps"], int) or cfg["reps"] < 1:
        raise ConfigError(f"reps: must be a positive integer, got {cfg['reps']}")
    if not 0 < cfg["tau"] < 1:
        raise ConfigError(f"tau: must lie in (0, 1), got {cfg['tau']}")
    if not isinstance(cfg["hac_lags"], int) or cfg["hac_lags"] < 0:
        raise ConfigError(f"hac_lags: must be a nonnegative integer, got {cfg['hac_lags']}")
    if not (0 < cfg["alpha_k"] < 1 and 0 <= cfg["alpha_j"] < 1):
        raise ConfigError("alpha_k/alpha_j: must lie in (0, 1)")
    if cfg["bandwidth"] is not None and not cfg["bandwidth"] > 0:
        raise ConfigError(f"bandwidth: must be positive, got {cfg['bandwidth']}")
    names = {"qlr", "s", "ar", "k", "jk"}
    for s in [cfg["statistic"], *(cfg["statistics"] or [])]:
        if s.lower() not in names:
            raise ConfigError(f"statistic: unknown name {s!r}; choose from {sorted(names)}")
    if cfg["model"] not in ("euler", "qiv"):
        raise ConfigError(f"model: must be 'euler' or 'qiv', got {cfg['model']!r}")
    if cfg["profile"] not in (None, "constant", "cue"):
        raise ConfigError(f"profile: must be 'constant' or 'cue', got {cfg['profile']!r}")


def config_hash(cfg: dict) -> str:
    """SHA-256 of the settings; the output directory does not enter the hash."""
    cfg = {k: v for k, v in cfg.items() if k != "out"}
    blob = json.dumps(cfg, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(blob.encode()).hexdigest()


def parse_grid(spec: str) -> list[np.ndarray]:
    """``"a:b:n,c:d:m"`` -> one linspace axis per comma-separated coordinate."""
    axes = []
    for part in str(spec).split(","):
        bits = part.strip().split(":")
        try:
            if len(bits) == 3:
                lo, hi, n = float(bits[0]), float(bits[1]), int(bits[2])
                if n < 1 or (n > 1 and not hi > lo):
                    raise ValueError
                axes.append(np.linspace(lo, hi, n))
            elif len(bits) == 1:
                axes.append(np.array([float(bits[0])]))
            else:
                raise ValueError
        except ValueError:
            raise ConfigError(f"grid: cannot parse {part!r}; expected start:stop:num") from None
    if not axes:
        raise ConfigError("grid: empty specification")
    return axes


def _parse_floats(spec, name) -> np.ndarray:
    if isinstance(spec, (list, tuple)):
        return np.asarray(spec, dtype=float)
    text = str(spec)
    try:
        if text.count(":") == 2:
            lo, hi, step = (float(b) for b in text.split(":"))
            if not step > 0 or hi < lo:
                raise ValueError
            return np.round(np.arange(lo, hi + step / 2, step), 10)
        return np.array([float(v) for v in text.split(",")])
    except ValueError:
        raise ConfigError(f"{name}: cannot parse {spec!r}") from None


# -- outputs --------------------------------------------------------------------------


class Output:
    def __init__(self, cfg):
        self.dir = Path(cfg["out"])
        self.dir.mkdir(parents=True, exist_ok=True)
        self.hash = config_hash(cfg)
        (self.dir / "effective_config.json").write_text(json.dumps(cfg, indent=2, sort_keys=True, default=str) + "\n")

    @property
    def header(self):
        return [f"config-hash={self.hash}"]

    def path(self, name) -> Path:
        return self.dir / name

    def write_csv(self, name, columns, rows) -> Path:
        p = self.path(name)
        with open(p, "w", newline="") as fh:
            fh.write(f"# config-hash={self.hash}\n")
            w = csv.writer(fh)
            w.writerow(columns)
            w.writerows(rows)
        return p

    def write_json(self, name, obj) -> Path:
        p = self.path(name)
        p.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")
        return p


def _fmt(v):
    if isinstance(v, (bool, np.bool_)):
        return int(v)
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return v


# -- data -----------------------------------------------------------------------------


def _packaged(name) -> Path:
    return Path(str(resources.files("condinf") / "data" / name))


def _load_euler(cfg) -> EulerData:
    path = cfg["data"] or _packaged("euler_synthetic.csv")
    if not Path(path).is_file():
        raise ConfigError(f"data: file not found: {path}")
    return EulerData.from_csv(path)


def _load_qiv(cfg):
    if not cfg["data"]:
        raise ConfigError("data: the qiv model needs --data (columns y, d1.., c1.., z1..)")
    if not Path(cfg["data"]).is_file():
        raise ConfigError(f"data: file not found: {cfg['data']}")
    return read_qiv_csv(cfg["data"], cfg["tau"])


def _euler_grid(cfg, null=None) -> ParamGrid:
    if cfg["grid"]:
        axes = parse_grid(cfg["grid"])
    else:
        (d0, d1), (g0, g1) = DEFAULT_BOX
        axes = [np.linspace(d0, d1, 26), np.linspace(g0, g1, 34)]
    if len(axes) != 2:
        raise ConfigError("grid: the Euler model needs two coordinates (delta, gamma)")
    return ParamGrid.from_axes(axes, null)


def _qiv_grid(cfg, data, null=None) -> ParamGrid:
    if cfg["grid"]:
        axes = parse_grid(cfg["grid"])
        if len(axes) != data.q:
            raise ConfigError(f"grid: need {data.q} coordinate(s) for the endogenous regressors")
        return ParamGrid.from_axes(axes, null)
    if data.q != 1:
        raise ConfigError("grid: must be given when there is more than one endogenous regressor")
    return default_qiv_grid(1.0 if null is None else float(np.ravel(null)[0]))


def _stat_options(cfg, model):
    step = cfg["k_step"]
    if step is None and model == "qiv":
        step = QIV_K_STEP
    return {"alpha_k": cfg["alpha_k"], "alpha_j": cfg["alpha_j"], "step": step}


def _stat_obj(name, cfg, model):
    from .stats import get_statistic

    return get_statistic(name, **_stat_options(cfg, model))


def _spec(cfg):
    return KernelSpec.from_name(cfg["kernel"], cfg["bandwidth"])


# -- commands -------------------------------------------------------------------------


def cmd_test(cfg, out, threads):
    if cfg["null"] is None:
        raise ConfigError("null: a hypothesized value is required (e.g. --null 0.97,1.3)")
    null = _parse_floats(cfg["null"], "null")
    rng = np.random.default_rng(cfg["seed"])
    name = cfg["statistic"]
    if cfg["model"] == "euler":
        from .condcrit import conditional_test
        from .covest import newey_west
        from .gmm import build_moment_process, euler_panel

        data = _load_euler(cfg)
        grid = _euler_grid(cfg, null)
        panel = euler_panel(data, grid)
        res = conditional_test(build_moment_process(panel), newey_west(panel, cfg["hac_lags"]),
                               _stat_obj(name, cfg, "euler"), cfg["alpha"], cfg["draws"], rng)
    else:
        data = _load_qiv(cfg)
        grid = _qiv_grid(cfg, data, null)
        res = qiv_pipeline(data, grid, cfg["alpha"], cfg["draws"], _stat_obj(name, cfg, "qiv"), rng, spec=_spec(cfg))
    out.write_csv("test.csv", ["statistic", "value", "critical_value", "p_value", "reject", "flags"],
                  [[name, _fmt(res.statistic), _fmt(res.critical_value), _fmt(res.p_value), int(res.reject),
                    ";".join(res.flags)]])
    decision = "reject" if res.reject else "accept"
    return f"{name}: statistic={res.statistic:.4f} critical_value={res.critical_value:.4f} p={res.p_value:.4f} {decision}"


def _confset_rows(grid, sets):
    rows = []
    for name, cs in sets.items():
        for pt, acc in zip(grid.points, cs.accepted):
            rows.append([name, *(_fmt(v) for v in pt), int(acc)])
    return rows


def _confset_summary(sets, level):
    return {"level": level, "area_fraction": {n: cs.fraction for n, cs in sets.items()},
            "failed_points": {n: len(cs.flags) for n, cs in sets.items()}}


def cmd_confset(cfg, out, threads):
    rng_seed = cfg["seed"]
    name = cfg["statistic"]
    if cfg["model"] == "euler":
        data = _load_euler(cfg)
        grid = _euler_grid(cfg)
        cs = euler_confset(data, grid, cfg["alpha"], cfg["draws"], _stat_obj(name, cfg, "euler"), cfg["hac_lags"],
                           rng=np.random.default_rng(rng_seed))
        cols = ["delta", "gamma", "accepted"]
    else:
        data = _load_qiv(cfg)
        grid = _qiv_grid(cfg, data)
        cs = qiv_pipeline(data, grid, cfg["alpha"], cfg["draws"], _stat_obj(name, cfg, "qiv"),
                          np.random.default_rng(rng_seed), mode="confset", spec=_spec(cfg))
        cols = [f"theta_{j + 1}" for j in range(grid.q)] + ["accepted"]
    p = out.write_csv("confset.csv", cols, [[*(_fmt(v) for v in pt), int(a)] for pt, a in zip(grid.points, cs.accepted)])
    out.write_json("summary.json", {"statistic": name, **_confset_summary({name: cs}, 1 - cfg["alpha"])})
    return f"{name}: {int(cs.accepted.sum())}/{grid.size} grid points accepted ({100 * cs.fraction:.2f}%) -> {p}"


def cmd_euler(cfg, out, threads):
    data = _load_euler(cfg)
    names = cfg["statistics"] or [cfg["statistic"]]
    if cfg["profile"]:
        gammas = _parse_floats(cfg["gamma_grid"] or "-6:60:1", "gamma_grid")
        sets = {}
        for i, n in enumerate(names):
            sets[n] = euler_gamma_confset(data, gammas, cfg["alpha"], cfg["draws"], _stat_obj(n, cfg, "euler"),
                                          cfg["profile"], cfg["hac_lags"], rng=np.random.default_rng([cfg["seed"], i]))
        grid = next(iter(sets.values())).grid
        cols = ["statistic", "gamma", "accepted"]
        fname = "euler_gamma_confsets.csv"
    else:
        grid = _euler_grid(cfg)
        sets = {}
        for i, n in enumerate(names):
            sets[n] = euler_confset(data, grid, cfg["alpha"], cfg["draws"], _stat_obj(n, cfg, "euler"), cfg["hac_lags"],
                                    rng=np.random.default_rng([cfg["seed"], i]))
        cols = ["statistic", "delta", "gamma", "accepted"]
        fname = "euler_confsets.csv"
    p = out.write_csv(fname, cols, _confset_rows(grid, sets))
    out.write_json("summary.json", _confset_summary(sets, 1 - cfg["alpha"]))
    areas = " ".join(f"{n}={100 * cs.fraction:.2f}%" for n, cs in sets.items())
    return f"area fractions: {areas} -> {p}"


def cmd_qiv(cfg, out, threads):
    data = _load_qiv(cfg)
    names = cfg["statistics"] or [cfg["statistic"]]
    grid = _qiv_grid(cfg, data)
    sets = {n: qiv_pipeline(data, grid, cfg["alpha"], cfg["draws"], _stat_obj(n, cfg, "qiv"),
                            np.random.default_rng([cfg["seed"], i]), mode="confset", spec=_spec(cfg))
            for i, n in enumerate(names)}
    cols = ["statistic", *(f"theta_{j + 1}" for j in range(grid.q)), "accepted"]
    p = out.write_csv("qiv_confsets.csv", cols, _confset_rows(grid, sets))
    out.write_json("summary.json", _confset_summary(sets, 1 - cfg["alpha"]))
    areas = " ".join(f"{n}={100 * cs.fraction:.2f}%" for n, cs in sets.items())
    return f"accepted fractions: {areas} -> {p}"


def _designs(cfg):
    for pi in np.atleast_1d(_parse_floats(cfg["pi"], "pi")):
        try:
            yield QivSimDesign(cfg["rho"], float(pi), tuple(cfg["gammas"]), cfg["n"], cfg["k"], cfg["tau"], cfg["margins"])
        except ValueError as exc:
            raise ConfigError(f"design: {exc}") from None


def cmd_simulate_size(cfg, out, threads):
    names = cfg["statistics"] or [cfg["statistic"]]
    rows = []
    for d in _designs(cfg):
        sc = QivScenario(d, spec=_spec(cfg), k_step=cfg["k_step"] or QIV_K_STEP)
        stats = {n: _stat_obj(n, cfg, "qiv") for n in names}
        rows += size_experiment(sc, stats, cfg["alpha"], cfg["reps"], cfg["draws"], cfg["seed"], threads)
    p = out.path("size.csv")
    write_rows(rows, p, out.header)
    qlr = [r for r in rows if r.statistic == "qlr"]
    tail = " ".join(f"pi={r.params['pi']}:{100 * r.rate:.2f}%" for r in qlr) if qlr else ""
    return f"size table -> {p} {tail}".rstrip()


def cmd_simulate_power(cfg, out, threads):
    names = cfg["statistics"] or [cfg["statistic"]]
    rows = []
    for d in _designs(cfg):
        sc = QivScenario(d, spec=_spec(cfg), k_step=cfg["k_step"] or QIV_K_STEP)
        alts = _parse_floats(cfg["alternatives"] or "0:2:0.1", "alternatives")
        on_grid = [a for a in alts if np.any(np.abs(sc.grid.points[:, 0] - a) <= 1e-9)]
        if len(on_grid) != len(alts):
            raise ConfigError("alternatives: every alternative must be a grid point")
        stats = {n: _stat_obj(n, cfg, "qiv") for n in names}
        rows += power_curve(sc, stats, cfg["alpha"], alts, cfg["reps"], cfg["draws"], cfg["seed"], threads)
    p = out.path("power.csv")
    write_rows(rows, p, out.header)
    return f"power curves ({len(rows)} rows) -> {p}"


def cmd_strong_id(cfg, out, threads):
    q = cfg["q"]
    if q not in (1, 2):
        raise ConfigError(f"q: must be 1 or 2, got {q}")
    slope = np.array([[1.0, 0.2], [0.5, -0.8], [-0.3, 0.4]])[:, :q]
    res = strong_id_experiment(StrongIdDesign(slope, scale=cfg["scale"]), cfg["reps"], cfg["draws"], cfg["seed"],
                               cfg["alpha"], threads)
    p = out.write_csv("strong_id.csv", ["replication", "qlr", "critical_value"],
                      [[i, _fmt(a), _fmt(b)] for i, (a, b) in enumerate(zip(res["qlr"], res["critical_values"]))])
    summary = {k: v for k, v in res.items() if k not in ("qlr", "critical_values")}
    out.write_json("summary.json", summary)
    return (f"qlr: KS={res['ks_distance']:.4f} (1% crit {res['ks_critical_1pct']:.4f}) "
            f"mean critical value={res['cv_mean']:.4f} vs chi2 {res['chi2_quantile']:.4f} -> {p}")


HANDLERS = {
    "test": cmd_test,
    "confset": cmd_confset,
    "euler": cmd_euler,
    "qiv": cmd_qiv,
    "simulate-size": cmd_simulate_size,
    "simulate-power": cmd_simulate_power,
    "strong-id": cmd_strong_id,
}


# -- parser ---------------------------------------------------------------------------


def _add_common(p):
    p.add_argument("--config", help="JSON or TOML file with default settings")
    p.add_argument("--stat", dest="statistic", help="statistic: qlr, s, k or jk")
    p.add_argument("--stats", dest="statistics", type=lambda s: s.split(","), help="comma-separated statistics")
    p.add_argument("--alpha", type=float, help="nominal level")
    p.add_argument("--draws", type=int, help="critical-value draws")
    p.add_argument("--seed", type=int, help="master seed")
    p.add_argument("--threads", type=int, help="worker processes (default: CONDINF_THREADS or CPU count)")
    p.add_argument("--out", help="output directory")
    p.add_argument("--grid", help="grid as start:stop:num per coordinate, comma separated")
    p.add_argument("--alpha-k", dest="alpha_k", type=float, help="JK level spent on K")
    p.add_argument("--alpha-j", dest="alpha_j", type=float, help="JK level spent on J")
    p.add_argument("--k-step", dest="k_step", type=float, help="K / JK finite-difference half-width")
    p.add_argument("-v", "--verbose", action="store_true")


def _add_data(p):
    p.add_argument("--model", choices=("euler", "qiv"), help="moment model")
    p.add_argument("--data", help="input CSV")
    p.add_argument("--hac-lags", dest="hac_lags", type=int, help="Newey-West lags (Euler)")
    p.add_argument("--tau", type=float, help="quantile (quantile IV)")
    p.add_argument("--kernel", choices=("gaussian", "uniform"), help="Jacobian kernel (quantile IV)")
    p.add_argument("--bandwidth", type=float, help="kernel bandwidth (quantile IV)")


def _add_design(p):
    p.add_argument("--pi", help="identification strength(s), comma separated")
    p.add_argument("--rho", type=float, help="endogeneity")
    p.add_argument("--n", type=int, help="sample size")
    p.add_argument("--k", type=int, help="number of instruments")
    p.add_argument("--tau", type=float, help="quantile")
    p.add_argument("--margins", choices=("uniform", "normal"), help="copula margins of D and Z")
    p.add_argument("--reps", type=int, help="replications")
    p.add_argument("--kernel", choices=("gaussian", "uniform"))
    p.add_argument("--bandwidth", type=float)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="condinf", description="Conditional QLR inference under weak identification.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("test", help="test one hypothesized parameter value")
    _add_common(p)
    _add_data(p)
    p.add_argument("--null", help="hypothesized value, comma separated")

    p = sub.add_parser("confset", help="confidence set by test inversion")
    _add_common(p)
    _add_data(p)

    p = sub.add_parser("euler", help="Euler-equation confidence sets for several statistics")
    _add_common(p)
    p.add_argument("--data", help="CSV with columns consumption, return")
    p.add_argument("--hac-lags", dest="hac_lags", type=int)
    p.add_argument("--profile", choices=("constant", "cue"), help="concentrate delta out and report gamma-only sets")
    p.add_argument("--gamma-grid", dest="gamma_grid", help="gamma values as start:stop:step")

    p = sub.add_parser("qiv", help="quantile-IV confidence sets for several statistics")
    _add_common(p)
    p.add_argument("--data", help="CSV with columns y, d1.., c1.., z1..")
    p.add_argument("--tau", type=float)
    p.add_argument("--kernel", choices=("gaussian", "uniform"))
    p.add_argument("--bandwidth", type=float)

    p = sub.add_parser("simulate-size", help="size of the tests in the quantile-IV design")
    _add_common(p)
    _add_design(p)

    p = sub.add_parser("simulate-power", help="power curves in the quantile-IV design")
    _add_common(p)
    _add_design(p)
    p.add_argument("--alternatives", help="alternatives as start:stop:step or a comma list")

    p = sub.add_parser("strong-id", help="QLR distribution under strong identification")
    _add_common(p)
    p.add_argument("--q", type=int, help="parameter dimension (1 or 2)")
    p.add_argument("--scale", type=float, help="mean-function scale")
    p.add_argument("--reps", type=int)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        threads = _threads(args.threads)
        cfg = effective_config(args)
        out = Output(cfg)
        line = HANDLERS[args.command](cfg, out, threads)
    except (ConfigError, FileNotFoundError) as exc:
        print(f"condinf: error: {exc}", file=sys.stderr)
        return 2
    except ValueError as exc:
        # malformed input data surfaces as ValueError from the domain types
        print(f"condinf: error: {exc}", file=sys.stderr)
        return 2
    except (np.linalg.LinAlgError, FloatingPointError, QuantileFitError) as exc:
        print(f"condinf: numerical failure: {exc}", file=sys.stderr)
        return 3
    print(line)
    return 0


if __name__ == "__main__":
    sys.exit(main())
