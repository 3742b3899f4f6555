"""Command-line front end: ``geoalpha {simulate,infer,forecast,backtest,report}``.

Each command writes its tables, figures and a ``<command>.manifest.json``
into ``--out-dir``. The manifest holds the resolved settings, the input
hashes and the hash of every output, and never a timestamp or an absolute
path, so two runs with the same inputs produce identical manifests.

Exit codes: 0 success, 2 usage, 3 data error, 4 numerical failure.
"""

import argparse
import hashlib
import json
import sys
from pathlib import Path

import numpy as np
import pandas as pd
import tomli

from . import __version__, plots
from .curvature import CurvatureConfig, Regime, classify_regimes, curvature_series, majority
from .exceptions import (
    AntipodalPoints,
    ConvergenceFailure,
    DegenerateInput,
    DegenerateNormal,
    GeoAlphaError,
    IllConditioned,
    IllConditionedKernel,
    IngestError,
    InvalidInput,
    MinWindow,
    NumericalBlowup,
    OffManifold,
    ScaleCapExceeded,
    SingularFit,
)
from .fitgeom import fit_geometry
from .forecast import PREDICTORS, ForecastConfig, matched_settings, pipeline_geometry_aware, pipeline_native
from .geometry import Kind, ManifoldSpec
from .markets import BacktestConfig, cbm_prices, load_prices, prices_to_panel, run_backtest, synthetic_prices
from .simulate import CbmConfig, Path3D, ScenarioConfig, build_scenario, simulate_cbm
from .topology import TorusDetectorConfig, sliding_torus_flags

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4

DATA_ERRORS = (IngestError, InvalidInput, MinWindow, DegenerateInput, OffManifold, OSError, pd.errors.ParserError)
NUMERIC_ERRORS = (
    IllConditioned,
    ConvergenceFailure,
    SingularFit,
    IllConditionedKernel,
    NumericalBlowup,
    ScaleCapExceeded,
    DegenerateNormal,
    AntipodalPoints,
    FloatingPointError,
    np.linalg.LinAlgError,
)

# settings that never enter a manifest: they locate files rather than define results
_LOCATION_KEYS = {"out_dir", "config", "command", "func", "path", "prices", "infer_csv", "inputs"}


class UsageError(Exception):
    pass


# -- serialization helpers -----------------------------------------------------------------


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        return float(obj) if np.isfinite(obj) else None
    if isinstance(obj, Path):
        return obj.name
    return obj


def _dump_json(data, path):
    path.write_text(json.dumps(_jsonable(data), indent=2, sort_keys=True, allow_nan=False) + "\n")


def _write_csv(df, path):
    df.to_csv(path, index=False, float_format="%.17g")


def sha256(path):
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


class Run:
    """Collects outputs of one command and writes its manifest."""

    def __init__(self, command, args):
        self.command = command
        self.out = Path(args.out_dir)
        self.out.mkdir(parents=True, exist_ok=True)
        self.settings = {k: v for k, v in sorted(vars(args).items()) if k not in _LOCATION_KEYS}
        self.inputs = {}
        self.outputs = []
        self.extra = {}

    def add_input(self, path, role):
        self.inputs[role] = {"file": Path(path).name, "sha256": sha256(path)}

    def file(self, name):
        self.outputs.append(name)
        return self.out / name

    def finish(self):
        files = [{"file": n, "sha256": sha256(self.out / n)} for n in self.outputs]
        manifest = {
            "command": self.command,
            "tool_version": __version__,
            "seed": self.settings.get("seed"),
            "config": self.settings,
            "inputs": self.inputs,
            "outputs": files,
        } | self.extra
        path = self.out / f"{self.command}.manifest.json"
        _dump_json(manifest, path)
        return path


# -- shared option groups ------------------------------------------------------------------


def _curvature_options(p):
    g = p.add_argument_group("curvature")
    g.add_argument("--curvature-window", choices=("rolling", "expanding"), default="rolling")
    g.add_argument("--curvature-length", type=int, default=60, help="rolling window length")
    g.add_argument("--curvature-m0", type=int, default=30, help="minimum points before a first estimate")
    g.add_argument("--smooth-len", type=int, default=1, help="trailing moving-average length")
    g.add_argument("--alpha", type=float, default=0.0, help="exponential down-weighting of older points")
    g.add_argument("--kappa-pos", type=float, default=0.01)
    g.add_argument("--kappa-neg", type=float, default=0.01)
    g.add_argument("--formula", choices=("graph", "leading"), default="graph")


def _curvature_config(a):
    return CurvatureConfig(
        window=a.curvature_window,
        length=a.curvature_length,
        m0=a.curvature_m0,
        alpha=a.alpha,
        smooth_len=a.smooth_len,
        kappa_pos=a.kappa_pos,
        kappa_neg=a.kappa_neg,
        formula=a.formula,
    )


def _forecast_options(p):
    g = p.add_argument_group("forecast")
    g.add_argument("--predictor", choices=PREDICTORS, default="VAR")
    g.add_argument("--lags", type=int, default=5, help="lag count for RF and GP")
    g.add_argument("--var-order", type=int, default=1)
    g.add_argument("--window", type=int, default=25, help="training window (tangent vectors)")
    g.add_argument("--pca-dim", type=int, default=3)
    g.add_argument("--mode", choices=("velocity", "log"), default="velocity")
    g.add_argument("--n-estimators", type=int, default=100)
    g.add_argument("--gp-noise", type=float, default=1e-4)
    g.add_argument("--m0", type=int, default=30, help="points needed before the first origin")
    g.add_argument("--fit-window", type=int, default=100, help="points used to fit surface parameters")


def _forecast_config(a, source="fixed"):
    return ForecastConfig(
        predictor=a.predictor,
        lags=a.lags,
        var_order=a.var_order,
        window=a.window,
        pca_dim=a.pca_dim,
        geometry_source=source,
        mode=a.mode,
        n_estimators=a.n_estimators,
        gp_noise=a.gp_noise,
        seed=a.seed,
        m0=a.m0,
        fit_window=a.fit_window,
        curvature=_curvature_config(a),
    )


# -- commands ------------------------------------------------------------------------------


def cmd_simulate(a):
    if (a.scenario is None) == (not a.cbm):
        raise UsageError("simulate needs exactly one of --scenario or --cbm")
    run = Run("simulate", a)
    if a.cbm:
        res = simulate_cbm(CbmConfig(n=a.n, rho=a.rho, T=a.length, seed=a.seed))
        levels = pd.DataFrame(res.levels, columns=[f"w{i + 1}" for i in range(a.n)])
        levels.insert(0, "index", np.arange(len(levels)))
        _write_csv(levels, run.file("levels.csv"))
        path = res.path
        run.extra["cbm"] = {
            "eigenvalues": res.eigenvalues,
            "top_eigenvalue_theory": 1 + (a.n - 1) * a.rho,
            "components": res.components,
        }
    else:
        cfg = ScenarioConfig(a.scenario, block_length=a.block_length, total_length=a.length, seed=a.seed)
        path = build_scenario(cfg)
    _write_csv(path.to_frame(), run.file("path.csv"))
    run.extra["path"] = path.manifest()
    if not a.no_plots:
        plots.plot_path(pd.read_csv(run.out / "path.csv", keep_default_na=False), run.file("path.svg"))
    return run


def _read_path(file):
    return Path3D.from_csv(file)


def _k_summary(K):
    k = K[np.isfinite(K)]
    if not len(k):
        return {"n": 0}
    q = np.quantile(k, [0.05, 0.25, 0.5, 0.75, 0.95])
    return {"n": int(len(k)), "mean": k.mean(), "sd": k.std(ddof=1) if len(k) > 1 else 0.0,
            "quantiles": dict(zip(["q05", "q25", "q50", "q75", "q95"], q))}


def cmd_infer(a):
    if not a.path:
        raise UsageError("infer needs --path")
    run = Run("infer", a)
    run.add_input(a.path, "path")
    path = _read_path(a.path)
    ccfg = _curvature_config(a)
    cs = curvature_series(path, ccfg)
    flags = None
    det = {"enabled": False}
    if not a.no_torus and len(path) >= a.det_window:
        dcfg = TorusDetectorConfig(
            window=a.det_window,
            stride=a.det_stride,
            m=a.embed_dim,
            tau=a.embed_tau,
            rho_star=a.rho_star,
            epsilon=a.epsilon,
            n_surrogates=a.surrogates,
            null_method=None if a.surrogates == 0 else "phase",
            seed=a.seed,
        )
        tf = sliding_torus_flags(path, dcfg)
        flags = tf.flags
        det = {
            "enabled": True,
            "n_windows": len(tf.results),
            "flag_rate": float(tf.window_flags.mean()),
            "null_q95": None if tf.null is None else tf.null.q95,
        }
    elif not a.no_torus:
        det = {"enabled": False, "reason": f"path shorter than detector window {a.det_window}"}
    reg = classify_regimes(cs.K, flags, a.kappa_pos, a.kappa_neg)
    df = cs.to_frame()
    df["torus_flag"] = np.nan if flags is None else flags
    df["regime"] = reg.to_list()
    csv_df = pd.read_csv(a.path, keep_default_na=False)
    if "label" in csv_df and (csv_df["label"] != "").any():
        df["label"] = csv_df["label"].to_numpy()
    _write_csv(df, run.file("curvature.csv"))
    defined = [r for r in reg.labels if r is not None]
    summary = {
        "K": _k_summary(cs.K),
        "regime_shares": reg.shares,
        "majority": majority(reg).value if defined else None,
        "torus_detector": det,
        "skipped_fits": len(cs.skipped),
    }
    if "label" in df:
        summary["regime_shares_by_label"] = {
            lab: {r.value: float(np.mean(g["regime"] == r.value)) for r in Regime}
            for lab, g in df[df["regime"].notna()].groupby("label", sort=True)
        }
    _dump_json(summary, run.file("infer_summary.json"))
    if not a.no_plots:
        back = pd.read_csv(run.out / "curvature.csv")
        plots.plot_curvature(back, run.file("curvature.svg"), a.kappa_pos, a.kappa_neg)
    return run


def cmd_forecast(a):
    if not a.path:
        raise UsageError("forecast needs --path")
    run = Run("forecast", a)
    run.add_input(a.path, "path")
    path = _read_path(a.path)
    X = path.points
    metrics = {}
    results = {}
    if a.arm in ("both", "geometry"):
        torus_flags = None
        if a.infer_csv:
            run.add_input(a.infer_csv, "infer")
            inf = pd.read_csv(a.infer_csv)
            if len(inf) != len(X):
                raise InvalidInput("inference table does not align with the path")
            torus_flags = inf["torus_flag"].to_numpy(float)
        if a.geometry == "inferred":
            cfg = _forecast_config(a, "inferred")
            results["geometry"] = pipeline_geometry_aware(X, cfg=cfg, torus_flags=torus_flags)
            metrics["geometry_spec"] = "inferred per origin"
        else:
            cfg = _forecast_config(a)
            kind = Kind(a.geometry)
            spec = ManifoldSpec.euclidean() if kind is Kind.EUCLIDEAN3 else fit_geometry(X[: a.fit_window], kind).spec
            if spec is None:
                raise IllConditioned(f"{a.geometry} fit on the first {a.fit_window} points gave no valid surface")
            results["geometry"] = pipeline_geometry_aware(X, spec, cfg)
            metrics["geometry_spec"] = spec.to_dict()
    if a.arm in ("both", "native"):
        results["native"] = pipeline_native(X, _forecast_config(a))
    for arm, res in results.items():
        _write_csv(res.to_frame(), run.file(f"forecast_{arm}.csv"))
        metrics[arm] = res.metrics() | {"gaps": res.gaps}
    if len(results) == 2:
        g, n = results["geometry"], results["native"]
        metrics["matched"] = matched_settings(g, n)
        if np.array_equal(g.index, n.index):
            metrics["max_abs_difference"] = float(np.max(np.abs(g.predicted - n.predicted))) if len(g.index) else 0.0
    _dump_json(metrics, run.file("forecast_metrics.json"))
    if not a.no_plots:
        frames = {arm: pd.read_csv(run.out / f"forecast_{arm}.csv") for arm in results}
        plots.plot_forecast_errors(frames, run.file("forecast_errors.svg"))
    return run


def cmd_backtest(a):
    sources = [bool(a.prices), a.synthetic, a.cbm]
    if sum(sources) != 1:
        raise UsageError("backtest needs exactly one of --prices, --synthetic or --cbm")
    run = Run("backtest", a)
    if a.prices:
        run.add_input(a.prices, "prices")
        panel = load_prices(a.prices, a.policy)
    else:
        if a.synthetic:
            prices = synthetic_prices(a.n_assets, a.days, seed=a.seed)
        else:
            prices = cbm_prices(a.n_assets, a.rho, a.days, seed=a.seed)
        out = prices.rename_axis("date").reset_index()
        out["date"] = out["date"].dt.strftime("%Y-%m-%d")
        _write_csv(out, run.file("prices.csv"))
        panel = prices_to_panel(prices, a.policy)
    cfg = BacktestConfig(
        t0=a.t0,
        k=a.k,
        standardize=not a.no_standardize,
        vol_window=a.vol_window,
        rp_window=a.rp_window,
        calibration=a.calibration,
        geometries=tuple(g.strip() for g in a.geometries.split(",") if g.strip()),
        forecast=_forecast_config(a),
        curvature=_curvature_config(a),
        oracle=a.oracle,
    )
    rep = run_backtest(panel, cfg)
    series = rep.series.rename_axis("date").reset_index()
    series["date"] = pd.to_datetime(series["date"]).dt.strftime("%Y-%m-%d")
    _write_csv(series, run.file("backtest_series.csv"))
    eig = rep.eigen.to_frame().rename_axis("date").reset_index()
    eig["date"] = pd.to_datetime(eig["date"]).dt.strftime("%Y-%m-%d")
    _write_csv(eig, run.file("eigen_path.csv"))
    summary = dict(rep.summary)
    summary["panel"] = panel.manifest()
    summary["regime_shares"] = classify_regimes(rep.series["K"].to_numpy(), None, a.kappa_pos, a.kappa_neg).shares
    _dump_json(summary, run.file("backtest_report.json"))
    if not a.no_plots:
        plots.plot_backtest(pd.read_csv(run.out / "backtest_series.csv"), run.file("backtest.svg"))
    return run


def cmd_report(a):
    dirs = [Path(d) for d in (a.inputs or [a.out_dir])]
    run = Run("report", a)
    sections = {}
    for d in dirs:
        for mpath in sorted(d.glob("*.manifest.json")):
            if mpath.name == "report.manifest.json":
                continue
            m = json.loads(mpath.read_text())
            for f in m["outputs"]:
                if sha256(d / f["file"]) != f["sha256"]:
                    raise InvalidInput(f"{d / f['file']} does not match its manifest hash")
            run.add_input(mpath, m["command"])
            sections[m["command"]] = (d, m)
    if not sections:
        raise InvalidInput("no manifests found in the report inputs")
    report = {"commands": sorted(sections)}
    lines = ["# geoalpha report", ""]
    for cmd in ("simulate", "infer", "forecast", "backtest"):
        if cmd not in sections:
            continue
        d, m = sections[cmd]
        lines.append(f"## {cmd}")
        if cmd == "simulate":
            info = m.get("path", {})
            report[cmd] = {"n_points": info.get("n_points"), "blocks": info.get("meta", {}).get("blocks")}
            lines.append(f"- points: {info.get('n_points')}")
            df = pd.read_csv(d / "path.csv", keep_default_na=False)
            plots.plot_path(df, run.file("report_path.svg"))
        elif cmd == "infer":
            s = json.loads((d / "infer_summary.json").read_text())
            report[cmd] = s
            lines.append(f"- majority regime: {s['majority']}")
            for r, v in sorted(s["regime_shares"].items()):
                lines.append(f"- share {r}: {v:.3f}")
            kk = s["K"]
            if kk.get("n"):
                lines.append(f"- K mean {kk['mean']:.4g}, sd {kk['sd']:.4g}, median {kk['quantiles']['q50']:.4g}")
            cfg = m["config"]
            plots.plot_curvature(pd.read_csv(d / "curvature.csv"), run.file("report_curvature.svg"),
                                 cfg["kappa_pos"], cfg["kappa_neg"])
        elif cmd == "forecast":
            s = json.loads((d / "forecast_metrics.json").read_text())
            report[cmd] = s
            frames = {}
            for arm in ("geometry", "native"):
                if arm in s:
                    c = s[arm]["coordinates"]
                    rmse = ", ".join(f"{k}={_fmt(v['RMSE'])}" for k, v in sorted(c.items()))
                    lines.append(f"- {arm}: {s[arm]['n_forecasts']} forecasts, RMSE {rmse}")
                    frames[arm] = pd.read_csv(d / f"forecast_{arm}.csv")
            plots.plot_forecast_errors(frames, run.file("report_forecast_errors.svg"))
        else:
            s = json.loads((d / "backtest_report.json").read_text())
            report[cmd] = {"runs": s["runs"], "gated": s["gated"], "benchmarks": s["benchmarks"], "flags": s["flags"]}
            for name, r in sorted(s["runs"].items()):
                lines.append(f"- {name}: Sharpe (mean of sleeves) {_fmt(r['total_mean'])}")
            lines.append(f"- LO {_fmt(s['benchmarks']['LO'])}, RP {_fmt(s['benchmarks']['RP'])}")
            plots.plot_backtest(pd.read_csv(d / "backtest_series.csv"), run.file("report_backtest.svg"))
        lines.append("")
    _dump_json(report, run.file("report.json"))
    run.file("report.md").write_text("\n".join(lines))
    return run


def _fmt(v):
    return "n/a" if v is None else f"{v:.4g}"


# -- parser --------------------------------------------------------------------------------


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--out-dir", default=".", help="directory for all outputs")
    common.add_argument("--config", help="TOML file whose keys mirror the flags (flags win)")
    common.add_argument("--no-plots", action="store_true", help="skip SVG output")

    parser = argparse.ArgumentParser(prog="geoalpha", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", parents=[common], help="simulate a scenario path or a correlated Brownian panel")
    p.add_argument("--scenario", type=int, choices=range(1, 8), metavar="1..7")
    p.add_argument("--cbm", action="store_true", help="equicorrelated Brownian motion and its 3-D projection")
    p.add_argument("--length", type=int, default=5000)
    p.add_argument("--block-length", type=int, default=500)
    p.add_argument("--n", type=int, default=10, help="CBM dimension")
    p.add_argument("--rho", type=float, default=0.9, help="CBM equicorrelation")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("infer", parents=[common], help="curvature regimes and torus flags of a path")
    p.add_argument("--path", help="path CSV with x, y, z columns")
    _curvature_options(p)
    g = p.add_argument_group("torus detector")
    g.add_argument("--no-torus", action="store_true")
    g.add_argument("--det-window", type=int, default=1000)
    g.add_argument("--det-stride", type=int, default=50)
    g.add_argument("--embed-dim", type=int, default=1)
    g.add_argument("--embed-tau", type=int, default=1)
    g.add_argument("--rho-star", type=float, default=0.5)
    g.add_argument("--epsilon", type=float, default=None, help="fixed persistence threshold")
    g.add_argument("--surrogates", type=int, default=40, help="phase-randomized surrogates (0 disables the null)")
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("forecast", parents=[common], help="geometry-aware and native one-step forecasts")
    p.add_argument("--path")
    p.add_argument("--arm", choices=("both", "geometry", "native"), default="both")
    p.add_argument("--geometry", choices=("inferred",) + tuple(k.value for k in Kind), default="inferred")
    p.add_argument("--infer-csv", help="curvature.csv from infer, supplies torus flags")
    _forecast_options(p)
    _curvature_options(p)
    p.set_defaults(func=cmd_forecast)

    p = sub.add_parser("backtest", parents=[common], help="eigenportfolio backtest")
    p.add_argument("--prices", help="price CSV: a date column then one column per ticker")
    p.add_argument("--synthetic", action="store_true", help="use a seeded factor-model panel")
    p.add_argument("--cbm", action="store_true", help="use a seeded equicorrelated panel")
    p.add_argument("--n-assets", type=int, default=5)
    p.add_argument("--days", type=int, default=1000)
    p.add_argument("--rho", type=float, default=0.6)
    p.add_argument("--policy", choices=("drop", "ffill"), default="drop")
    p.add_argument("--t0", type=int, default=252)
    p.add_argument("--k", type=int, default=3)
    p.add_argument("--no-standardize", action="store_true")
    p.add_argument("--vol-window", type=int, default=500)
    p.add_argument("--rp-window", type=int, default=252)
    p.add_argument("--calibration", type=int, default=100)
    p.add_argument("--geometries", default="Euclidean3,Sphere,Torus,Hyperboloid")
    p.add_argument("--oracle", choices=("perfect", "anti"), default=None)
    _forecast_options(p)
    _curvature_options(p)
    p.set_defaults(func=cmd_backtest)

    p = sub.add_parser("report", parents=[common], help="collect earlier runs into one report")
    p.add_argument("--inputs", nargs="+", help="run directories (default: --out-dir)")
    p.set_defaults(func=cmd_report)
    return parser, sub


def _apply_config(parser, sub, argv, args):
    try:
        data = tomli.loads(Path(args.config).read_text())
    except tomli.TOMLDecodeError as exc:
        raise UsageError(f"config file is not valid TOML: {exc}") from exc
    sp = sub.choices[args.command]
    known = {a.dest for a in sp._actions} - {"help", "config"}
    values = {k: v for k, v in data.items() if not isinstance(v, dict)}
    values.update(data.get(args.command, {}))
    values = {k.replace("-", "_"): v for k, v in values.items()}
    unknown = sorted(set(values) - known)
    if unknown:
        raise UsageError(f"unknown config keys for {args.command}: {', '.join(unknown)}")
    sp.set_defaults(**values)
    return parser.parse_args(argv)


def main(argv=None):
    parser, sub = build_parser()
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else EXIT_USAGE
    try:
        if args.config:
            args = _apply_config(parser, sub, argv, args)
        run = args.func(args)
        manifest = run.finish()
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"geoalpha: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except NUMERIC_ERRORS as exc:
        print(f"geoalpha: numerical failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (*DATA_ERRORS, KeyError, ValueError) as exc:
        print(f"geoalpha: data error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_DATA
    except GeoAlphaError as exc:
        print(f"geoalpha: numerical failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    print(manifest)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
