"""Price panels, expanding-window eigenportfolios and the directional backtest.

Every quantity dated ``t`` is computed from prices up to ``t``: loadings
from the expanding correlation matrix, standardisation from expanding
moments that lag one day, volatility and eigenvalue weights from trailing
or expanding windows that end at ``t``.
"""

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import pandas as pd

from . import geometry as geo
from ._validation import check_int
from .curvature import CurvatureConfig, curvature_series
from .exceptions import GeoAlphaError, IngestError, InvalidInput, MinWindow
from .fitgeom import fit_geometry
from .forecast import ForecastConfig, pipeline_geometry_aware, pipeline_native
from .geometry import Kind
from .simulate import CbmConfig, simulate_cbm

TRADING_DAYS = 252
VOL_FLOOR = 1e-6


# -- ingest ----------------------------------------------------------------------------------


@dataclass
class ReturnsPanel:
    """Daily log-returns, one column per asset, indexed by strictly increasing dates."""

    returns: pd.DataFrame
    dropped: list = field(default_factory=list)
    policy: str = "drop"

    @property
    def dates(self):
        return self.returns.index

    @property
    def assets(self):
        return list(self.returns.columns)

    def __len__(self):
        return len(self.returns)

    def truncate(self, end):
        """Panel restricted to the first ``end`` return rows."""
        return ReturnsPanel(self.returns.iloc[:end].copy(), list(self.dropped), self.policy)

    def manifest(self):
        return {
            "n_dates": len(self.returns),
            "assets": self.assets,
            "dropped": self.dropped,
            "policy": self.policy,
            "first": str(self.dates[0]) if len(self) else None,
            "last": str(self.dates[-1]) if len(self) else None,
        }


def prices_to_panel(prices, policy="drop"):
    """Log-returns from a price frame (rows dates, columns tickers).

    ``policy="drop"`` removes assets with any missing price;
    ``"ffill"`` carries the last price forward and drops only assets
    whose first price is missing.
    """
    if policy not in ("drop", "ffill"):
        raise InvalidInput("policy must be 'drop' or 'ffill'")
    P = prices.copy()
    idx = pd.Index(P.index)
    if not idx.is_monotonic_increasing or idx.has_duplicates:
        bad = next(i for i in range(1, len(idx)) if not idx[i] > idx[i - 1])
        raise IngestError(f"dates are not strictly increasing at row {bad} ({idx[bad]})")
    P = P.apply(pd.to_numeric, errors="coerce")
    vals = P.to_numpy(float)
    bad = np.argwhere(np.isfinite(vals) & (vals <= 0))
    if len(bad):
        r, c = bad[0]
        raise IngestError(f"non-positive price {vals[r, c]} for {P.columns[c]} at row {r} ({idx[r]})")
    if policy == "drop":
        dropped = [c for c in P.columns if P[c].isna().any()]
    else:
        P = P.ffill()
        dropped = [c for c in P.columns if P[c].isna().any()]
    P = P.drop(columns=dropped)
    if P.shape[1] == 0:
        raise IngestError("no asset has a complete price history")
    R = np.log(P).diff().iloc[1:]
    return ReturnsPanel(R, dropped, policy)


def load_prices(path, policy="drop", date_column=None):
    """Read a price CSV (a date column plus one column per ticker)."""
    try:
        df = pd.read_csv(path)
    except (OSError, pd.errors.ParserError) as exc:
        raise IngestError(f"cannot read {path}: {exc}") from exc
    col = date_column or df.columns[0]
    try:
        df[col] = pd.to_datetime(df[col])
    except (ValueError, TypeError) as exc:
        raise IngestError(f"date column {col!r} does not parse: {exc}") from exc
    return prices_to_panel(df.set_index(col), policy)


def synthetic_prices(n_assets=5, T=800, seed=0, factor_vol=0.01, idio_vol=0.01, start="2000-01-03"):
    """One-factor log-normal price panel with business-day dates."""
    rng = np.random.default_rng(np.random.SeedSequence([seed, n_assets, T]))
    beta = rng.uniform(0.5, 1.5, n_assets)
    f = factor_vol * rng.standard_normal(T)
    r = f[:, None] * beta + idio_vol * rng.standard_normal((T, n_assets)) + 2e-4
    P = 100.0 * np.exp(np.vstack([np.zeros(n_assets), np.cumsum(r, axis=0)]))
    dates = pd.bdate_range(start, periods=T + 1)
    return pd.DataFrame(P, index=dates, columns=[f"A{i}" for i in range(n_assets)])


def cbm_prices(n=10, rho=0.6, T=2000, seed=0, vol=0.01, start="2000-01-03"):
    """Prices whose log-returns are scaled equicorrelated Brownian increments."""
    res = simulate_cbm(CbmConfig(n=n, rho=rho, T=T, seed=seed))
    P = 100.0 * np.exp(np.vstack([np.zeros(n), np.cumsum(vol * res.increments, axis=0)]))
    return pd.DataFrame(P, index=pd.bdate_range(start, periods=T + 1), columns=[f"C{i}" for i in range(n)])


# -- eigenportfolios ----------------------------------------------------------------------------


def _fix_signs(V):
    idx = np.argmax(np.abs(V), axis=0)
    return V * np.sign(V[idx, np.arange(V.shape[1])])


@dataclass
class EigenPath:
    """Expanding-window eigenportfolios.

    Row ``j`` of ``loadings``/``eigenvalues`` is estimated with returns up
    to ``loading_dates[j]``; row ``j`` of ``sleeve_returns`` is the return
    on the following date (``dates[j]``) of the portfolio with those
    loadings. ``path`` is the running sum of the sleeve returns.
    """

    dates: pd.Index
    loading_dates: pd.Index
    loadings: np.ndarray  # (m, n_assets, k)
    eigenvalues: np.ndarray  # (m, n_assets), descending
    sleeve_returns: np.ndarray  # (m, k)
    path: np.ndarray  # (m, k)
    flags: list = field(default_factory=list)

    @property
    def explained_share(self):
        tot = self.eigenvalues.sum(axis=1)
        k = self.loadings.shape[2]
        return np.where(tot > 0, self.eigenvalues[:, :k].sum(axis=1) / np.where(tot > 0, tot, 1), np.nan)

    def to_frame(self):
        df = pd.DataFrame(self.sleeve_returns, index=self.dates, columns=[f"p{i + 1}" for i in range(self.loadings.shape[2])])
        for i in range(self.path.shape[1]):
            df[f"X{i + 1}"] = self.path[:, i]
        for i in range(self.loadings.shape[2]):
            df[f"lambda{i + 1}"] = self.eigenvalues[:, i]
        return df


def expanding_pca_eigenportfolios(panel, t0=TRADING_DAYS, k=3, standardize=True):
    """Eigenportfolios from the expanding correlation (or covariance) matrix.

    The first loadings use the first ``t0`` returns. Sleeve returns apply
    those loadings to the next day's returns, standardised with the
    expanding mean and standard deviation up to the previous day when
    ``standardize`` is set (the covariance matrix is then the correlation
    matrix).
    """
    R = panel.returns.to_numpy(float) if isinstance(panel, ReturnsPanel) else np.asarray(panel, float)
    dates = panel.dates if isinstance(panel, ReturnsPanel) else pd.RangeIndex(len(R))
    T, n = R.shape
    t0 = check_int(t0, "t0", 2)
    if k > n:
        raise InvalidInput(f"k={k} exceeds the number of assets {n}")
    if T <= t0:
        raise MinWindow(f"panel has {T} returns; at least t0 + 1 = {t0 + 1} are needed")
    flags = []
    s1 = np.cumsum(R, axis=0)
    s2 = np.cumsum(np.einsum("ti,tj->tij", R, R), axis=0)
    m = T - t0
    L = np.empty((m, n, k))
    E = np.empty((m, n))
    P = np.empty((m, k))
    for j, t in enumerate(range(t0 - 1, T - 1)):
        cnt = t + 1
        mu = s1[t] / cnt
        C = (s2[t] - cnt * np.outer(mu, mu)) / (cnt - 1)
        sd = np.sqrt(np.clip(np.diag(C), 0.0, None))
        if standardize:
            safe = np.where(sd > 0, sd, 1.0)
            C = C / np.outer(safe, safe)
        evals, evecs = np.linalg.eigh(C)
        evals, evecs = evals[::-1], evecs[:, ::-1]
        if evals[-1] < -1e-12 * max(evals[0], 1e-300) or cnt <= n:
            if "RankDeficient" not in flags:
                flags.append("RankDeficient")
        E[j] = np.clip(evals, 0.0, None)
        L[j] = _fix_signs(evecs[:, :k])
        r_next = R[t + 1]
        if standardize:
            r_next = (r_next - mu) / np.where(sd > 0, sd, 1.0)
        P[j] = r_next @ L[j]
    return EigenPath(dates[t0:], dates[t0 - 1 : T - 1], L, E, P, np.cumsum(P, axis=0), flags)


# -- signals, pnl, weights -----------------------------------------------------------------------


def trailing_std(x, window):
    """Sample std of the last ``window`` values up to and including each row (NaN before)."""
    s = pd.DataFrame(np.asarray(x, float)).rolling(window, min_periods=window).std(ddof=1)
    return s.to_numpy()


@dataclass
class PnlResult:
    pnl: np.ndarray  # (n, k); NaN where no position was possible
    signal: np.ndarray  # (n, k); position held over the increment ending at row t
    sigma: np.ndarray  # (n, k); volatility used for the position
    suppressed: int = 0

    @property
    def total_mean(self):
        return self.pnl.mean(axis=1)

    @property
    def total_sum(self):
        return self.pnl.sum(axis=1)


def signals_and_pnl(X, X_hat, vol_window=500):
    """Volatility-scaled directional pnl per coordinate.

    Row ``t`` of ``X_hat`` is the forecast of ``X[t]`` made at ``t - 1``
    (NaN rows mean no forecast). The position over ``t-1 -> t`` is
    ``sign(X_hat[t] - X[t-1]) / sigma[t-1]`` with ``sigma`` the trailing
    std of the last ``vol_window`` increments of ``X``; a zero sigma
    suppresses the position.
    """
    X = np.asarray(X, float)
    Xh = np.asarray(X_hat, float)
    if X.shape != Xh.shape:
        raise InvalidInput("forecasts must align with the path")
    dX = np.vstack([np.full((1, X.shape[1]), np.nan), np.diff(X, axis=0)])
    sd = trailing_std(dX[1:], vol_window)
    sigma = np.full_like(X, np.nan)
    sigma[2:] = sd[:-1]  # known at t-1, increments 1..t-1
    step = Xh - np.vstack([np.full((1, X.shape[1]), np.nan), X[:-1]])
    with np.errstate(invalid="ignore", divide="ignore"):
        zero = sigma <= 0
        sig = np.where(zero, 0.0, np.sign(step) / np.where(zero, 1.0, sigma))
    sig[~np.isfinite(sigma) | ~np.isfinite(step)] = np.nan
    pnl = sig * dX
    return PnlResult(pnl, sig, sigma, int(np.sum(zero & np.isfinite(step))))


def sharpe(pnl, periods=TRADING_DAYS):
    """Annualised Sharpe ratio ``sqrt(periods) * mean / std``; ``None`` when undefined."""
    x = np.asarray(pnl, float)
    x = x[np.isfinite(x)]
    if len(x) < 2:
        return None
    sd = x.std(ddof=1)
    if not sd > 1e-14 * max(np.abs(x).max(), 1e-300):
        return None
    return float(math.sqrt(periods) * x.mean() / sd)


def eigenvalue_weights(dX, min_obs=2):
    """``C[t, i] = lambda_i / sum(lambda)`` from the expanding covariance of ``dX[:t+1]``.

    Returns the weights and a boolean array marking rows that fell back
    to equal weights (too little data or all-zero eigenvalues).
    """
    D = np.asarray(dX, float)
    n, k = D.shape
    C = np.full((n, k), 1.0 / k)
    fallback = np.ones(n, dtype=bool)
    s1 = np.cumsum(D, axis=0)
    s2 = np.cumsum(np.einsum("ti,tj->tij", D, D), axis=0)
    for t in range(min_obs - 1, n):
        cnt = t + 1
        mu = s1[t] / cnt
        cov = (s2[t] - cnt * np.outer(mu, mu)) / (cnt - 1)
        lam = np.clip(np.linalg.eigvalsh(cov)[::-1], 0.0, None)
        if lam.sum() > 0:
            C[t] = lam / lam.sum()
            fallback[t] = False
    return C, fallback


def eigenvalue_weighted_return(C, signals, sleeve_returns):
    """``r[t] = sum_i C[t-1, i] * s[t, i] * p[t, i]`` (weights dated one row earlier)."""
    C = np.asarray(C, float)
    s = np.asarray(signals, float)
    p = np.asarray(sleeve_returns, float)
    out = np.full(len(p), np.nan)
    out[1:] = np.sum(C[:-1] * s[1:] * p[1:], axis=1)
    return out


DEFAULT_BUCKETS = {"negative": ("Torus",), "near_zero": ("Euclidean3",), "positive": None}


@dataclass
class GatedPnl:
    pnl: np.ndarray
    buckets: np.ndarray  # object: "negative" / "near_zero" / "positive" / None
    fallback: np.ndarray  # rows that used the all-geometry average
    mapping: dict


def curvature_gated_pnl(runs, K, kappa_neg=0.01, kappa_pos=0.01, mapping=None):
    """Average the geometry runs chosen by the curvature bucket of each row.

    ``runs`` maps geometry names to aligned pnl series. ``mapping`` sends
    each bucket to a tuple of run names, or ``None`` for all runs. A
    missing curvature value, or a bucket whose runs were not supplied,
    falls back to the average over every run.
    """
    if not runs:
        raise InvalidInput("at least one geometry run is needed")
    mapping = dict(DEFAULT_BUCKETS if mapping is None else mapping)
    names = list(runs)
    M = np.column_stack([np.asarray(runs[k], float) for k in names])
    K = np.asarray(K, float)
    if len(K) != len(M):
        raise InvalidInput("curvature series must align with the pnl series")
    all_avg = M.mean(axis=1)
    out = all_avg.copy()
    buckets = np.empty(len(K), dtype=object)
    fallback = np.ones(len(K), dtype=bool)
    for t, k in enumerate(K):
        if not np.isfinite(k):
            continue
        b = "positive" if k >= kappa_pos else "negative" if k <= -kappa_neg else "near_zero"
        buckets[t] = b
        chosen = mapping.get(b)
        cols = [names.index(c) for c in (chosen or ()) if c in names]
        if chosen is None or not cols:
            continue
        out[t] = M[t, cols].mean()
        fallback[t] = False
    return GatedPnl(out, buckets, fallback, {k: (None if v is None else list(v)) for k, v in mapping.items()})


def benchmarks(panel, vol_window=TRADING_DAYS):
    """Equal-weight (LO) and inverse-volatility (RP) daily returns.

    RP weights on day ``t`` use the trailing ``vol_window`` returns up to
    ``t - 1``; rows without enough history are NaN.
    """
    R = panel.returns.to_numpy(float) if isinstance(panel, ReturnsPanel) else np.asarray(panel, float)
    T, n = R.shape
    lo = R.mean(axis=1)
    sd = trailing_std(R, vol_window)
    W = np.full((T, n), np.nan)
    inv = 1.0 / np.maximum(sd[:-1], VOL_FLOOR)
    W[1:] = inv / inv.sum(axis=1, keepdims=True)
    rp = np.sum(W * R, axis=1)
    rp[~np.all(np.isfinite(W), axis=1)] = np.nan
    return lo, rp, W


def inverse_vol_weights(vols):
    inv = 1.0 / np.maximum(np.asarray(vols, float), VOL_FLOOR)
    return inv / inv.sum()


# -- backtest ----------------------------------------------------------------------------------


@dataclass
class BacktestConfig:
    """Knobs of :func:`run_backtest`.

    ``geometries`` are the fixed-geometry runs; each surface is fitted on
    the first ``calibration`` path points only, and the forecasts used
    for trading start after them. ``oracle`` replaces the forecasts by
    the realised path (``"perfect"``) or its mirror (``"anti"``).
    """

    t0: int = TRADING_DAYS
    k: int = 3
    standardize: bool = True
    vol_window: int = 500
    rp_window: int = TRADING_DAYS
    calibration: int = 100
    geometries: tuple = ("Euclidean3", "Sphere", "Torus", "Hyperboloid")
    forecast: ForecastConfig = field(default_factory=ForecastConfig)
    curvature: CurvatureConfig = field(default_factory=lambda: CurvatureConfig(window="rolling", length=60))
    buckets: Optional[dict] = None
    oracle: Optional[str] = None

    def __post_init__(self):
        if self.oracle not in (None, "perfect", "anti"):
            raise InvalidInput("oracle must be None, 'perfect' or 'anti'")
        for g in self.geometries:
            Kind(g)
        if self.calibration < self.forecast.start + 1:
            self.calibration = self.forecast.start + 1

    def to_dict(self):
        d = dict(self.__dict__)
        d["geometries"] = list(self.geometries)
        d["forecast"] = self.forecast.to_dict()
        d["curvature"] = self.curvature.to_dict()
        d["buckets"] = {k: (None if v is None else list(v)) for k, v in (self.buckets or DEFAULT_BUCKETS).items()}
        return d


@dataclass
class BacktestReport:
    summary: dict
    series: pd.DataFrame
    eigen: EigenPath
    flags: list

    def to_dict(self):
        return self.summary


def _forecast_path(X, arm, spec, cfg):
    """Per-row forecasts of ``X`` (NaN where none) for one run."""
    if arm == "native":
        res = pipeline_native(X, cfg.forecast)
    else:
        res = pipeline_geometry_aware(X, spec, cfg.forecast)
    out = np.full_like(X, np.nan)
    # trade on the predicted step from the forecast origin
    out[res.index] = X[res.index - 1] + res.predicted_step
    return out


def _sleeve_stats(pnl):
    return {
        "sleeves": {f"p{i + 1}": sharpe(pnl.pnl[:, i]) for i in range(pnl.pnl.shape[1])},
        "total_mean": sharpe(pnl.total_mean),
        "total_sum": sharpe(pnl.total_sum),
    }


def run_backtest(panel, cfg=None):
    """Eigenportfolio backtest with geometry runs, weighting, gating and benchmarks."""
    cfg = cfg or BacktestConfig()
    eig = expanding_pca_eigenportfolios(panel, cfg.t0, cfg.k, cfg.standardize)
    X = eig.path
    m = len(X)
    if m <= cfg.calibration + 1:
        raise MinWindow(f"eigen path of {m} points is too short for calibration {cfg.calibration}")
    flags = list(eig.flags)
    runs_fc = {}
    if cfg.oracle:
        runs_fc["oracle"] = X.copy() if cfg.oracle == "perfect" else np.vstack([X[:1], 2 * X[:-1] - X[1:]])
    else:
        runs_fc["native"] = _forecast_path(X, "native", None, cfg)
        calib = X[: cfg.calibration]
        for g in cfg.geometries:
            kind = Kind(g)
            if kind is Kind.EUCLIDEAN3:
                spec = geo.ManifoldSpec.euclidean()
            else:
                try:
                    spec = fit_geometry(calib, kind).spec
                except GeoAlphaError as exc:
                    flags.append(f"{g}: fit failed ({type(exc).__name__})")
                    continue
                if spec is None:
                    flags.append(f"{g}: fit gave no valid surface")
                    continue
            runs_fc[g] = _forecast_path(X, "geometry", spec, cfg)
    # nothing before the calibration segment is traded
    for v in runs_fc.values():
        v[: cfg.calibration] = np.nan
    pnls = {name: signals_and_pnl(X, fc, cfg.vol_window) for name, fc in runs_fc.items()}
    dX = np.vstack([np.zeros((1, X.shape[1])), np.diff(X, axis=0)])
    C, fb = eigenvalue_weights(dX[1:])
    C = np.vstack([np.full((1, X.shape[1]), 1.0 / X.shape[1]), C])
    K = curvature_series(X, cfg.curvature).K if m >= cfg.curvature.length + cfg.curvature.smooth_len else np.full(m, np.nan)
    geometry_runs = {k: v.total_mean for k, v in pnls.items() if k not in ("native", "oracle")}
    gated = curvature_gated_pnl(geometry_runs, K, cfg.curvature.kappa_neg, cfg.curvature.kappa_pos, cfg.buckets) if geometry_runs else None
    lo, rp, _ = benchmarks(panel, cfg.rp_window)
    eig_dates = eig.dates
    rdates = panel.dates if isinstance(panel, ReturnsPanel) else pd.RangeIndex(len(lo))
    bench = pd.DataFrame({"LO": lo, "RP": rp}, index=rdates)
    series = pd.DataFrame(index=eig_dates)
    for i in range(X.shape[1]):
        series[f"X{i + 1}"] = X[:, i]
        series[f"C{i + 1}"] = C[:, i]
    series["K"] = K
    summary_runs = {}
    for name, p in pnls.items():
        for i in range(X.shape[1]):
            series[f"{name}_pnl{i + 1}"] = p.pnl[:, i]
        series[f"{name}_total"] = p.total_mean
        ew = eigenvalue_weighted_return(C, p.signal, eig.sleeve_returns)
        series[f"{name}_eigw"] = ew
        summary_runs[name] = _sleeve_stats(p) | {"eigen_weighted": sharpe(ew), "suppressed_signals": p.suppressed}
    if gated is not None:
        series["gated"] = gated.pnl
    series["LO"] = bench["LO"].reindex(eig_dates).to_numpy()
    series["RP"] = bench["RP"].reindex(eig_dates).to_numpy()
    traded = slice(cfg.calibration, None)
    summary = {
        "n_assets": int(eig.loadings.shape[1]),
        "n_path_points": m,
        "explained_share_mean": float(np.nanmean(eig.explained_share)),
        "runs": summary_runs,
        "gated": None if gated is None else {"sharpe": sharpe(gated.pnl[traded]), "mapping": gated.mapping,
                                             "fallback_rows": int(gated.fallback[traded].sum())},
        "benchmarks": {"LO": sharpe(series["LO"].to_numpy()[traded]), "RP": sharpe(series["RP"].to_numpy()[traded])},
        "eigen_weight_fallback_rows": int(fb.sum()),
        "flags": flags,
        "config": cfg.to_dict(),
    }
    return BacktestReport(summary, series, eig, flags)
