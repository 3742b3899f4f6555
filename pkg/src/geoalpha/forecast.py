"""One-step forecasting on a surface and in the native coordinates.

The geometry-aware arm turns a rolling window of the path into tangent
vectors, compresses them with a window-local PCA, predicts the next
coefficient vector with VAR, random-forest or Gaussian-process regression,
and lifts the prediction back onto the surface. The native arm runs the
same steps with the identity projector and plain addition, so with a
Euclidean3 geometry both arms agree to rounding.
"""

from dataclasses import dataclass, field
from math import ceil
from typing import Optional

import numpy as np
import pandas as pd
from scipy.linalg import cho_solve, cholesky
from scipy.spatial.distance import cdist
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.ensemble import RandomForestRegressor

from . import geometry as geo
from ._validation import as_points, as_series, check_int
from .curvature import CurvatureConfig, Regime, classify_regimes, curvature_series
from .exceptions import GeoAlphaError, IllConditionedKernel, InvalidInput, MinWindow
from .fitgeom import fit_geometry
from .geometry import Kind, ManifoldSpec

PREDICTORS = ("VAR", "RF", "GP")


# -- tangent vectors and PCA ---------------------------------------------------------------


def tangent_velocities(points, spec):
    """``v_t = P(X_{t-1}) (X_t - X_{t-1})`` for ``t = 1..n-1``."""
    X = as_points(points, "points")
    d = np.diff(X, axis=0)
    if spec is None or spec.kind is Kind.EUCLIDEAN3:
        return d
    P = geo.tangent_projector(spec, X[:-1])
    return np.einsum("nij,nj->ni", P, d)


@dataclass
class TangentPCA:
    """Principal axes of a set of tangent vectors.

    ``basis`` has orthonormal columns; ``degenerate`` is set when the
    input has (numerically) zero variance, in which case the basis is the
    leading coordinate axes.
    """

    mean: np.ndarray
    basis: np.ndarray
    eigenvalues: np.ndarray  # all of them, descending
    degenerate: bool = False

    @property
    def discarded_variance(self):
        return float(self.eigenvalues[self.basis.shape[1] :].sum())

    def transform(self, V):
        return (np.asarray(V, float) - self.mean) @ self.basis

    def inverse_transform(self, C):
        return self.mean + np.asarray(C, float) @ self.basis.T


def tangent_pca(velocities, d):
    """PCA of tangent vectors (rows) keeping ``d`` axes."""
    V = np.asarray(velocities, dtype=float)
    if V.ndim != 2 or not np.all(np.isfinite(V)):
        raise InvalidInput("velocities must be a finite 2-D array")
    k = V.shape[1]
    d = check_int(d, "d", 1)
    if d > k:
        raise InvalidInput(f"d={d} exceeds the vector dimension {k}")
    if len(V) < d + 1:
        raise MinWindow(f"tangent PCA with d={d} needs at least {d + 1} vectors")
    mu = V.mean(axis=0)
    C = V - mu
    cov = C.T @ C / len(V)
    evals, evecs = np.linalg.eigh(cov)
    evals, evecs = evals[::-1], evecs[:, ::-1]
    evals = np.clip(evals, 0.0, None)
    scale = max(float(np.abs(V).max()), 1e-300)
    degenerate = bool(evals[0] <= (1e-14 * scale) ** 2)
    if degenerate:
        evecs = np.eye(k)
    # deterministic signs: largest-magnitude loading positive
    idx = np.argmax(np.abs(evecs), axis=0)
    evecs = evecs * np.sign(evecs[idx, np.arange(k)])
    return TangentPCA(mu, evecs[:, :d].copy(), evals, degenerate)


# -- predictors -----------------------------------------------------------------------------


def lag_design(y, L):
    """Rows ``(y_{t-1}, ..., y_{t-L})`` with targets ``y_t`` plus the next-step input."""
    y = np.asarray(y, dtype=float)
    n = len(y)
    if n <= L:
        raise MinWindow(f"series of length {n} is too short for {L} lags")
    X = np.column_stack([y[L - j : n - j] for j in range(1, L + 1)])
    x_next = y[::-1][:L].copy()
    return X, y[L:], x_next


@dataclass
class VarFit:
    intercept: np.ndarray  # (k,)
    coefs: np.ndarray  # (p, k, k); y_t = c + sum_j A_j y_{t-j}
    order: int
    flags: tuple = ()

    def forecast(self, history):
        Y = np.asarray(history, float)
        out = self.intercept.copy()
        for j in range(self.order):
            out = out + self.coefs[j] @ Y[-1 - j]
        return out


def fit_var(Y, p, ridge=1e-6, max_condition=1e10):
    """Least-squares VAR(p) with intercept.

    ``p`` shrinks (flag ``OrderShrunk``) until the window holds at least
    one more row than parameters per equation. A rank-deficient design
    switches to ridge on centred regressors with an unpenalised
    intercept (flag ``Ridge``).
    """
    Y = np.asarray(Y, dtype=float)
    if Y.ndim == 1:
        Y = Y[:, None]
    n, k = Y.shape
    p = check_int(p, "p", 0)
    flags = []
    while p > 0 and n - p < 1 + k * p + 1:
        p -= 1
        flags = ["OrderShrunk"]
    if p == 0:
        return VarFit(Y.mean(axis=0), np.zeros((0, k, k)), 0, tuple(flags))
    Z = np.column_stack([Y[p - j : n - j] for j in range(1, p + 1)])
    T = Y[p:]
    A = np.column_stack([np.ones(len(Z)), Z])
    colscale = np.linalg.norm(A, axis=0)
    sv = np.linalg.svd(A / np.where(colscale > 0, colscale, 1.0), compute_uv=False)
    if colscale.min() > 0 and sv[-1] > 0 and sv[0] / sv[-1] < max_condition:
        B = np.linalg.lstsq(A, T, rcond=None)[0]
        c, S = B[0], B[1:]
    else:
        flags.append("Ridge")
        zm, tm = Z.mean(axis=0), T.mean(axis=0)
        Zc, Tc = Z - zm, T - tm
        S = np.linalg.solve(Zc.T @ Zc + ridge * np.eye(Z.shape[1]), Zc.T @ Tc)
        c = tm - zm @ S
    coefs = np.stack([S[j * k : (j + 1) * k].T for j in range(p)])
    return VarFit(c, coefs, p, tuple(flags))


def var_forecast(Y, p=1):
    """One-step VAR(p) forecast from the rows of ``Y`` (most recent last)."""
    return fit_var(Y, p).forecast(np.atleast_2d(np.asarray(Y, float).T).T)


class VARForecaster(BaseEstimator):
    """Estimator wrapper around :func:`fit_var`."""

    def __init__(self, p=1, ridge=1e-6):
        self.p = p
        self.ridge = ridge

    def fit(self, Y, y=None):
        self.model_ = fit_var(Y, self.p, self.ridge)
        self.history_ = np.atleast_2d(np.asarray(Y, float).T).T
        return self

    def forecast(self):
        return self.model_.forecast(self.history_)


def make_forest(n_lags, n_estimators=100, seed=0):
    return RandomForestRegressor(
        n_estimators=n_estimators,
        max_features=max(1, ceil(n_lags / 3)),
        min_samples_leaf=2,
        bootstrap=True,
        random_state=seed,
    )


def rf_forecast(y, L=5, n_estimators=100, seed=0):
    """Random-forest one-step forecast of a scalar series from its last ``L`` values."""
    y = as_series(y, "y", min_length=L + 2)[:, 0]
    X, t, x_next = lag_design(y, L)
    if np.ptp(t) == 0:
        return float(t[0])
    model = make_forest(L, n_estimators, seed).fit(X, t)
    return float(model.predict(x_next[None, :])[0])


def matern32(X1, X2, length):
    r = np.sqrt(3.0) * cdist(X1, X2) / length
    return (1.0 + r) * np.exp(-r)


class GPRegressor(BaseEstimator, RegressorMixin):
    """GP regression with a Matern-3/2 plus constant kernel.

    ``k(x, x') = constant + signal * matern32(|x - x'| / length_scale)``.
    Hyperparameters left as ``None`` are chosen by maximising the log
    marginal likelihood over a fixed grid. ``noise`` is added to the
    diagonal; with ``relative_noise`` it is multiplied by the target
    variance. A failed Cholesky factorisation multiplies the noise by 10,
    at most three times.
    """

    LENGTH_GRID = (0.25, 0.5, 1.0, 2.0, 4.0)
    CONSTANT_GRID = (0.1, 1.0, 10.0)

    def __init__(self, length_scale=None, constant=None, signal=None, noise=1e-4, relative_noise=True):
        self.length_scale = length_scale
        self.constant = constant
        self.signal = signal
        self.noise = noise
        self.relative_noise = relative_noise

    def _kernel(self, A, B, ell, const, sig):
        return const + sig * matern32(A, B, ell)

    def _factor(self, X, y, ell, const, sig, noise):
        K = self._kernel(X, X, ell, const, sig)
        for attempt in range(4):
            try:
                Lc = cholesky(K + noise * np.eye(len(X)), lower=True)
                return Lc, noise
            except np.linalg.LinAlgError:
                noise *= 10.0
        raise IllConditionedKernel("kernel matrix is not positive definite after jitter escalation")

    def fit(self, X, y):
        X = np.asarray(X, dtype=float)
        y = np.asarray(y, dtype=float)
        if X.ndim == 1:
            X = X[:, None]
        var = float(np.var(y))
        level = float(np.mean(y) ** 2)
        tiny = 1e-12 * max(level, var, 1e-300)
        sig = self.signal if self.signal is not None else max(var, tiny)
        noise = self.noise * (max(var, tiny) if self.relative_noise else 1.0)
        D = cdist(X, X)
        med = float(np.median(D[np.triu_indices(len(X), 1)])) if len(X) > 1 else 1.0
        med = med if med > 0 else 1.0
        ells = [self.length_scale] if self.length_scale is not None else [med * g for g in self.LENGTH_GRID]
        base = max(level, var, tiny)
        consts = [self.constant] if self.constant is not None else [base * g for g in self.CONSTANT_GRID]
        best = None
        for ell in ells:
            for const in consts:
                Lc, nz = self._factor(X, y, ell, const, sig, noise)
                alpha = cho_solve((Lc, True), y)
                lml = -0.5 * y @ alpha - np.log(np.diag(Lc)).sum() - 0.5 * len(y) * np.log(2 * np.pi)
                if best is None or lml > best[0]:
                    best = (lml, ell, const, Lc, alpha, nz)
        self.log_marginal_likelihood_, self.length_scale_, self.constant_, L_, self.alpha_, self.noise_ = best
        self.signal_ = sig
        self._L = L_
        self.X_train_ = X
        return self

    def predict(self, X, return_var=False):
        X = np.asarray(X, dtype=float)
        if X.ndim == 1:
            X = X[None, :] if self.X_train_.shape[1] == X.shape[0] else X[:, None]
        ks = self._kernel(X, self.X_train_, self.length_scale_, self.constant_, self.signal_)
        mean = ks @ self.alpha_
        if not return_var:
            return mean
        w = cho_solve((self._L, True), ks.T)
        var = self.constant_ + self.signal_ - np.sum(ks * w.T, axis=1)
        return mean, np.clip(var, 0.0, None)


def gp_forecast(y, L=5, **gp_params):
    """GP one-step forecast; returns ``(mean, variance)``."""
    y = as_series(y, "y", min_length=L + 2)[:, 0]
    X, t, x_next = lag_design(y, L)
    gp = GPRegressor(**gp_params).fit(X, t)
    m, v = gp.predict(x_next[None, :], return_var=True)
    return float(m[0]), float(v[0])


# -- pipelines ------------------------------------------------------------------------------


@dataclass
class ForecastConfig:
    """Settings shared by both forecasting arms.

    ``window`` counts training observations (tangent vectors). ``mode``
    selects what is forecast: ``"velocity"`` predicts the next tangent
    step at the current point, ``"log"`` predicts the next log coordinate
    about a window base point. ``geometry_source="inferred"`` picks the
    geometry per origin from the curvature sign (and optional torus
    flags) and refits its parameters on the last ``fit_window`` points.
    """

    predictor: str = "VAR"
    lags: int = 5
    var_order: int = 1
    window: int = 25
    pca_dim: int = 3
    geometry_source: str = "fixed"
    mode: str = "velocity"
    n_estimators: int = 100
    gp_noise: float = 1e-4
    seed: int = 0
    m0: int = 30
    fit_window: int = 100
    curvature: CurvatureConfig = field(default_factory=lambda: CurvatureConfig(window="rolling", length=60, smooth_len=1))

    def __post_init__(self):
        if self.predictor not in PREDICTORS:
            raise InvalidInput(f"predictor must be one of {PREDICTORS}")
        check_int(self.lags, "lags", 1)
        check_int(self.var_order, "var_order", 0)
        check_int(self.window, "window", 2)
        check_int(self.m0, "m0", 1)
        if not 1 <= self.pca_dim <= 3:
            raise InvalidInput("pca_dim must be 1, 2 or 3")
        if self.predictor == "VAR" and self.window <= self.var_order:
            raise InvalidInput("window must exceed the VAR order")
        if self.predictor != "VAR" and self.window < self.lags + 2:
            raise InvalidInput("window must be at least lags + 2 for RF and GP")
        if self.geometry_source not in ("fixed", "inferred"):
            raise InvalidInput("geometry_source must be 'fixed' or 'inferred'")
        if self.mode not in ("velocity", "log"):
            raise InvalidInput("mode must be 'velocity' or 'log'")

    @property
    def start(self):
        """First forecast origin: the window plus ``m0`` points are needed."""
        return self.window + self.m0 - 1

    def to_dict(self):
        d = dict(self.__dict__)
        d["curvature"] = self.curvature.to_dict()
        return d


def predict_next(C, cfg, seed=0):
    """Next row of the coefficient series ``C`` (shape ``(W, d)``)."""
    if cfg.predictor == "VAR":
        return var_forecast(C, cfg.var_order)
    out = np.empty(C.shape[1])
    for j in range(C.shape[1]):
        if cfg.predictor == "RF":
            out[j] = rf_forecast(C[:, j], cfg.lags, cfg.n_estimators, seed)
        else:
            out[j] = gp_forecast(C[:, j], cfg.lags, noise=cfg.gp_noise)[0]
    return out


@dataclass
class ForecastResult:
    """One-step forecasts of a path; ``index`` is the forecast target index."""

    arm: str
    index: np.ndarray
    predicted: np.ndarray
    tangent: np.ndarray
    realized: np.ndarray
    previous: np.ndarray
    base: np.ndarray  # forecast origin on the active surface
    geometry: list
    gaps: list
    config: ForecastConfig

    @property
    def predicted_step(self):
        """Forecast increment measured from the origin on the surface."""
        return self.predicted - self.base

    @property
    def errors(self):
        return self.predicted - self.realized

    @property
    def sign_hits(self):
        return np.sign(self.predicted_step) == np.sign(self.realized - self.previous)

    def coordinate_pnl(self):
        return np.sign(self.predicted_step) * (self.realized - self.previous)

    def to_frame(self):
        df = pd.DataFrame({"index": self.index, "geometry": self.geometry})
        e = self.errors
        hits = self.sign_hits
        for j, c in enumerate("xyz"):
            df[f"pred_{c}"] = self.predicted[:, j]
            df[f"real_{c}"] = self.realized[:, j]
            df[f"abs_err_{c}"] = np.abs(e[:, j])
            df[f"sq_err_{c}"] = e[:, j] ** 2
            df[f"sign_hit_{c}"] = hits[:, j].astype(int)
        return df

    def metrics(self):
        e = self.errors
        out = {"arm": self.arm, "n_forecasts": int(len(self.index)), "n_gaps": len(self.gaps), "coordinates": {}}
        pnl = self.coordinate_pnl()
        for j, c in enumerate("xyz"):
            real = self.realized[:, j]
            nz = np.abs(real) > 0
            sd = pnl[:, j].std(ddof=1) if len(pnl) > 1 else 0.0
            out["coordinates"][c] = {
                "MAE": float(np.mean(np.abs(e[:, j]))) if len(e) else None,
                "RMSE": float(np.sqrt(np.mean(e[:, j] ** 2))) if len(e) else None,
                "MAPE (%)": float(100 * np.mean(np.abs(e[nz, j] / real[nz]))) if nz.any() else None,
                "sign_rate": float(np.mean(self.sign_hits[:, j])) if len(e) else None,
                "Sharpe": float(np.sqrt(252) * pnl[:, j].mean() / sd) if sd > 0 else None,
            }
        return out


def _lift_velocity(spec, base, v):
    if spec is None or spec.kind is Kind.EUCLIDEAN3:
        return base + v
    if spec.kind is Kind.SPHERE:
        return geo.exp_map(spec, base, v)
    c = geo.to_chart(spec, base, tol=None)
    J = geo.chart_jacobian(spec, c)
    dc = np.linalg.lstsq(J, v, rcond=None)[0]
    return geo.from_chart(spec, geo.exp_chart(spec, c, dc))


def _forecast_one(W, spec, cfg, seed):
    """Forecast the point after the last row of the window ``W`` (``window + 1`` points)."""
    if cfg.mode == "velocity":
        V = tangent_velocities(W, spec)
        base = W[-1]
        pca = tangent_pca(V, min(cfg.pca_dim, V.shape[1]))
        v_hat = pca.inverse_transform(predict_next(pca.transform(V), cfg, seed))
        if spec is not None and spec.kind is not Kind.EUCLIDEAN3:
            v_hat = geo.tangent_projector(spec, base) @ v_hat
        return _lift_velocity(spec, base, v_hat), v_hat
    # log mode: coordinates of the window points in one tangent space
    if spec is None or spec.kind is Kind.EUCLIDEAN3:
        mu = W.mean(axis=0)
        Y = W - mu
    elif spec.kind is Kind.SPHERE:
        mu = geo.karcher_mean(spec, W)
        Y = geo.log_map(spec, mu, W)
    else:
        mu = geo.to_chart(spec, W[0], tol=None)
        Y = geo.log_chart(spec, mu, geo.to_chart(spec, W, tol=None))
    Y = Y[1:]
    pca = tangent_pca(Y, min(cfg.pca_dim, Y.shape[1]))
    y_hat = pca.inverse_transform(predict_next(pca.transform(Y), cfg, seed))
    if spec is None or spec.kind is Kind.EUCLIDEAN3:
        return mu + y_hat, y_hat
    if spec.kind is Kind.SPHERE:
        return geo.exp_map(spec, mu, y_hat), y_hat
    return geo.from_chart(spec, geo.exp_chart(spec, mu, y_hat)), y_hat


def _index_seed(seed, t):
    return int(np.random.SeedSequence([seed, t]).generate_state(1)[0])


class GeometrySelector:
    """Picks the active geometry at each origin from causal information only."""

    def __init__(self, X, cfg, torus_flags=None):
        self.X = X
        self.cfg = cfg
        K = curvature_series(X, cfg.curvature).K
        self.regimes = classify_regimes(K, torus_flags, cfg.curvature.kappa_pos, cfg.curvature.kappa_neg).labels

    def at(self, t):
        reg = self.regimes[t]
        if reg is None or reg is Regime.FLAT:
            return ManifoldSpec.euclidean(), ()
        lo = max(0, t + 1 - self.cfg.fit_window)
        try:
            res = fit_geometry(self.X[lo : t + 1], Kind(reg.geometry))
        except GeoAlphaError:
            return ManifoldSpec.euclidean(), ("FitFailed",)
        if res.spec is None:
            return ManifoldSpec.euclidean(), ("FitFailed",)
        return res.spec, ()


def _run(path, spec_at, cfg, arm):
    X = as_points(getattr(path, "points", path), "path")
    n = len(X)
    if n <= cfg.window + cfg.m0:
        raise MinWindow(f"path of length {n} needs more than window + m0 = {cfg.window + cfg.m0} points")
    idx, pred, tang, real, prev, base, geom, gaps = [], [], [], [], [], [], [], []
    for t in range(cfg.start, n - 1):
        W = X[t - cfg.window : t + 1]
        try:
            spec, _ = spec_at(t)
            if spec is not None and spec.kind is not Kind.EUCLIDEAN3:
                W = geo.project_to_surface(spec, W)
            x_hat, v_hat = _forecast_one(W, spec, cfg, _index_seed(cfg.seed, t))
        except (GeoAlphaError, np.linalg.LinAlgError) as exc:
            gaps.append((t + 1, type(exc).__name__))
            continue
        idx.append(t + 1)
        pred.append(x_hat)
        tang.append(v_hat if len(v_hat) == 3 else np.r_[v_hat, np.zeros(3 - len(v_hat))])
        real.append(X[t + 1])
        prev.append(X[t])
        base.append(W[-1])
        geom.append("Native" if spec is None else spec.kind.value)
    as_arr = lambda L: np.array(L, dtype=float).reshape(-1, 3)
    return ForecastResult(arm, np.array(idx, dtype=int), as_arr(pred), as_arr(tang), as_arr(real), as_arr(prev), as_arr(base), geom, gaps, cfg)


def pipeline_geometry_aware(path, spec=None, cfg=None, torus_flags=None):
    """Rolling one-step forecasts that respect the active surface.

    With ``cfg.geometry_source="fixed"`` the given ``spec`` is used at
    every origin; ``"inferred"`` ignores ``spec`` and selects the geometry
    per origin (``torus_flags`` optionally marks torus-like indices).
    """
    cfg = cfg or ForecastConfig()
    X = as_points(getattr(path, "points", path), "path")
    if cfg.geometry_source == "fixed":
        if spec is None:
            raise InvalidInput("a fixed geometry source needs a ManifoldSpec")
        return _run(X, lambda t: (spec, ()), cfg, "geometry")
    selector = GeometrySelector(X, cfg, torus_flags)
    return _run(X, selector.at, cfg, "geometry")


def pipeline_native(path, cfg=None):
    """The same rolling forecasts on the raw coordinates (first differences)."""
    cfg = cfg or ForecastConfig()
    return _run(path, lambda t: (None, ()), cfg, "native")


def matched_settings(a, b):
    """True when two results were produced with identical windows, horizons and predictors."""
    keys = ("predictor", "lags", "var_order", "window", "pca_dim", "mode", "n_estimators", "gp_noise", "seed", "m0")
    return all(getattr(a.config, k) == getattr(b.config, k) for k in keys) and np.array_equal(a.index, b.index)
