import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from geoalpha import geometry as geo
from geoalpha.exceptions import InvalidInput, MinWindow
from geoalpha.forecast import (
    ForecastConfig,
    GPRegressor,
    VARForecaster,
    fit_var,
    gp_forecast,
    lag_design,
    matched_settings,
    pipeline_geometry_aware,
    pipeline_native,
    rf_forecast,
    tangent_pca,
    tangent_velocities,
    var_forecast,
)
from geoalpha.geometry import ManifoldSpec
from geoalpha.simulate import ScenarioConfig, build_scenario, simulate_ambient

from . import oracles

SPHERE = ManifoldSpec.sphere(1.0)
EUCLID = ManifoldSpec.euclidean()
FAST_RF = dict(predictor="RF", n_estimators=10)


def _great_circle(n, step=0.05):
    a = np.array([1.0, 2.0, 3.0]) / np.sqrt(14)
    b = np.cross(a, [0.0, 0.0, 1.0])
    b /= np.linalg.norm(b)
    th = step * np.arange(n)
    return np.cos(th)[:, None] * a + np.sin(th)[:, None] * b


# -- tangent vectors --------------------------------------------------------------------


def test_velocities_examples():
    X = np.random.default_rng(0).standard_normal((10, 3))
    np.testing.assert_array_equal(tangent_velocities(X, EUCLID), np.diff(X, axis=0))
    same = np.tile([0.0, 0.0, 1.0], (3, 1))
    np.testing.assert_array_equal(tangent_velocities(same, SPHERE), np.zeros((2, 3)))
    v = tangent_velocities([[0, 0, 1], [np.sin(0.01), 0, np.cos(0.01)]], SPHERE)[0]
    np.testing.assert_allclose(v, [0.01, 0, 0], atol=1e-4)


def test_velocities_are_tangent():
    p = simulate_ambient(ManifoldSpec.torus(3, 1), [4, 0, 0], 300, seed=1).points
    V = tangent_velocities(p, ManifoldSpec.torus(3, 1))
    n = geo.unit_normal(ManifoldSpec.torus(3, 1), p[:-1])
    assert np.max(np.abs(np.sum(V * n, axis=1))) <= 1e-9 * np.max(np.linalg.norm(V, axis=1))


def test_tangent_pca_properties():
    rng = np.random.default_rng(1)
    V = rng.standard_normal((200, 3)) * [3.0, 1.0, 0.2]
    for d in (1, 2, 3):
        pca = tangent_pca(V, d)
        np.testing.assert_allclose(pca.basis.T @ pca.basis, np.eye(d), atol=1e-12)
        R = pca.inverse_transform(pca.transform(V))
        err = np.mean(np.sum((V - R) ** 2, axis=1))
        assert err == pytest.approx(pca.discarded_variance, abs=1e-10)
    np.testing.assert_allclose(tangent_pca(V, 3).inverse_transform(tangent_pca(V, 3).transform(V)), V, atol=1e-12)
    line = np.outer(rng.standard_normal(50), [1.0, -2.0, 0.5])
    p1 = tangent_pca(line, 1)
    assert p1.discarded_variance <= 1e-12 * p1.eigenvalues[0]


def test_tangent_pca_isotropic_and_degenerate():
    V = np.random.default_rng(2).standard_normal((5000, 3))
    ev = tangent_pca(V, 3).eigenvalues
    assert ev[0] / ev[-1] < 1.3
    pca = tangent_pca(np.ones((10, 3)), 2)
    assert pca.degenerate
    np.testing.assert_allclose(pca.basis.T @ pca.basis, np.eye(2))
    with pytest.raises(MinWindow):
        tangent_pca(V[:2], 2)


# -- VAR ----------------------------------------------------------------------------------


def _var1_series(A, y0, n):
    Y = [np.asarray(y0, float)]
    for _ in range(n - 1):
        Y.append(A @ Y[-1])
    return np.array(Y)


def test_var_recovers_scalar_coefficient():
    y = 0.5 ** np.arange(25)
    fit = fit_var(y, 1)
    assert fit.coefs[0, 0, 0] == pytest.approx(0.5, abs=1e-8)
    assert var_forecast(y, 1)[0] == pytest.approx(0.5**25, rel=1e-6)


def test_var_recovers_matrix_coefficients():
    A = np.array([[0.5, 0.1, 0.0], [-0.2, 0.4, 0.1], [0.05, 0.0, 0.3]]) * 1.5
    Y = _var1_series(A, [1.0, -0.5, 0.3], 25) + np.array([0.0, 0.0, 0.0])
    fit = fit_var(Y, 1)
    np.testing.assert_allclose(fit.coefs[0], A, atol=1e-6)
    np.testing.assert_allclose(fit.forecast(Y), A @ Y[-1], atol=1e-10)


def test_var_matches_normal_equations_oracle():
    Y = np.random.default_rng(3).standard_normal((40, 2)).cumsum(axis=0)
    B = oracles.ols_var(Y, 2)
    fit = fit_var(Y, 2)
    np.testing.assert_allclose(fit.intercept, B[0], atol=1e-9)
    np.testing.assert_allclose(fit.coefs[0], B[1:3].T, atol=1e-9)
    np.testing.assert_allclose(fit.coefs[1], B[3:5].T, atol=1e-9)


def test_var_degenerate_cases():
    c = np.tile([1.5, -2.0], (20, 1))
    fit = fit_var(c, 1)
    assert "Ridge" in fit.flags
    np.testing.assert_allclose(fit.forecast(c), [1.5, -2.0], atol=1e-12)
    Y = np.random.default_rng(4).standard_normal((12, 3))
    np.testing.assert_array_equal(var_forecast(Y, 0), Y.mean(axis=0))
    shrunk = fit_var(Y, 25)
    assert "OrderShrunk" in shrunk.flags and shrunk.order < 25
    est = VARForecaster(p=1).fit(Y)
    np.testing.assert_allclose(est.forecast(), var_forecast(Y, 1))


# -- random forest ---------------------------------------------------------------------------


def test_rf_constant_and_deterministic():
    assert rf_forecast(np.full(20, 3.25), L=5, seed=0) == 3.25
    y = np.random.default_rng(5).standard_normal(30)
    assert rf_forecast(y, 5, 20, seed=7) == rf_forecast(y, 5, 20, seed=7)


def test_rf_stays_in_training_range():
    y = np.random.default_rng(6).standard_normal(30).cumsum()
    p = rf_forecast(y, 5, 20, seed=1)
    assert y[5:].min() <= p <= y[5:].max()


def test_rf_alternating_sign():
    y = np.array([1.0, -1.0] * 12)
    closer = 0
    for seed in range(9):
        p = rf_forecast(y, L=1, n_estimators=20, seed=seed)
        assert -1 <= p <= 1
        closer += abs(p + y[-1]) < abs(p - y[-1])
    assert closer >= 5


# -- Gaussian process ---------------------------------------------------------------------------


def _dense_gp(X, y, xq, ell, const, sig, noise):
    K = const + sig * oracles.matern32(X, X, ell) + noise * np.eye(len(X))
    k = const + sig * oracles.matern32(xq, X, ell)
    return k @ np.linalg.solve(K, y)


@pytest.mark.parametrize("seed", range(50))
def test_gp_matches_dense_oracle(seed):
    rng = np.random.default_rng(seed)
    n, dim = rng.integers(5, 15), rng.integers(1, 4)
    X = rng.standard_normal((n, dim))
    y = rng.standard_normal(n)
    xq = rng.standard_normal((3, dim))
    ell, const, sig, noise = rng.uniform(0.3, 3), rng.uniform(0.1, 2), rng.uniform(0.5, 2), 1e-3
    gp = GPRegressor(ell, const, sig, noise, relative_noise=False).fit(X, y)
    np.testing.assert_allclose(gp.predict(xq), _dense_gp(X, y, xq, ell, const, sig, noise), atol=1e-8)
    auto = GPRegressor().fit(X, y)
    ref = _dense_gp(X, y, xq, auto.length_scale_, auto.constant_, auto.signal_, auto.noise_)
    np.testing.assert_allclose(auto.predict(xq), ref, atol=1e-8)


def test_gp_interpolates_and_variance_nonnegative():
    X = np.linspace(0, 1, 8)[:, None]
    y = np.sin(3 * X[:, 0])
    gp = GPRegressor(length_scale=0.5, noise=1e-16, relative_noise=False).fit(X, y)
    m, v = gp.predict(X[3:4], return_var=True)
    assert m[0] == pytest.approx(y[3], abs=1e-6)
    assert np.all(gp.predict(np.linspace(-1, 2, 30)[:, None], return_var=True)[1] >= 0)


def test_gp_constant_and_linear_series():
    assert gp_forecast(np.full(20, 5.0))[0] == pytest.approx(5.0, rel=1e-6)
    y = np.arange(30.0)
    m, _ = gp_forecast(y, 5)
    assert 29.0 <= m <= 30.0
    X, t, xn = lag_design(y, 5)
    gp = GPRegressor().fit(X, t)
    ref = _dense_gp(X, t, xn[None, :], gp.length_scale_, gp.constant_, gp.signal_, gp.noise_)
    assert m == pytest.approx(ref[0], abs=1e-8)


# -- pipelines --------------------------------------------------------------------------------


@pytest.mark.parametrize("mode", ["velocity", "log"])
@pytest.mark.parametrize("predictor", ["VAR", "GP"])
def test_rotation_sign_hits(mode, predictor):
    X = _great_circle(150)
    r = pipeline_geometry_aware(X, SPHERE, ForecastConfig(predictor=predictor, mode=mode))
    assert np.mean(r.sign_hits) >= (1.0 if predictor == "VAR" else 0.99)
    assert np.max(np.abs(np.linalg.norm(r.predicted, axis=1) - 1)) < 1e-8


def test_predictions_on_manifold():
    T = ManifoldSpec.torus(3, 1)
    X = simulate_ambient(T, [4, 0, 0], 150, h=0.01, seed=2).points
    for mode in ("velocity", "log"):
        r = pipeline_geometry_aware(X, T, ForecastConfig(mode=mode))
        assert np.max(np.abs(geo.implicit(T, r.predicted))) < 1e-8


@pytest.mark.parametrize("cfg", [dict(predictor="VAR"), dict(predictor="GP"), FAST_RF, dict(mode="log")])
def test_euclidean_reduction(cfg):
    X = build_scenario(ScenarioConfig(5, total_length=140)).points
    c = ForecastConfig(**cfg)
    a = pipeline_geometry_aware(X, EUCLID, c)
    b = pipeline_native(X, c)
    assert matched_settings(a, b)
    assert np.max(np.abs(a.predicted - b.predicted)) <= 1e-10


@pytest.mark.parametrize("cfg", [dict(predictor="VAR"), dict(predictor="GP"), FAST_RF])
def test_causality_both_arms(cfg):
    X = simulate_ambient(SPHERE, [0, 0, 1], 120, h=1e-2, seed=3).points
    c = ForecastConfig(**cfg)
    k = 100
    Y = X.copy()
    Y[k + 1 :] = geo.exp_map(SPHERE, Y[k + 1 :], np.array([0.05, -0.02, 0.01]))
    for run in (lambda P: pipeline_geometry_aware(P, SPHERE, c), lambda P: pipeline_native(P, c)):
        a, b = run(X), run(Y)
        m = a.index <= k + 1
        np.testing.assert_array_equal(a.predicted[m], b.predicted[m])


def test_causality_inferred_geometry():
    X = build_scenario(ScenarioConfig(1, total_length=400, block_length=100)).points
    c = ForecastConfig(geometry_source="inferred")
    Y = X.copy()
    Y[301:] += 0.3
    a, b = pipeline_geometry_aware(X, cfg=c), pipeline_geometry_aware(Y, cfg=c)
    m = a.index <= 301
    np.testing.assert_array_equal(a.predicted[m], b.predicted[m])
    assert a.geometry[: m.sum()] == b.geometry[: m.sum()]
    assert set(a.geometry) <= {"Sphere", "Hyperboloid", "Euclidean3", "Torus"}


def test_native_linear_trend_and_noise():
    t = np.arange(120.0)
    X = np.c_[0.1 * t, -0.2 * t, 0.05 * t + 1]
    r = pipeline_native(X, ForecastConfig())
    assert np.max(np.abs(r.errors)) < 1e-8
    W = np.random.default_rng(4).standard_normal((600, 3)).cumsum(axis=0)
    hits = pipeline_native(W, ForecastConfig()).sign_hits.ravel()
    half_width = 3 * 0.5 / np.sqrt(len(hits))
    assert abs(hits.mean() - 0.5) < half_width


def test_metrics_and_frame_schema():
    X = _great_circle(80)
    r = pipeline_geometry_aware(X, SPHERE, ForecastConfig())
    m = r.metrics()
    assert set(m["coordinates"]["x"]) == {"MAE", "RMSE", "MAPE (%)", "sign_rate", "Sharpe"}
    df = r.to_frame()
    assert list(df.columns[:4]) == ["index", "geometry", "pred_x", "real_x"]
    assert len(df) == len(r.index) == 80 - 1 - ForecastConfig().start


def test_config_validation():
    with pytest.raises(InvalidInput):
        ForecastConfig(predictor="LSTM")
    with pytest.raises(InvalidInput):
        ForecastConfig(var_order=25, window=25)
    with pytest.raises(InvalidInput):
        ForecastConfig(pca_dim=0)
    with pytest.raises(MinWindow):
        pipeline_native(np.zeros((40, 3)), ForecastConfig())
    with pytest.raises(InvalidInput):
        pipeline_geometry_aware(np.zeros((100, 3)), None, ForecastConfig())
