import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.spatial.transform import Rotation

from geoalpha import geometry as geo
from geoalpha.curvature import (
    CurvatureConfig,
    Regime,
    classify_regimes,
    curvature_at,
    curvature_series,
    graph_curvature,
    majority,
    monge_fit,
)
from geoalpha.exceptions import InvalidInput, MinWindow, SingularFit
from geoalpha.geometry import ManifoldSpec
from geoalpha.simulate import simulate_ambient, simulate_torus_intrinsic

NOISELESS = CurvatureConfig(window="rolling", length=40, smooth_len=1)


def _grid(n=8, span=1.0):
    g = np.linspace(-span, span, n)
    x, y = np.meshgrid(g, g)
    return x.ravel(), y.ravel()


def _walk_on_graph(f, steps, h, seed):
    """Brownian motion in the xy-plane lifted onto the graph of f."""
    xy = np.cumsum(np.sqrt(h) * np.random.default_rng(seed).standard_normal((steps, 2)), axis=0)
    return np.c_[xy, f(xy[:, 0], xy[:, 1])]


def test_monge_fit_exact_quadratics():
    x, y = _grid()
    c = monge_fit(np.c_[x, y, x**2 + y**2]).coeffs
    np.testing.assert_allclose(c, [1, 0, 1, 0, 0, 0], atol=1e-12)
    c = monge_fit(np.c_[x, y, x * y]).coeffs
    np.testing.assert_allclose(c, [0, 1, 0, 0, 0, 0], atol=1e-12)


def test_monge_fit_constant_weights_match_ols():
    rng = np.random.default_rng(0)
    P = rng.standard_normal((50, 3))
    a = monge_fit(P).coeffs
    b = monge_fit(P, np.full(50, 0.3)).coeffs
    np.testing.assert_allclose(a, b, atol=1e-12)


def test_monge_fit_normal_equations_hold():
    rng = np.random.default_rng(1)
    P = rng.standard_normal((60, 3))
    w = np.exp(-0.05 * np.arange(60)[::-1])
    beta = monge_fit(P, w).coeffs
    x, y = P[:, 0], P[:, 1]
    A = np.c_[x * x, x * y, y * y, x, y, np.ones(60)]
    g = A.T @ (w**2 * (A @ beta - P[:, 2]))
    assert np.linalg.norm(g) < 1e-8 * np.linalg.norm(A.T @ (w**2 * P[:, 2]))


def test_monge_fit_rank_deficient():
    x = np.linspace(0, 1, 20)
    with pytest.raises(SingularFit):
        monge_fit(np.c_[x, np.zeros(20), x**2])
    with pytest.raises(SingularFit):
        monge_fit(np.zeros((5, 3)))


def test_curvature_at_examples():
    assert curvature_at([1, 0, 1]) == pytest.approx(4 / 81)
    assert curvature_at([0, 1, 0]) == pytest.approx(-0.25)
    assert curvature_at([0, 0, 0]) == 0.0


@settings(max_examples=50, deadline=None)
@given(st.floats(-5, 5), st.floats(-5, 5), st.floats(-5, 5))
def test_curvature_at_sign(a, b, c):
    assert np.sign(curvature_at([a, b, c])) == np.sign(4 * a * c - b * b)


def test_graph_curvature_at_apex_of_paraboloid():
    # z = (x^2 + y^2)/2 osculates the unit sphere at the origin
    assert graph_curvature([0.5, 0, 0.5, 0, 0, 0]) == pytest.approx(1.0)


def test_unit_sphere_median():
    p = simulate_ambient(ManifoldSpec.sphere(1.0), [0, 0, 1], 5000, h=1e-3, seed=0)
    K = curvature_series(p, NOISELESS).K
    assert 0.85 <= np.nanmedian(K) <= 1.15
    assert np.mean(K[np.isfinite(K)] > 0) >= 0.95


def test_plane_is_flat():
    p = simulate_ambient(ManifoldSpec.euclidean(), [0, 0, 0], 5000, h=1e-3, seed=1)
    P = p.points.copy()
    P[:, 2] = 0.3 * P[:, 0] - 0.2 * P[:, 1]
    K = curvature_series(P, NOISELESS).K
    assert np.mean(np.abs(K[np.isfinite(K)]) < 0.01) >= 0.95


def test_saddle_is_negative():
    P = _walk_on_graph(lambda x, y: 0.5 * (x * x - y * y), 5000, 1e-3, 2)
    K = curvature_series(P, NOISELESS).K
    assert np.mean(K[np.isfinite(K)] < 0) >= 0.95


def test_torus_sign_agreement():
    R, r = 3.0, 1.0
    p = simulate_torus_intrinsic(R, r, 0.0, 0.0, 5000, h=1e-3, seed=3)
    K = curvature_series(p, NOISELESS).K
    cphi = np.cos(p.chart[:, 1])
    m = np.isfinite(K) & (np.abs(cphi) > 0.3)
    assert np.mean(np.sign(K[m]) == np.sign(cphi[m])) >= 0.9


def test_rigid_motion_invariance():
    p = simulate_ambient(ManifoldSpec.sphere(1.0), [0, 0, 1], 800, h=1e-3, seed=4).points
    Q = Rotation.from_rotvec([0.3, -1.1, 0.7]).apply(p) + np.array([5.0, -2.0, 1.0])
    cfg = CurvatureConfig()
    a, b = curvature_series(p, cfg).K, curvature_series(Q, cfg).K
    m = np.isfinite(a)
    assert np.array_equal(m, np.isfinite(b))
    assert np.max(np.abs(a[m] - b[m])) < 1e-6


def test_scaling_covariance():
    p = simulate_ambient(ManifoldSpec.sphere(1.0), [0, 0, 1], 600, h=1e-3, seed=5).points
    a = curvature_series(p).K
    b = curvature_series(3.0 * p).K
    m = np.isfinite(a)
    np.testing.assert_allclose(b[m] * 9.0, a[m], rtol=1e-6, atol=1e-9)


def test_series_is_causal_and_gapped_before_window():
    p = simulate_ambient(ManifoldSpec.sphere(1.0), [0, 0, 1], 300, h=1e-3, seed=6).points
    cfg = CurvatureConfig(window="expanding", m0=30, smooth_len=5)
    K = curvature_series(p, cfg).K
    assert np.all(np.isnan(K[: 4 + 29])) and np.all(np.isfinite(K[33:]))
    q = p.copy()
    q[200:] += 1.0
    np.testing.assert_array_equal(curvature_series(q, cfg).K[:200], K[:200])


def test_series_too_short():
    with pytest.raises(MinWindow):
        curvature_series(np.zeros((20, 3)), CurvatureConfig())


def test_config_validation():
    with pytest.raises(InvalidInput):
        CurvatureConfig(m0=5)
    with pytest.raises(InvalidInput):
        CurvatureConfig(kappa_pos=0)
    with pytest.raises(InvalidInput):
        CurvatureConfig(window="sliding")


def test_expanding_variance_non_increasing():
    # bootstrap variance of K at the apex of a noisy spherical cap shrinks with more data
    rng = np.random.default_rng(7)
    sizes = [50, 100, 200, 400]
    variances = []
    for n in sizes:
        ks = []
        for _ in range(100):
            xy = rng.uniform(-0.3, 0.3, (n, 2))
            z = 1 - np.sqrt(1 - (xy**2).sum(1)) + 0.002 * rng.standard_normal(n)
            ks.append(graph_curvature(monge_fit(np.c_[xy, z]).coeffs))
        variances.append(np.var(ks))
    assert all(b <= a for a, b in zip(variances, variances[1:]))


def test_regime_rules():
    r = classify_regimes(np.full(10, 0.05))
    assert all(x is Regime.SPHERE for x in r.labels)
    r = classify_regimes(np.full(10, -0.02), torus_flags=np.ones(10))
    assert all(x is Regime.TORUS for x in r.labels)
    r = classify_regimes(np.array([np.nan, 0.0, -0.5, 0.5]))
    assert r.labels[0] is None
    assert sum(r.shares.values()) == pytest.approx(1.0)
    assert r.shares["Flat"] == pytest.approx(1 / 3)
    assert majority(classify_regimes(np.full(5, -1.0))) is Regime.HYPERBOLIC
    assert Regime.TORUS.geometry == "Torus"


def test_regime_shares_from_reference_quantiles():
    # piecewise-linear inverse CDF through published quantiles of K
    probs = [0.0, 0.25, 0.5, 0.739, 0.75, 0.983, 1.0]
    knots = [-0.125, -0.0247, -0.0186, -0.01, -0.0088, 0.01, 0.0142]
    u = (np.arange(100_000) + 0.5) / 100_000
    K = np.interp(u, probs, knots)
    s = classify_regimes(K).shares
    assert s["HyperbolicLike"] == pytest.approx(0.739, abs=0.002)
    assert s["Flat"] == pytest.approx(0.244, abs=0.002)
    assert s["SphereLike"] == pytest.approx(0.017, abs=0.002)
