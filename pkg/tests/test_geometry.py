import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from geoalpha.exceptions import AntipodalPoints, DegenerateNormal, InvalidInput, OffManifold
from geoalpha.geometry import (
    Kind,
    ManifoldSpec,
    analytic_gaussian_curvature,
    chart_jacobian,
    exp_map,
    from_chart,
    karcher_mean,
    log_map,
    mean_curvature_vector,
    residual,
    sample_uniform,
    tangent_projector,
    to_chart,
    unit_normal,
    wrap_angle,
)

from . import oracles

SPHERE = ManifoldSpec.sphere(1.0)
TORUS = ManifoldSpec.torus(3.0, 1.0)
HYPER = ManifoldSpec.hyperboloid(1.0, 1.0, 1.0)
HYPER_ANISO = ManifoldSpec.hyperboloid(1.0, 1.5, 0.7)
SURFACES = [SPHERE, ManifoldSpec.sphere(2.5), TORUS, ManifoldSpec.torus(2.0, 0.5), HYPER, HYPER_ANISO]


def _phi(spec):
    return {
        Kind.SPHERE: lambda: oracles.phi_sphere(*spec.params),
        Kind.TORUS: lambda: oracles.phi_torus(*spec.params),
        Kind.HYPERBOLOID: lambda: oracles.phi_hyperboloid(*spec.params),
    }[spec.kind]()


def _random_surface_points(spec, n, seed):
    return sample_uniform(spec, n, seed)


# -- spec validation -------------------------------------------------------------


def test_spec_rejects_bad_parameters():
    with pytest.raises(InvalidInput):
        ManifoldSpec.sphere(0.0)
    with pytest.raises(InvalidInput):
        ManifoldSpec.torus(1.0, 1.0)
    with pytest.raises(InvalidInput):
        ManifoldSpec.hyperboloid(1.0, -1.0, 1.0)
    with pytest.raises(InvalidInput):
        ManifoldSpec(Kind.SPHERE, (1.0, 2.0))


def test_spec_dict_round_trip():
    for spec in SURFACES + [ManifoldSpec.euclidean()]:
        assert ManifoldSpec.from_dict(spec.to_dict()) == spec
    assert TORUS.R == 3.0 and TORUS.r == 1.0
    assert HYPER_ANISO.b == 1.5


# -- projector ------------------------------------------------------------------------


def test_projector_at_sphere_pole():
    np.testing.assert_allclose(tangent_projector(SPHERE, [0, 0, 1]), np.diag([1.0, 1.0, 0.0]), atol=1e-15)


def test_projector_euclidean_is_identity():
    np.testing.assert_array_equal(tangent_projector(ManifoldSpec.euclidean(), [3.0, -1.0, 2.0]), np.eye(3))


def test_projector_torus_outer_equator():
    P = tangent_projector(TORUS, [4.0, 0.0, 0.0])
    n = oracles.fd_normal(oracles.phi_torus(3, 1), [4.0, 0, 0])
    np.testing.assert_allclose(n, [1, 0, 0], atol=1e-8)
    np.testing.assert_allclose(P @ n, 0, atol=1e-8)
    np.testing.assert_allclose(P @ P, P, atol=1e-12)


@pytest.mark.parametrize("spec", SURFACES, ids=str)
def test_projector_properties_on_random_points(spec):
    X = _random_surface_points(spec, 1000, 11)
    P = tangent_projector(spec, X)
    n = unit_normal(spec, X)
    assert np.max(np.linalg.norm(P @ P - P, axis=(1, 2))) < 1e-10
    assert np.max(np.abs(P - np.swapaxes(P, 1, 2))) < 1e-15
    assert np.max(np.abs(np.einsum("nij,nj->ni", P, n))) < 1e-12


@pytest.mark.parametrize("spec", SURFACES, ids=str)
def test_normal_matches_finite_difference(spec):
    X = _random_surface_points(spec, 20, 3)
    f = _phi(spec)
    for x, n in zip(X, unit_normal(spec, X)):
        np.testing.assert_allclose(n, oracles.fd_normal(f, x), atol=1e-6)


def test_degenerate_normal():
    with pytest.raises(DegenerateNormal):
        tangent_projector(SPHERE, [0.0, 0.0, 0.0])
    with pytest.raises(DegenerateNormal):
        tangent_projector(TORUS, [0.0, 0.0, 0.5])  # on the symmetry axis
    with pytest.raises(DegenerateNormal):
        tangent_projector(TORUS, [3.0, 0.0, 0.0])  # on the core circle


# -- mean curvature ---------------------------------------------------------------------


def test_mean_curvature_examples():
    np.testing.assert_allclose(mean_curvature_vector(SPHERE, [0, 0, 1]), [0, 0, 2])
    np.testing.assert_array_equal(mean_curvature_vector(ManifoldSpec.euclidean(), [1, 2, 3]), 0)
    H = mean_curvature_vector(TORUS, [4.0, 0.0, 0.0])
    np.testing.assert_allclose(H, [1.25, 0, 0], atol=1e-12)
    np.testing.assert_allclose(H, oracles.fd_mean_curvature_vector(oracles.phi_torus(3, 1), [4, 0, 0]), atol=1e-5)


@pytest.mark.parametrize("spec", SURFACES, ids=str)
def test_mean_curvature_matches_fd_divergence(spec):
    X = _random_surface_points(spec, 15, 5)
    f = _phi(spec)
    for x, H in zip(X, mean_curvature_vector(spec, X)):
        np.testing.assert_allclose(H, oracles.fd_mean_curvature_vector(f, x), atol=2e-5)


@pytest.mark.parametrize("spec", SURFACES, ids=str)
def test_mean_curvature_parallel_to_normal(spec):
    X = _random_surface_points(spec, 1000, 8)
    H = mean_curvature_vector(spec, X)
    n = unit_normal(spec, X)
    cross = np.linalg.norm(np.cross(H, n), axis=1)
    assert np.all(cross <= 1e-9 * np.maximum(np.linalg.norm(H, axis=1), 1e-300) + 1e-300)


def test_sphere_mean_curvature_closed_form():
    spec = ManifoldSpec.sphere(2.0)
    X = _random_surface_points(spec, 100, 2)
    np.testing.assert_allclose(mean_curvature_vector(spec, X), 2 * X / 4.0, atol=1e-12)


# -- charts -------------------------------------------------------------------------------


def test_chart_examples():
    np.testing.assert_allclose(from_chart(ManifoldSpec.sphere(2.0), [0, np.pi / 2]), [2, 0, 0], atol=1e-15)
    np.testing.assert_allclose(from_chart(TORUS, [0, 0]), [4, 0, 0])
    np.testing.assert_allclose(from_chart(ManifoldSpec.hyperboloid(1, 1, 2), [0, np.pi / 2]), [0, 1, 0], atol=1e-15)


@pytest.mark.parametrize("spec", SURFACES, ids=str)
def test_chart_round_trip(spec):
    X = _random_surface_points(spec, 1000, 21)
    c = to_chart(spec, X)
    assert np.max(np.linalg.norm(from_chart(spec, c) - X, axis=1)) < 1e-9


def test_chart_ranges():
    c = to_chart(TORUS, _random_surface_points(TORUS, 500, 1))
    assert np.all((c >= 0) & (c < 2 * np.pi))
    c = to_chart(SPHERE, _random_surface_points(SPHERE, 500, 1))
    assert np.all((c[:, 0] >= 0) & (c[:, 0] < 2 * np.pi) & (c[:, 1] >= 0) & (c[:, 1] <= np.pi))
    c = to_chart(HYPER, _random_surface_points(HYPER, 500, 1))
    assert np.all((c[:, 1] >= 0) & (c[:, 1] < 2 * np.pi))


def test_to_chart_off_manifold():
    with pytest.raises(OffManifold):
        to_chart(SPHERE, [0, 0, 1.5])
    # no check when the tolerance is disabled
    np.testing.assert_allclose(to_chart(SPHERE, [0, 0, 1.5], tol=None), [0, 0])


# -- log / exp --------------------------------------------------------------------------------


def test_wrap_examples():
    assert wrap_angle(3 * np.pi / 2) == pytest.approx(-np.pi / 2)
    assert wrap_angle(np.pi) == pytest.approx(-np.pi)
    assert wrap_angle(0.0) == 0.0


@given(st.floats(-1e4, 1e4, allow_nan=False))
def test_wrap_range_and_congruence(a):
    w = wrap_angle(a)
    assert -np.pi <= w < np.pi
    k = (a - w) / (2 * np.pi)
    assert abs(k - round(k)) < 1e-6


def test_log_examples():
    mu = np.array([0.0, 0.0, 1.0])
    np.testing.assert_array_equal(log_map(SPHERE, mu, mu), 0.0)
    v = log_map(SPHERE, mu, [1, 0, 0])
    np.testing.assert_allclose(v, [np.pi / 2, 0, 0], atol=1e-15)
    np.testing.assert_allclose(exp_map(SPHERE, mu, v), [1, 0, 0], atol=1e-15)
    base = from_chart(TORUS, [0, 0])
    point = from_chart(TORUS, [np.pi / 4, -np.pi / 4])
    np.testing.assert_allclose(log_map(TORUS, base, point), [np.pi / 4, -np.pi / 4], atol=1e-12)


def test_sphere_antipodal_error():
    with pytest.raises(AntipodalPoints):
        log_map(SPHERE, [0, 0, 1], [0, 0, -1])


def test_log_rejects_nan():
    with pytest.raises(InvalidInput):
        log_map(SPHERE, [0, 0, 1], [np.nan, 0, 0])


@pytest.mark.parametrize("spec", SURFACES + [ManifoldSpec.euclidean()], ids=str)
def test_log_exp_round_trip(spec):
    rng = np.random.default_rng(4)
    if spec.kind is Kind.EUCLIDEAN3:
        A, B = rng.normal(size=(2, 1000, 3))
    else:
        A = _random_surface_points(spec, 1000, 30)
        B = _random_surface_points(spec, 1000, 31)
    if spec.kind is Kind.SPHERE:
        keep = np.sum(A * B, axis=1) / spec.R**2 > -0.999
        A, B = A[keep], B[keep]
    v = log_map(spec, A, B)
    assert np.max(np.linalg.norm(exp_map(spec, A, v) - B, axis=1)) < 1e-9
    np.testing.assert_allclose(log_map(spec, A, A), 0.0, atol=1e-12)
    if spec.tangent_dim == 2:
        assert np.all((v[:, -1] >= -np.pi) & (v[:, -1] < np.pi))
    elif spec.kind is Kind.SPHERE:
        n = unit_normal(spec, A)
        rel = np.abs(np.sum(n * v, axis=1)) / np.maximum(np.linalg.norm(v, axis=1), 1e-300)
        assert np.max(rel) < 1e-9


def test_sphere_log_norm_is_geodesic_distance():
    A = _random_surface_points(SPHERE, 200, 2)
    B = _random_surface_points(SPHERE, 200, 3)
    d = np.arccos(np.clip(np.sum(A * B, axis=1), -1, 1))
    keep = d < 3.1
    v = log_map(SPHERE, A[keep], B[keep])
    np.testing.assert_allclose(np.linalg.norm(v, axis=1), d[keep], atol=1e-7)


# -- Karcher mean -----------------------------------------------------------------------------


def test_karcher_examples():
    p = np.array([0.6, 0.0, 0.8])
    np.testing.assert_allclose(karcher_mean(SPHERE, [p]), p)
    eps = 0.3
    pts = [[np.sin(eps), 0, np.cos(eps)], [-np.sin(eps), 0, np.cos(eps)]]
    np.testing.assert_allclose(karcher_mean(SPHERE, pts), [0, 0, 1], atol=1e-12)


@pytest.mark.parametrize("hemisphere", [1, -1])
def test_karcher_three_points_latitude(hemisphere):
    phi = np.pi / 4 if hemisphere == 1 else 3 * np.pi / 4
    pts = from_chart(SPHERE, [[t, phi] for t in (0.1, 0.1 + 2 * np.pi / 3, 0.1 + 4 * np.pi / 3)])
    mu = karcher_mean(SPHERE, pts)
    np.testing.assert_allclose(mu, [0, 0, hemisphere], atol=1e-10)
    np.testing.assert_allclose(mu, oracles.sphere_karcher_gd(pts), atol=1e-6)


def test_karcher_matches_gradient_descent_oracle():
    rng = np.random.default_rng(0)
    base = np.array([0.3, -0.2, 0.93])
    base /= np.linalg.norm(base)
    pts = base + 0.4 * rng.normal(size=(12, 3))
    pts /= np.linalg.norm(pts, axis=1, keepdims=True)
    mu = karcher_mean(SPHERE, pts, tol=1e-13)
    np.testing.assert_allclose(mu, oracles.sphere_karcher_gd(pts), atol=1e-6)
    assert np.linalg.norm(log_map(SPHERE, mu, pts).mean(axis=0)) < 1e-12


def test_karcher_torus_chart_mean():
    c = np.array([[0.1, 6.2], [0.3, 0.2], [6.1, 0.0]])
    mu = karcher_mean(TORUS, from_chart(TORUS, c))
    expected = np.array([wrap_angle(c[:, 0] - 0.1).mean() + 0.1, wrap_angle(c[:, 1]).mean()])
    np.testing.assert_allclose(wrap_angle(to_chart(TORUS, mu) - expected), 0, atol=1e-10)


# -- curvature oracle ------------------------------------------------------------------------------


def test_curvature_examples():
    assert analytic_gaussian_curvature(ManifoldSpec.sphere(2.0), [0.3, 1.0]) == pytest.approx(0.25)
    assert analytic_gaussian_curvature(TORUS, [0.0, 0.0]) == pytest.approx(0.25)
    assert analytic_gaussian_curvature(TORUS, [0.0, np.pi]) == pytest.approx(-0.5)
    assert analytic_gaussian_curvature(TORUS, [0.0, np.pi / 2]) == pytest.approx(0.0, abs=1e-16)
    assert analytic_gaussian_curvature(ManifoldSpec.euclidean(), [1.0, 2.0, 3.0]) == 0.0


@pytest.mark.parametrize(
    "spec,param",
    [
        (TORUS, oracles.param_torus(3, 1)),
        (ManifoldSpec.torus(2, 0.5), oracles.param_torus(2, 0.5)),
        (HYPER, oracles.param_hyperboloid(1, 1, 1)),
        (HYPER_ANISO, oracles.param_hyperboloid(1, 1.5, 0.7)),
        (ManifoldSpec.sphere(1.7), oracles.param_sphere(1.7)),
    ],
    ids=str,
)
def test_curvature_matches_fundamental_forms(spec, param):
    rng = np.random.default_rng(9)
    for _ in range(20):
        s = rng.uniform(-1, 1) if spec.kind is Kind.HYPERBOLOID else rng.uniform(0, 2 * np.pi)
        t = rng.uniform(0.3, 2.8) if spec.kind is Kind.SPHERE else rng.uniform(0, 2 * np.pi)
        K = analytic_gaussian_curvature(spec, [s, t])
        assert K == pytest.approx(oracles.fd_gaussian_curvature(param, s, t), abs=1e-5)


@given(st.floats(0.1, 10), st.floats(0.01, 0.99))
def test_torus_curvature_sign_flip(R, frac):
    spec = ManifoldSpec.torus(R, R * frac)
    assert analytic_gaussian_curvature(spec, [0, 0]) * analytic_gaussian_curvature(spec, [0, np.pi]) < 0


# -- sampling --------------------------------------------------------------------------------------


def test_sampler_sphere_mean_z():
    X = sample_uniform(SPHERE, 10_000, 0)
    assert abs(X[:, 2].mean()) < 3 / np.sqrt(10_000)


def test_sampler_torus_outer_fraction():
    X = sample_uniform(TORUS, 10_000, 1)
    frac = np.mean(np.cos(to_chart(TORUS, X)[:, 1]) > 0)
    assert frac == pytest.approx(0.5 + 1 / (3 * np.pi), abs=0.02)


def test_sampler_empty_and_on_surface():
    assert sample_uniform(HYPER, 0, 0).shape == (0, 3)
    for spec in SURFACES:
        X = sample_uniform(spec, 2000, 5)
        assert np.max(residual(spec, X)) < 1e-9 * spec.scale


def test_sampler_is_seeded():
    np.testing.assert_array_equal(sample_uniform(TORUS, 50, 7), sample_uniform(TORUS, 50, 7))


def test_sampler_hyperboloid_area_chi_square():
    from scipy.stats import chisquare

    spec = HYPER
    X = sample_uniform(spec, 20_000, 2, u_range=(-1.0, 1.0))
    u = to_chart(spec, X)[:, 0]
    edges = np.linspace(-1, 1, 11)
    counts, _ = np.histogram(u, edges)
    # a=b=c=1: dA = cosh(u) sqrt(cosh^2 u + sinh^2 u) du dv
    fine = np.linspace(-1, 1, 20001)
    dens = np.cosh(fine) * np.sqrt(np.cosh(fine) ** 2 + np.sinh(fine) ** 2)
    mass = np.array([np.trapezoid(dens[(fine >= a) & (fine <= b)], fine[(fine >= a) & (fine <= b)]) for a, b in zip(edges[:-1], edges[1:])])
    expected = mass / mass.sum() * counts.sum()
    assert chisquare(counts, expected).pvalue > 1e-3


def test_sampler_sphere_chi_square_in_z():
    from scipy.stats import chisquare

    X = sample_uniform(SPHERE, 20_000, 3)
    counts, _ = np.histogram(X[:, 2], np.linspace(-1, 1, 11))
    assert chisquare(counts).pvalue > 1e-3


def test_euclidean_sampling_rejected():
    with pytest.raises(InvalidInput):
        sample_uniform(ManifoldSpec.euclidean(), 5, 0)


@settings(max_examples=50)
@given(st.floats(0.5, 5.0), st.floats(0, 2 * np.pi), st.floats(0.05, 3.09))
def test_sphere_chart_round_trip_property(R, theta, phi):
    spec = ManifoldSpec.sphere(R)
    x = from_chart(spec, [theta, phi])
    np.testing.assert_allclose(from_chart(spec, to_chart(spec, x)), x, atol=1e-9 * spec.scale)


@pytest.mark.parametrize("spec", SURFACES, ids=str)
def test_chart_jacobian_matches_finite_differences(spec):
    c = to_chart(spec, sample_uniform(spec, 20, rng_seed=2))
    J = chart_jacobian(spec, c)
    assert J.shape == (20, 3, 2)
    h = 1e-6
    for k in range(2):
        e = np.zeros(2)
        e[k] = h
        fd = (from_chart(spec, c + e) - from_chart(spec, c - e)) / (2 * h)
        np.testing.assert_allclose(J[..., k], fd, atol=1e-6 * max(spec.params))
    # columns span the tangent plane
    n = unit_normal(spec, from_chart(spec, c))
    np.testing.assert_allclose(np.einsum("nik,ni->nk", J, n), 0.0, atol=1e-9 * max(spec.params))


def test_chart_jacobian_rejects_euclidean():
    with pytest.raises(InvalidInput):
        chart_jacobian(ManifoldSpec.euclidean(), [0.0, 0.0])
