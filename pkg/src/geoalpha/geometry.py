"""Surfaces in R^3: charts, projectors, curvature drift, log/exp maps.

Four geometries are supported: the unconstrained ambient space
(``Euclidean3``), the sphere ``S^2(R)``, the torus ``T^2(R, r)`` and the
one-sheeted hyperboloid ``x^2/a^2 + y^2/b^2 - z^2/c^2 = 1``.

Points are numpy arrays with a trailing axis of length 3; every function
broadcasts over leading axes. Chart coordinates have a trailing axis of
length 2 (sphere ``(theta, phi)``, torus ``(theta, phi)``, hyperboloid
``(u, v)``) and angles are stored in ``[0, 2*pi)`` (sphere polar angle in
``[0, pi]``). Sphere and Euclidean tangent vectors are ambient 3-vectors;
torus and hyperboloid tangent vectors are chart increments, with angular
components wrapped to ``[-pi, pi)``. The hyperboloid maps difference the
orthogonal chart coordinates, which matches the Riemannian maps only for
small moves.
"""

from dataclasses import dataclass
from enum import Enum

import numpy as np

from ._validation import check_int, check_positive, rng_from
from .exceptions import (
    AntipodalPoints,
    ConvergenceFailure,
    DegenerateNormal,
    InvalidInput,
    OffManifold,
)

TWO_PI = 2.0 * np.pi
_DEGENERATE_GRAD = 1e-12


class Kind(str, Enum):
    EUCLIDEAN3 = "Euclidean3"
    SPHERE = "Sphere"
    TORUS = "Torus"
    HYPERBOLOID = "Hyperboloid"

    @property
    def short(self):
        return {"Euclidean3": "E", "Sphere": "S", "Torus": "T", "Hyperboloid": "H"}[self.value]


_PARAM_NAMES = {
    Kind.EUCLIDEAN3: (),
    Kind.SPHERE: ("R",),
    Kind.TORUS: ("R", "r"),
    Kind.HYPERBOLOID: ("a", "b", "c"),
}


@dataclass(frozen=True)
class ManifoldSpec:
    """A geometry kind together with its shape parameters.

    Use the constructors :meth:`sphere`, :meth:`torus`,
    :meth:`hyperboloid` and :meth:`euclidean` rather than building the
    parameter tuple by hand.
    """

    kind: Kind
    params: tuple = ()

    def __post_init__(self):
        kind = Kind(self.kind)
        object.__setattr__(self, "kind", kind)
        names = _PARAM_NAMES[kind]
        params = tuple(float(p) for p in self.params)
        if len(params) != len(names):
            raise InvalidInput(f"{kind.value} expects parameters {names}, got {params}")
        for name, value in zip(names, params):
            check_positive(value, name)
        if kind is Kind.TORUS and not params[0] > params[1]:
            raise InvalidInput(f"torus needs R > r, got R={params[0]}, r={params[1]}")
        object.__setattr__(self, "params", params)

    @classmethod
    def euclidean(cls):
        return cls(Kind.EUCLIDEAN3, ())

    @classmethod
    def sphere(cls, R=1.0):
        return cls(Kind.SPHERE, (R,))

    @classmethod
    def torus(cls, R=3.0, r=1.0):
        return cls(Kind.TORUS, (R, r))

    @classmethod
    def hyperboloid(cls, a=1.0, b=1.0, c=1.0):
        return cls(Kind.HYPERBOLOID, (a, b, c))

    def __getattr__(self, name):
        # named access to shape parameters: spec.R, spec.r, spec.a, ...
        if name in ("kind", "params"):
            raise AttributeError(name)
        names = _PARAM_NAMES[self.kind]
        if name in names:
            return self.params[names.index(name)]
        raise AttributeError(f"{self.kind.value} has no parameter {name!r}")

    @property
    def param_dict(self):
        return dict(zip(_PARAM_NAMES[self.kind], self.params))

    @property
    def scale(self):
        """Length scale used to relax absolute tolerances for large radii."""
        return max([1.0, *self.params])

    @property
    def tangent_dim(self):
        """Length of the tangent-vector representation used by log/exp."""
        return 2 if self.kind in (Kind.TORUS, Kind.HYPERBOLOID) else 3

    def to_dict(self):
        return {"kind": self.kind.value, "params": self.param_dict}

    @classmethod
    def from_dict(cls, d):
        kind = Kind(d["kind"])
        params = d.get("params", {})
        return cls(kind, tuple(params[n] for n in _PARAM_NAMES[kind]))

    def __str__(self):
        inner = ", ".join(f"{k}={v:g}" for k, v in self.param_dict.items())
        return f"{self.kind.value}({inner})"


def wrap_angle(alpha):
    """Shortest-arc representative of an angle in ``[-pi, pi)``."""
    return np.mod(np.asarray(alpha, dtype=float) + np.pi, TWO_PI) - np.pi


def _mod2pi(alpha):
    out = np.mod(alpha, TWO_PI)
    # np.mod can return exactly 2*pi for tiny negative inputs
    return np.where(out >= TWO_PI, 0.0, out)


def _points(x):
    x = np.asarray(x, dtype=float)
    if x.shape[-1:] != (3,):
        raise InvalidInput(f"points need a trailing axis of length 3, got {x.shape}")
    if not np.all(np.isfinite(x)):
        raise InvalidInput("points contain non-finite values")
    return x


# -- implicit surface -------------------------------------------------------


def implicit(spec, x):
    """Implicit function whose zero set is the surface (0 for Euclidean3)."""
    x = _points(x)
    k = spec.kind
    if k is Kind.EUCLIDEAN3:
        return np.zeros(x.shape[:-1])
    if k is Kind.SPHERE:
        return np.sum(x * x, axis=-1) - spec.R**2
    if k is Kind.TORUS:
        rho = np.hypot(x[..., 0], x[..., 1])
        return (spec.R - rho) ** 2 + x[..., 2] ** 2 - spec.r**2
    a, b, c = spec.params
    return x[..., 0] ** 2 / a**2 + x[..., 1] ** 2 / b**2 - x[..., 2] ** 2 / c**2 - 1.0


def implicit_gradient(spec, x):
    x = _points(x)
    k = spec.kind
    if k is Kind.EUCLIDEAN3:
        return np.zeros_like(x)
    if k is Kind.SPHERE:
        return 2.0 * x
    if k is Kind.TORUS:
        rho = np.hypot(x[..., 0], x[..., 1])
        with np.errstate(divide="ignore", invalid="ignore"):
            f = np.where(rho > 0, -2.0 * (spec.R - rho) / rho, np.nan)
        return np.stack([f * x[..., 0], f * x[..., 1], 2.0 * x[..., 2]], axis=-1)
    a, b, c = spec.params
    return np.stack([2 * x[..., 0] / a**2, 2 * x[..., 1] / b**2, -2 * x[..., 2] / c**2], axis=-1)


def unit_normal(spec, x):
    """Unit normal ``grad(phi)/|grad(phi)|``; raises DegenerateNormal where it vanishes."""
    g = implicit_gradient(spec, x)
    norm = np.linalg.norm(g, axis=-1)
    bad = ~np.isfinite(norm) | (norm < _DEGENERATE_GRAD)
    if np.any(bad):
        raise DegenerateNormal("implicit gradient vanishes (or is undefined) at the given point")
    return g / norm[..., None]


def residual(spec, x):
    """First-order distance to the surface, ``|phi(x)| / |grad phi(x)|``."""
    x = _points(x)
    if spec.kind is Kind.EUCLIDEAN3:
        return np.zeros(x.shape[:-1])
    if spec.kind is Kind.SPHERE:
        return np.abs(np.linalg.norm(x, axis=-1) - spec.R)
    if spec.kind is Kind.TORUS:
        d = np.hypot(np.hypot(x[..., 0], x[..., 1]) - spec.R, x[..., 2])
        return np.abs(d - spec.r)
    g = np.linalg.norm(implicit_gradient(spec, x), axis=-1)
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(g > 0, np.abs(implicit(spec, x)) / g, np.inf)


def tangent_projector(spec, x):
    """Orthogonal projector ``I - n n^T`` onto the tangent plane at ``x``."""
    x = _points(x)
    eye = np.broadcast_to(np.eye(3), x.shape[:-1] + (3, 3))
    if spec.kind is Kind.EUCLIDEAN3:
        return eye.copy()
    n = unit_normal(spec, x)
    return eye - n[..., :, None] * n[..., None, :]


def mean_curvature_vector(spec, x):
    """Mean-curvature vector ``H = (div n) n`` of the implicit surface.

    For the sphere this is ``2 x / |x|^2``; ``-H/2`` is the Ito drift
    that keeps constrained Brownian motion on the surface.
    """
    x = _points(x)
    if spec.kind is Kind.EUCLIDEAN3:
        return np.zeros_like(x)
    n = unit_normal(spec, x)
    if spec.kind is Kind.TORUS:
        rho = np.hypot(x[..., 0], x[..., 1])
        d = np.hypot(rho - spec.R, x[..., 2])
        div_n = 1.0 / d + (rho - spec.R) / (rho * d)
    else:
        g = implicit_gradient(spec, x)
        if spec.kind is Kind.SPHERE:
            hess = np.array([2.0, 2.0, 2.0])
        else:
            a, b, c = spec.params
            hess = np.array([2 / a**2, 2 / b**2, -2 / c**2])
        gn = np.linalg.norm(g, axis=-1)
        div_n = hess.sum() / gn - np.sum(g * g * hess, axis=-1) / gn**3
    return div_n[..., None] * n


def project_to_surface(spec, x, max_iter=50):
    """Map points onto the surface.

    Sphere and torus use the exact closest point; the hyperboloid uses
    Newton steps along the gradient until the implicit residual is at
    machine precision.
    """
    x = _points(x)
    k = spec.kind
    if k is Kind.EUCLIDEAN3:
        return x.copy()
    if k is Kind.SPHERE:
        norm = np.linalg.norm(x, axis=-1, keepdims=True)
        if np.any(norm == 0):
            raise DegenerateNormal("cannot project the origin onto a sphere")
        return spec.R * x / norm
    if k is Kind.TORUS:
        return from_chart(spec, to_chart(spec, x, tol=None))
    y = x.copy()
    for _ in range(max_iter):
        f = implicit(spec, y)
        if np.all(np.abs(f) < 1e-15):
            break
        g = implicit_gradient(spec, y)
        y = y - (f / np.sum(g * g, axis=-1))[..., None] * g
    return y


# -- charts ------------------------------------------------------------------


def to_chart(spec, x, tol=1e-6):
    """Cartesian points to chart coordinates.

    ``tol`` bounds the allowed distance from the surface (scaled by
    ``spec.scale``); pass ``None`` to convert off-surface points by
    projection without checking. Euclidean3 charts are the identity.
    """
    x = _points(x)
    k = spec.kind
    if k is Kind.EUCLIDEAN3:
        return x.copy()
    if tol is not None:
        res = residual(spec, x)
        if np.any(res > tol * spec.scale):
            raise OffManifold(f"point off {spec} by {np.max(res):.3g} (> {tol * spec.scale:.3g})")
    if k is Kind.SPHERE:
        norm = np.linalg.norm(x, axis=-1)
        if np.any(norm == 0):
            raise DegenerateNormal("the origin has no spherical chart")
        theta = _mod2pi(np.arctan2(x[..., 1], x[..., 0]))
        phi = np.arccos(np.clip(x[..., 2] / norm, -1.0, 1.0))
        return np.stack([theta, phi], axis=-1)
    if k is Kind.TORUS:
        rho = np.hypot(x[..., 0], x[..., 1])
        theta = _mod2pi(np.arctan2(x[..., 1], x[..., 0]))
        phi = _mod2pi(np.arctan2(x[..., 2], rho - spec.R))
        return np.stack([theta, phi], axis=-1)
    a, b, c = spec.params
    u = np.arcsinh(x[..., 2] / c)
    v = _mod2pi(np.arctan2(x[..., 1] / b, x[..., 0] / a))
    return np.stack([u, v], axis=-1)


def from_chart(spec, coords):
    """Chart coordinates to Cartesian points (Euclidean3 charts are the identity)."""
    c = np.asarray(coords, dtype=float)
    k = spec.kind
    if k is Kind.EUCLIDEAN3:
        if c.shape[-1:] != (3,):
            raise InvalidInput("Euclidean3 chart coordinates are Cartesian 3-vectors")
        return c.copy()
    if c.shape[-1:] != (2,):
        raise InvalidInput(f"{k.value} chart coordinates need a trailing axis of length 2")
    if not np.all(np.isfinite(c)):
        raise InvalidInput("chart coordinates contain non-finite values")
    s, t = c[..., 0], c[..., 1]
    if k is Kind.SPHERE:
        R = spec.R
        return np.stack([R * np.sin(t) * np.cos(s), R * np.sin(t) * np.sin(s), R * np.cos(t)], axis=-1)
    if k is Kind.TORUS:
        R, r = spec.params
        w = R + r * np.cos(t)
        return np.stack([w * np.cos(s), w * np.sin(s), r * np.sin(t)], axis=-1)
    a, b, cc = spec.params
    return np.stack([a * np.cosh(s) * np.cos(t), b * np.cosh(s) * np.sin(t), cc * np.sinh(s)], axis=-1)


def chart_jacobian(spec, coords):
    """Partial derivatives of :func:`from_chart`, shape ``(..., 3, 2)``."""
    c = np.asarray(coords, dtype=float)
    s, t = c[..., 0], c[..., 1]
    k = spec.kind
    if k is Kind.SPHERE:
        R = spec.R
        ds = np.stack([-R * np.sin(t) * np.sin(s), R * np.sin(t) * np.cos(s), np.zeros_like(s)], axis=-1)
        dt = np.stack([R * np.cos(t) * np.cos(s), R * np.cos(t) * np.sin(s), -R * np.sin(t)], axis=-1)
    elif k is Kind.TORUS:
        R, r = spec.params
        w = R + r * np.cos(t)
        ds = np.stack([-w * np.sin(s), w * np.cos(s), np.zeros_like(s)], axis=-1)
        dt = np.stack([-r * np.sin(t) * np.cos(s), -r * np.sin(t) * np.sin(s), r * np.cos(t)], axis=-1)
    elif k is Kind.HYPERBOLOID:
        a, b, cc = spec.params
        ds = np.stack([a * np.sinh(s) * np.cos(t), b * np.sinh(s) * np.sin(t), cc * np.cosh(s)], axis=-1)
        dt = np.stack([-a * np.cosh(s) * np.sin(t), b * np.cosh(s) * np.cos(t), np.zeros_like(s)], axis=-1)
    else:
        raise InvalidInput("Euclidean3 has no 2-D chart")
    return np.stack([ds, dt], axis=-1)


def canonical_chart(spec, coords):
    """Reduce chart coordinates to their canonical ranges."""
    c = np.array(coords, dtype=float)
    if spec.kind is Kind.TORUS:
        return _mod2pi(c)
    if spec.kind is Kind.HYPERBOLOID:
        c[..., 1] = _mod2pi(c[..., 1])
        return c
    if spec.kind is Kind.SPHERE:
        return to_chart(spec, from_chart(spec, c), tol=None)
    return c


# -- log / exp -----------------------------------------------------------------


def log_chart(spec, base, point):
    """Chart-level log map for the torus and hyperboloid."""
    base = np.asarray(base, dtype=float)
    point = np.asarray(point, dtype=float)
    d = point - base
    if spec.kind is Kind.TORUS:
        return wrap_angle(d)
    if spec.kind is Kind.HYPERBOLOID:
        return np.stack([d[..., 0], wrap_angle(d[..., 1])], axis=-1)
    raise InvalidInput(f"log_chart is defined for Torus and Hyperboloid, not {spec.kind.value}")


def exp_chart(spec, base, v):
    base = np.asarray(base, dtype=float)
    out = base + np.asarray(v, dtype=float)
    if spec.kind is Kind.TORUS:
        return _mod2pi(out)
    if spec.kind is Kind.HYPERBOLOID:
        return np.stack([out[..., 0], _mod2pi(out[..., 1])], axis=-1)
    raise InvalidInput(f"exp_chart is defined for Torus and Hyperboloid, not {spec.kind.value}")


def _sphere_log(R, mu, p):
    dot = np.sum(mu * p, axis=-1)
    w = p - (dot / R**2)[..., None] * mu
    wn = np.linalg.norm(w, axis=-1)
    theta = np.arctan2(wn / R, dot / R**2)
    if np.any(np.pi - theta < 1e-7):
        raise AntipodalPoints("sphere log map is undefined for antipodal points")
    with np.errstate(divide="ignore", invalid="ignore"):
        scale = np.where(wn > 0, theta * R / wn, 0.0)
    return scale[..., None] * w


def _sphere_exp(R, mu, v):
    v = v - (np.sum(v * mu, axis=-1) / R**2)[..., None] * mu
    nv = np.linalg.norm(v, axis=-1)
    with np.errstate(divide="ignore", invalid="ignore"):
        direction = np.where(nv[..., None] > 0, v / nv[..., None], 0.0)
    return np.cos(nv / R)[..., None] * mu + (R * np.sin(nv / R))[..., None] * direction


def log_map(spec, base, point):
    """Tangent vector at ``base`` pointing to ``point`` (both Cartesian).

    Returns an ambient 3-vector for Euclidean3 and the sphere, and a chart
    increment for the torus and hyperboloid.
    """
    base = _points(base)
    point = _points(point)
    k = spec.kind
    if k is Kind.EUCLIDEAN3:
        return point - base
    if k is Kind.SPHERE:
        return _sphere_log(spec.R, base, point)
    return log_chart(spec, to_chart(spec, base, tol=None), to_chart(spec, point, tol=None))


def exp_map(spec, base, v):
    """Cartesian point reached from ``base`` along tangent vector ``v``."""
    base = _points(base)
    v = np.asarray(v, dtype=float)
    if not np.all(np.isfinite(v)):
        raise InvalidInput("tangent vector contains non-finite values")
    k = spec.kind
    if k is Kind.EUCLIDEAN3:
        return base + v
    if k is Kind.SPHERE:
        return _sphere_exp(spec.R, base, v)
    return from_chart(spec, exp_chart(spec, to_chart(spec, base, tol=None), v))


def karcher_mean(spec, points, max_iter=100, tol=1e-12):
    """Intrinsic mean by fixed-point iteration ``mu <- exp_mu(mean log_mu x_i)``.

    Converged when the mean log vector has norm below ``tol``
    (scaled by ``spec.scale``).
    """
    X = _points(points).reshape(-1, 3)
    if len(X) == 0:
        raise InvalidInput("karcher_mean needs at least one point")
    if spec.kind is Kind.EUCLIDEAN3:
        return X.mean(axis=0)
    if spec.kind is Kind.SPHERE:
        m = X.mean(axis=0)
        mu = spec.R * m / np.linalg.norm(m) if np.linalg.norm(m) > 1e-9 * spec.R else X[0]
    else:
        mu = X[0]
    for it in range(max_iter):
        g = log_map(spec, mu, X).mean(axis=0)
        if np.linalg.norm(g) < tol * spec.scale:
            return mu
        mu = exp_map(spec, mu, g)
    raise ConvergenceFailure(f"Karcher mean did not converge in {max_iter} iterations", best=mu, n_iter=max_iter)


# -- curvature oracle and sampling ------------------------------------------------


def analytic_gaussian_curvature(spec, coords):
    """Gaussian curvature at chart coordinates (Cartesian for Euclidean3)."""
    c = np.asarray(coords, dtype=float)
    k = spec.kind
    if k is Kind.EUCLIDEAN3:
        return np.zeros(c.shape[:-1])
    if k is Kind.SPHERE:
        return np.full(c.shape[:-1], 1.0 / spec.R**2)
    if k is Kind.TORUS:
        R, r = spec.params
        cphi = np.cos(c[..., 1])
        return cphi / (r * (R + r * cphi))
    a, b, cc = spec.params
    x = from_chart(spec, c)
    q = x[..., 0] ** 2 / a**4 + x[..., 1] ** 2 / b**4 + x[..., 2] ** 2 / cc**4
    return -1.0 / (a**2 * b**2 * cc**2 * q**2)


def _hyperboloid_area_density(spec, u, v):
    a, b, c = spec.params
    ch, sh = np.cosh(u), np.sinh(u)
    return ch * np.sqrt(c**2 * ch**2 * (b**2 * np.cos(v) ** 2 + a**2 * np.sin(v) ** 2) + a**2 * b**2 * sh**2)


def sample_uniform(spec, n, rng_seed=None, u_range=(-1.0, 1.0), n_grid=2048):
    """Draw ``n`` points from the surface area measure.

    The hyperboloid is truncated to ``u_range`` and ``u`` is drawn by
    inverse CDF from a tabulated marginal on ``n_grid`` points.
    """
    n = check_int(n, "n", 0)
    rng = rng_from(rng_seed)
    k = spec.kind
    if k is Kind.EUCLIDEAN3:
        raise InvalidInput("Euclidean3 has no finite area measure to sample from")
    if n == 0:
        return np.empty((0, 3))
    if k is Kind.SPHERE:
        theta = TWO_PI * rng.random(n)
        cphi = 1.0 - 2.0 * rng.random(n)
        return from_chart(spec, np.stack([theta, np.arccos(cphi)], axis=-1))
    if k is Kind.TORUS:
        R, r = spec.params
        theta = TWO_PI * rng.random(n)
        phis = []
        need = n
        while need > 0:
            cand = TWO_PI * rng.random(2 * need + 16)
            keep = cand[rng.random(cand.size) * (R + r) < R + r * np.cos(cand)]
            phis.append(keep[:need])
            need -= len(phis[-1])
        return from_chart(spec, np.stack([theta, np.concatenate(phis)], axis=-1))
    u_lo, u_hi = map(float, u_range)
    if not u_hi > u_lo:
        raise InvalidInput("u_range must satisfy u_min < u_max")
    u_grid = np.linspace(u_lo, u_hi, n_grid)
    v_grid = np.linspace(0.0, TWO_PI, 257)[:-1]
    dens = _hyperboloid_area_density(spec, u_grid[:, None], v_grid[None, :])
    marg = dens.mean(axis=1)
    cdf = np.concatenate([[0.0], np.cumsum(0.5 * (marg[1:] + marg[:-1]) * np.diff(u_grid))])
    cdf /= cdf[-1]
    u = np.interp(rng.random(n), cdf, u_grid)
    a, b, _ = spec.params
    if a == b:
        v = TWO_PI * rng.random(n)
    else:
        vmax = dens.max() * 1.01
        v = np.empty(n)
        todo = np.arange(n)
        while todo.size:
            cand = TWO_PI * rng.random(todo.size)
            ok = rng.random(todo.size) * vmax < _hyperboloid_area_density(spec, u[todo], cand)
            v[todo[ok]] = cand[ok]
            todo = todo[~ok]
    return from_chart(spec, np.stack([u, v], axis=-1))
