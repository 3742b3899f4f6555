"""Shape-parameter estimation from observed points.

Sphere radius by the mean norm, torus radii by moments of the distance to
the symmetry axis, hyperboloid semi-axes by Levenberg-Marquardt on the
implicit equation.
"""

from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from sklearn.base import BaseEstimator

from . import geometry as geo
from ._validation import as_points, check_int
from .exceptions import ConvergenceFailure, DegenerateInput, IllConditioned, InvalidInput, MinWindow
from .geometry import Kind, ManifoldSpec


@dataclass
class FitResult:
    """Estimated geometry with its RMS distance-to-surface residual.

    ``spec`` is ``None`` when the estimates do not describe a valid surface
    (a torus with ``r_hat <= 0`` or ``r_hat >= R_hat``); ``params`` always
    holds the raw estimates.
    """

    spec: Optional[ManifoldSpec]
    params: dict
    residual: float
    n_used: int
    method: str
    flags: tuple = ()
    extra: dict = field(default_factory=dict)

    def to_dict(self):
        return {
            "spec": None if self.spec is None else self.spec.to_dict(),
            "params": {k: float(v) for k, v in self.params.items()},
            "residual": float(self.residual),
            "n_used": self.n_used,
            "method": self.method,
            "flags": list(self.flags),
        }


def rms_residual(spec, points):
    if spec is None:
        return np.inf
    return float(np.sqrt(np.mean(geo.residual(spec, points) ** 2)))


def fit_sphere_radius(points):
    """``R_hat`` is the mean distance of the points from the origin."""
    X = as_points(points)
    norms = np.linalg.norm(X, axis=1)
    if not np.any(norms > 0):
        raise DegenerateInput("all points are at the origin; the radius is undefined")
    spec = ManifoldSpec.sphere(norms.mean())
    return FitResult(spec, {"R": spec.R}, rms_residual(spec, X), len(X), "mean-norm")


def fit_torus_mom(points):
    """Moment estimates of the torus radii.

    The default (``method="rho-moments"``) uses ``E[rho] = R`` and
    ``Var[rho] = r^2/2`` for ``rho = sqrt(x^2 + y^2)`` with the minor
    angle uniform. ``extra["cos_moments"]`` holds the mean and standard
    deviation of ``cos(phi)``, with ``phi`` taken in the chart of
    ``R0 = mean(rho)``; those are dimensionless and are kept only for
    comparison.
    """
    X = as_points(points)
    if len(X) < 2:
        raise MinWindow("torus moments need at least 2 points")
    rho = np.hypot(X[:, 0], X[:, 1])
    R_hat = float(rho.mean())
    r_hat = float(np.sqrt(2.0 * rho.var()))
    flags = []
    spec = None
    if r_hat <= 1e-12 * max(1.0, R_hat):
        flags.append("ThinTube")
    elif r_hat >= R_hat:
        flags.append("SelfIntersecting")
    else:
        spec = ManifoldSpec.torus(R_hat, r_hat)
    phi = np.arctan2(X[:, 2], rho - R_hat)
    cos_phi = np.cos(phi)
    extra = {"cos_moments": (float(cos_phi.mean()), float(cos_phi.std())), "rho_last": float(rho[-1])}
    return FitResult(spec, {"R": R_hat, "r": r_hat}, rms_residual(spec, X), len(X), "rho-moments", tuple(flags), extra)


def _hyper_residuals(theta, X):
    a, b, c = theta
    return X[:, 0] ** 2 / a**2 + X[:, 1] ** 2 / b**2 - X[:, 2] ** 2 / c**2 - 1.0


def _numeric_jacobian(f, theta, X):
    J = np.empty((len(X), len(theta)))
    for k in range(len(theta)):
        step = 1e-6 * max(1.0, abs(theta[k]))
        tp, tm = theta.copy(), theta.copy()
        tp[k] += step
        tm[k] -= step
        J[:, k] = (f(tp, X) - f(tm, X)) / (2 * step)
    return J


def hyperboloid_initial_guess(X):
    """Semi-axes from the data envelope: waist radius and the largest |z|."""
    rho = np.hypot(X[:, 0], X[:, 1])
    absz = np.abs(X[:, 2])
    k = max(1, len(X) // 20)
    waist = np.median(rho[np.argsort(absz)[:k]])
    return np.array([waist, waist, max(absz.max(), 1e-3 * waist)])


def fit_hyperboloid_nls(points, init=None, max_iter=200, lam0=1e-3, gtol=1e-8):
    """Least-squares semi-axes of ``x^2/a^2 + y^2/b^2 - z^2/c^2 = 1``.

    Levenberg-Marquardt with a central-difference Jacobian. Stops when
    ``|J^T F| < gtol (1 + |F|^2)`` or the step stalls.
    """
    X = as_points(points)
    if len(X) < 3:
        raise MinWindow("hyperboloid fit needs at least 3 points")
    scale = max(1.0, float(np.max(np.abs(X))))
    if np.ptp(X[:, 2]) <= 1e-12 * scale:
        raise IllConditioned("points have no spread in z, so c is not identifiable")
    if np.ptp(np.hypot(X[:, 0], X[:, 1])) <= 1e-12 * scale and np.ptp(X[:, 0]) <= 1e-12 * scale:
        raise IllConditioned("points have no spread in the xy-plane")
    theta = hyperboloid_initial_guess(X) if init is None else np.asarray(init, dtype=float).copy()
    if theta.shape != (3,) or np.any(theta <= 0):
        raise InvalidInput("init must be three positive semi-axes")
    lam = lam0
    F = _hyper_residuals(theta, X)
    obj = F @ F
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        J = _numeric_jacobian(_hyper_residuals, theta, X)
        g = J.T @ F
        if np.linalg.norm(g) < gtol * (1.0 + obj):
            converged = True
            it -= 1
            break
        JTJ = J.T @ J
        if np.linalg.cond(JTJ) > 1e14:
            raise IllConditioned("Jacobian of the hyperboloid residual is rank deficient")
        improved = False
        while lam < 1e12:
            step = np.linalg.solve(JTJ + lam * np.diag(np.diag(JTJ)), -g)
            cand = theta + step
            if np.all(cand > 0):
                Fc = _hyper_residuals(cand, X)
                oc = Fc @ Fc
                if oc < obj:
                    improved = True
                    break
            lam *= 10.0
        if not improved:
            converged = True  # no descent direction left at machine precision
            break
        rel = np.linalg.norm(step) / (np.linalg.norm(theta) + 1e-300)
        theta, F, obj = cand, Fc, oc
        lam = max(lam / 10.0, 1e-15)
        if rel < 1e-15:
            converged = True
            break
    if not converged:
        spec = ManifoldSpec.hyperboloid(*theta)
        raise ConvergenceFailure(f"Levenberg-Marquardt did not converge in {max_iter} iterations", best=spec, n_iter=it)
    spec = ManifoldSpec.hyperboloid(*theta)
    extra = {"iterations": it, "objective": float(obj)}
    return FitResult(spec, spec.param_dict, rms_residual(spec, X), len(X), "levenberg-marquardt", (), extra)


def fit_geometry(points, kind):
    """Dispatch to the fitter for ``kind`` (a :class:`Kind` or its name)."""
    kind = Kind(kind)
    if kind is Kind.SPHERE:
        return fit_sphere_radius(points)
    if kind is Kind.TORUS:
        return fit_torus_mom(points)
    if kind is Kind.HYPERBOLOID:
        return fit_hyperboloid_nls(points)
    X = as_points(points)
    return FitResult(ManifoldSpec.euclidean(), {}, 0.0, len(X), "none")


def compare_models(points, kinds=(Kind.SPHERE, Kind.TORUS, Kind.HYPERBOLOID)):
    """RMS distance-to-surface residual of each fitted model (inf if the fit fails)."""
    out = {}
    for k in kinds:
        try:
            out[Kind(k).value] = fit_geometry(points, k).residual
        except (IllConditioned, ConvergenceFailure, DegenerateInput):
            out[Kind(k).value] = np.inf
    return out


class StreamingFitter:
    """Re-estimates the active geometry on a growing path prefix.

    Results are cached per prefix end index, so repeated requests for the
    same index return the identical object. ``window=None`` uses the full
    prefix; an integer uses only the last ``window`` points.
    """

    def __init__(self, kind, m0=30, window=None):
        self.kind = Kind(kind)
        self.m0 = check_int(m0, "m0", 1)
        self.window = None if window is None else check_int(window, "window", 1)
        self._cache = {}

    def estimate(self, points, t):
        """Fit on points ``[.. t]`` (inclusive)."""
        if t in self._cache:
            return self._cache[t]
        X = as_points(points)
        if t >= len(X) or t < 0:
            raise InvalidInput(f"index {t} outside the path")
        lo = 0 if self.window is None else max(0, t + 1 - self.window)
        if t + 1 - lo < self.m0:
            raise MinWindow(f"prefix of {t + 1 - lo} points is shorter than m0={self.m0}")
        res = fit_geometry(X[lo : t + 1], self.kind)
        self._cache[t] = res
        return res

    def latest_tube_radius(self, points, t):
        """Distance of point ``t`` from the symmetry axis (torus tube proxy)."""
        x = as_points(points)[t]
        return float(np.hypot(x[0], x[1]))


class GeometryFitter(BaseEstimator):
    """Estimator wrapper: ``fit(X)`` stores ``result_`` and ``spec_``."""

    def __init__(self, kind="Sphere"):
        self.kind = kind

    def fit(self, X, y=None):
        self.result_ = fit_geometry(X, self.kind)
        self.spec_ = self.result_.spec
        return self

    def score(self, X, y=None):
        """Negative RMS residual of ``X`` on the fitted surface."""
        return -rms_residual(self.spec_, as_points(X))
