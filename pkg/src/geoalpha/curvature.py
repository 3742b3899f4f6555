"""Local Gaussian curvature along a path and curvature-sign regime labels.

Each window of the (pre-smoothed) path is rotated into its own principal
frame, a weighted quadratic ``z = a x^2 + b xy + c y^2 + d x + e y + f``
is fitted, and the Gaussian curvature of that graph is read off at the
newest point of the window.
"""

from dataclasses import dataclass, field
from enum import Enum

import numpy as np
import pandas as pd

from ._validation import as_points, check_int
from .exceptions import InvalidInput, MinWindow, SingularFit

MAX_CONDITION = 1e12


@dataclass
class MongeFit:
    coeffs: np.ndarray  # (a, b, c, d, e, f)
    condition: float
    r2: float


def monge_design(xy):
    x, y = xy[:, 0], xy[:, 1]
    return np.column_stack([x * x, x * y, y * y, x, y, np.ones_like(x)])


def monge_fit(points, weights=None):
    """Weighted least-squares quadratic patch through ``points`` (used as given).

    Minimises ``sum w_i^2 (A_i beta - z_i)^2``. The condition number is
    measured on the column-equilibrated weighted design, so it does not
    depend on the length unit of the data.
    """
    P = as_points(points, "points")
    if len(P) < 6:
        raise SingularFit(f"a quadratic patch needs at least 6 points, got {len(P)}")
    w = np.ones(len(P)) if weights is None else np.asarray(weights, dtype=float)
    if w.shape != (len(P),) or np.any(w < 0) or not np.all(np.isfinite(w)):
        raise InvalidInput("weights must be finite, non-negative and one per point")
    A = monge_design(P[:, :2]) * w[:, None]
    z = P[:, 2] * w
    scale = np.linalg.norm(A, axis=0)
    if np.any(scale == 0):
        raise SingularFit("design matrix has an all-zero column")
    As = A / scale
    sv = np.linalg.svd(As, compute_uv=False)
    cond = sv[0] / sv[-1] if sv[-1] > 0 else np.inf
    if not cond < MAX_CONDITION:
        raise SingularFit(f"design matrix condition number {cond:.3g} exceeds {MAX_CONDITION:.0e}")
    beta = np.linalg.lstsq(As, z, rcond=None)[0] / scale
    resid = z - A @ beta
    zc = z - np.average(P[:, 2], weights=w**2 if w.any() else None) * w
    ss = float(zc @ zc)
    r2 = 1.0 - float(resid @ resid) / ss if ss > 0 else 1.0
    return MongeFit(beta, float(cond), r2)


def curvature_at(coeffs):
    """``(4ac - b^2) / (1 + 4a^2 + b^2 + 4c^2)^2`` from the leading patch coefficients."""
    a, b, c = (np.asarray(coeffs, dtype=float)[..., i] for i in range(3))
    return (4 * a * c - b * b) / (1 + 4 * a * a + b * b + 4 * c * c) ** 2


def graph_curvature(coeffs, x=0.0, y=0.0):
    """Exact Gaussian curvature of the fitted graph at ``(x, y)``.

    ``K = (f_xx f_yy - f_xy^2) / (1 + f_x^2 + f_y^2)^2``. Unlike
    :func:`curvature_at` the denominator uses the local slope.
    """
    a, b, c, d, e = (np.asarray(coeffs, dtype=float)[..., i] for i in range(5))
    fx = 2 * a * x + b * y + d
    fy = b * x + 2 * c * y + e
    return (4 * a * c - b * b) / (1 + fx * fx + fy * fy) ** 2


def local_frame(points):
    """Centre ``points`` and rotate them so the least-variance axis is z."""
    P = np.asarray(points, dtype=float)
    C = P - P.mean(axis=0)
    _, evecs = np.linalg.eigh(C.T @ C)
    # eigh sorts ascending: columns (largest, middle, smallest) -> (x, y, z)
    R = evecs[:, ::-1]
    return C @ R


def trailing_mean(X, length):
    """Causal moving average; rows before the first full window are NaN."""
    X = np.asarray(X, dtype=float)
    out = np.full_like(X, np.nan)
    if length <= 1:
        return X.copy()
    if len(X) < length:
        return out
    cs = np.cumsum(np.vstack([np.zeros((1,) + X.shape[1:]), X]), axis=0)
    out[length - 1 :] = (cs[length:] - cs[:-length]) / length
    return out


@dataclass
class CurvatureConfig:
    """Windowing and threshold settings for :func:`curvature_series`.

    ``window`` is ``"rolling"`` (the last ``length`` smoothed points) or
    ``"expanding"`` (every smoothed point so far, defined from ``m0``).
    ``formula="graph"`` evaluates the exact graph curvature at the newest
    point; ``formula="leading"`` uses :func:`curvature_at` on the patch
    coefficients. ``align_frame=False`` fits in ambient coordinates.
    """

    window: str = "rolling"
    length: int = 40
    m0: int = 30
    alpha: float = 0.0
    smooth_len: int = 5
    kappa_pos: float = 0.01
    kappa_neg: float = 0.01
    formula: str = "graph"
    align_frame: bool = True

    def __post_init__(self):
        if self.window not in ("rolling", "expanding"):
            raise InvalidInput(f"window must be 'rolling' or 'expanding', got {self.window!r}")
        check_int(self.m0, "m0", 6)
        check_int(self.smooth_len, "smooth_len", 1)
        check_int(self.length, "length", 6)
        if self.window == "rolling" and self.length < self.m0:
            raise InvalidInput("rolling window length must be at least m0")
        if self.alpha < 0:
            raise InvalidInput("alpha must be non-negative")
        if not (self.kappa_pos > 0 and self.kappa_neg > 0):
            raise InvalidInput("curvature thresholds must be positive")
        if self.formula not in ("graph", "leading"):
            raise InvalidInput(f"formula must be 'graph' or 'leading', got {self.formula!r}")

    def to_dict(self):
        return dict(self.__dict__)


@dataclass
class CurvatureSeries:
    K: np.ndarray  # NaN where undefined
    condition: np.ndarray
    r2: np.ndarray
    config: CurvatureConfig
    skipped: list = field(default_factory=list)  # indices whose fit was singular

    @property
    def defined(self):
        return np.isfinite(self.K)

    def to_frame(self):
        return pd.DataFrame(
            {"index": np.arange(len(self.K)), "K": self.K, "condition": self.condition, "r2": self.r2}
        )


def _window_K(W, cfg, weights):
    Q = local_frame(W) if cfg.align_frame else W
    fit = monge_fit(Q, weights)
    if cfg.formula == "leading":
        K = curvature_at(fit.coeffs)
    else:
        K = graph_curvature(fit.coeffs, Q[-1, 0], Q[-1, 1])
    return float(K), fit


def curvature_series(path, cfg=None):
    """Per-index curvature estimates of a path (``Path3D`` or ``(n, 3)`` array).

    Index ``t`` only uses points up to ``t``. Windows whose fit is
    singular are left as NaN and listed in ``skipped``.
    """
    cfg = cfg or CurvatureConfig()
    X = as_points(getattr(path, "points", path), "path")
    n = len(X)
    first = cfg.smooth_len - 1
    need = cfg.length if cfg.window == "rolling" else cfg.m0
    if n < first + need:
        raise MinWindow(f"path of length {n} is shorter than smoothing plus window ({first + need})")
    S = trailing_mean(X, cfg.smooth_len)
    K = np.full(n, np.nan)
    cond = np.full(n, np.nan)
    r2 = np.full(n, np.nan)
    skipped = []
    for t in range(first + need - 1, n):
        lo = t - cfg.length + 1 if cfg.window == "rolling" else first
        W = S[lo : t + 1]
        weights = np.exp(-cfg.alpha * np.arange(len(W))[::-1]) if cfg.alpha > 0 else None
        try:
            K[t], fit = _window_K(W, cfg, weights)
        except SingularFit:
            skipped.append(t)
            continue
        cond[t], r2[t] = fit.condition, fit.r2
    return CurvatureSeries(K, cond, r2, cfg, skipped)


class Regime(str, Enum):
    SPHERE = "SphereLike"
    HYPERBOLIC = "HyperbolicLike"
    FLAT = "Flat"
    TORUS = "TorusLike"

    @property
    def geometry(self):
        return {"SphereLike": "Sphere", "HyperbolicLike": "Hyperboloid", "Flat": "Euclidean3", "TorusLike": "Torus"}[
            self.value
        ]


@dataclass
class RegimeSeries:
    labels: np.ndarray  # object array of Regime, None where undefined
    shares: dict

    def to_list(self):
        return [None if r is None else r.value for r in self.labels]


def classify_regimes(K, torus_flags=None, kappa_pos=0.01, kappa_neg=0.01):
    """Label each index by curvature sign, with the torus flag taking precedence.

    Shares are fractions of the defined indices (finite K or torus flag set).
    """
    K = np.asarray(getattr(K, "K", K), dtype=float)
    flags = np.zeros(len(K), dtype=bool)
    if torus_flags is not None:
        tf = np.asarray(torus_flags, dtype=float)
        if tf.shape != K.shape:
            raise InvalidInput("torus flags must align with the curvature series")
        flags = np.nan_to_num(tf, nan=0.0) > 0
    labels = np.empty(len(K), dtype=object)
    for i, (k, f) in enumerate(zip(K, flags)):
        if f:
            labels[i] = Regime.TORUS
        elif not np.isfinite(k):
            labels[i] = None
        elif k >= kappa_pos:
            labels[i] = Regime.SPHERE
        elif k <= -kappa_neg:
            labels[i] = Regime.HYPERBOLIC
        else:
            labels[i] = Regime.FLAT
    defined = [r for r in labels if r is not None]
    shares = {r.value: (sum(1 for x in defined if x is r) / len(defined) if defined else 0.0) for r in Regime}
    return RegimeSeries(labels, shares)


def majority(regimes):
    shares = regimes.shares
    return Regime(max(shares, key=shares.get))
