"""Brownian paths on surfaces, the scenario catalog and correlated-Brownian controls.

Ambient paths follow the Euler-Maruyama recursion
``X <- X + P(X) dW - H(X) h / 2`` with an exact reprojection onto the
surface after each step. The torus and hyperboloid also have intrinsic
chart simulators whose output is mapped to R^3 at the end.
"""

from dataclasses import dataclass, field
from typing import Mapping, Optional, Union

import numpy as np
import pandas as pd

from . import geometry as geo
from ._validation import check_int, check_positive, rng_from
from .exceptions import GeoAlphaError, InvalidInput, NumericalBlowup
from .geometry import Kind, ManifoldSpec

_BLOWUP_NORM = 1e12


@dataclass
class Segment:
    """Provenance of a contiguous run of path indices ``[start, stop)``."""

    start: int
    stop: int
    spec: ManifoldSpec
    h: float
    seed: Optional[int] = None
    attempts: int = 1
    absorbed: bool = False

    def to_dict(self):
        return {
            "start": self.start,
            "stop": self.stop,
            "spec": self.spec.to_dict(),
            "h": self.h,
            "seed": self.seed,
            "attempts": self.attempts,
            "absorbed": self.absorbed,
        }

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        d["spec"] = ManifoldSpec.from_dict(d["spec"])
        return cls(**d)


@dataclass
class Path3D:
    """A time-indexed sequence of points in R^3.

    ``h`` is the step of the uniform time grid (``None`` when segments use
    different steps, in which case ``times`` falls back to the index).
    ``chart`` holds intrinsic coordinates when the path came from a chart
    simulator.
    """

    points: np.ndarray
    h: Optional[float] = None
    segments: list = field(default_factory=list)
    chart: Optional[np.ndarray] = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=float).reshape(-1, 3)
        if not np.all(np.isfinite(self.points)):
            raise InvalidInput("path contains non-finite coordinates")
        if self.segments:
            covered = sum(s.stop - s.start for s in self.segments)
            if covered != len(self.points) or self.segments[0].start != 0:
                raise InvalidInput("segment labels must cover every path index exactly once")

    def __len__(self):
        return len(self.points)

    @property
    def times(self):
        idx = np.arange(len(self.points), dtype=float)
        return idx * self.h if self.h is not None else idx

    @property
    def labels(self):
        """Per-index geometry kind names, or ``None`` without provenance."""
        if not self.segments:
            return None
        out = np.empty(len(self.points), dtype=object)
        for s in self.segments:
            out[s.start : s.stop] = s.spec.kind.value
        return out

    def label_sequence(self):
        return [s.spec.kind.short for s in self.segments]

    def to_frame(self):
        df = pd.DataFrame(self.points, columns=["x", "y", "z"])
        df.insert(0, "index", np.arange(len(self.points)))
        df["label"] = self.labels if self.segments else ""
        return df

    def to_csv(self, path):
        self.to_frame().to_csv(path, index=False, float_format="%.17g")

    def manifest(self):
        return {
            "n_points": len(self.points),
            "h": self.h,
            "segments": [s.to_dict() for s in self.segments],
            "meta": self.meta,
        }

    @classmethod
    def from_csv(cls, path, manifest=None):
        df = pd.read_csv(path, keep_default_na=False, float_precision="round_trip")
        missing = {"x", "y", "z"} - set(df.columns)
        if missing:
            raise InvalidInput(f"path CSV lacks columns {sorted(missing)}")
        pts = df[["x", "y", "z"]].to_numpy(float)
        if manifest:
            segs = [Segment.from_dict(s) for s in manifest.get("segments", [])]
            return cls(pts, h=manifest.get("h"), segments=segs, meta=manifest.get("meta", {}))
        return cls(pts)


# -- ambient Euler-Maruyama ------------------------------------------------------


def _reproject(spec, X):
    if spec.kind is Kind.EUCLIDEAN3:
        return X
    if spec.kind is Kind.SPHERE:
        return spec.R * X / np.linalg.norm(X, axis=-1, keepdims=True)
    return geo.project_to_surface(spec, X)


def ambient_paths(spec, x0, steps, h, seed=None, sigma=1.0, reproject=True):
    """Simulate independent ambient paths from each row of ``x0``.

    Returns an array of shape ``(steps + 1, m, 3)``. ``sigma`` scales the
    Brownian increments (and the drift by ``sigma**2``); ``sigma=0`` leaves
    the start point fixed.
    """
    steps = check_int(steps, "steps", 0)
    h = check_positive(h, "h")
    X = np.atleast_2d(np.asarray(x0, dtype=float)).copy()
    if X.shape[-1] != 3 or not np.all(np.isfinite(X)):
        raise InvalidInput("x0 must be finite points of shape (3,) or (m, 3)")
    if reproject and spec.kind is not Kind.EUCLIDEAN3:
        X = _reproject(spec, X)
    rng = rng_from(seed)
    out = np.empty((steps + 1,) + X.shape)
    out[0] = X
    sd = sigma * np.sqrt(h)
    for k in range(steps):
        dW = sd * rng.standard_normal(X.shape)
        if spec.kind is Kind.EUCLIDEAN3:
            X = X + dW
        else:
            P = geo.tangent_projector(spec, X)
            H = geo.mean_curvature_vector(spec, X)
            X = X + np.einsum("mij,mj->mi", P, dW) - 0.5 * sigma**2 * h * H
            if reproject:
                X = _reproject(spec, X)
        if not np.all(np.isfinite(X)) or np.max(np.abs(X)) > _BLOWUP_NORM:
            raise NumericalBlowup(f"ambient path left the finite range at step {k + 1}", step=k + 1)
        out[k + 1] = X
    return out


def simulate_ambient(spec, x0, steps, h=1e-3, seed=None, sigma=1.0, reproject=True):
    """One ambient Euler-Maruyama path of ``steps`` steps started at ``x0``."""
    pts = ambient_paths(spec, np.asarray(x0, float).reshape(1, 3), steps, h, seed, sigma, reproject)[:, 0, :]
    seg = Segment(0, len(pts), spec, h, seed if isinstance(seed, int) else None)
    return Path3D(pts, h=h, segments=[seg])


# -- intrinsic chart simulators ------------------------------------------------------


def torus_drift(R, r, phi):
    """Ito drift of the minor angle, ``-sin(phi) / (2 r (R + r cos phi))``."""
    return -np.sin(phi) / (2.0 * r * (R + r * np.cos(phi)))


def simulate_torus_intrinsic(R, r, theta0, phi0, steps, h=1e-3, seed=None, sigma=1.0, noise=True):
    """Brownian motion in the (theta, phi) chart of the torus, output in R^3.

    ``noise=False`` drops the Brownian increments and keeps the drift.
    """
    spec = ManifoldSpec.torus(R, r)
    steps = check_int(steps, "steps", 0)
    h = check_positive(h, "h")
    rng = rng_from(seed)
    Z = sigma * np.sqrt(h) * rng.standard_normal((steps, 2)) * float(noise)
    th = np.empty(steps + 1)
    ph = np.empty(steps + 1)
    th[0], ph[0] = np.mod(theta0, geo.TWO_PI), np.mod(phi0, geo.TWO_PI)
    for k in range(steps):
        w = R + r * np.cos(ph[k])
        th[k + 1] = np.mod(th[k] + Z[k, 0] / w, geo.TWO_PI)
        ph[k + 1] = np.mod(ph[k] + Z[k, 1] / r + sigma**2 * torus_drift(R, r, ph[k]) * h, geo.TWO_PI)
    chart = geo.canonical_chart(spec, np.stack([th, ph], axis=1))
    seg = Segment(0, steps + 1, spec, h, seed if isinstance(seed, int) else None)
    return Path3D(geo.from_chart(spec, chart), h=h, segments=[seg], chart=chart)


def hyperbolic_metric(a, c, u):
    """``E(u) = a^2 sinh^2 u + c^2 cosh^2 u`` and its derivative."""
    E = a**2 * np.sinh(u) ** 2 + c**2 * np.cosh(u) ** 2
    dE = 2.0 * (a**2 + c**2) * np.sinh(u) * np.cosh(u)
    return E, dE


def hyperbolic_drift(a, c, u, exact=False):
    """Drift of ``u`` for Brownian motion on the rotational hyperboloid.

    The default is ``(tanh u - E'/(2E)) / 2``. With ``exact=True`` the term
    is divided by ``E(u)``, which is what the Laplace-Beltrami operator of
    the metric ``E du^2 + a^2 cosh^2 u dv^2`` gives.
    """
    E, dE = hyperbolic_metric(a, c, u)
    drift = 0.5 * (np.tanh(u) - dE / (2.0 * E))
    return drift / E if exact else drift


def simulate_hyperbolic_intrinsic(
    a, c, u0, v0, steps, h=1e-3, seed=None, u_absorb=5.0, sigma=1.0, exact_drift=False
):
    """Brownian motion in the (u, v) chart of ``x^2/a^2 + y^2/a^2 - z^2/c^2 = 1``.

    The path stops at the first index with ``|u| >= u_absorb`` and
    ``meta["absorbed"]`` is set; that index is the last point returned.
    """
    spec = ManifoldSpec.hyperboloid(a, a, c)
    steps = check_int(steps, "steps", 0)
    h = check_positive(h, "h")
    rng = rng_from(seed)
    Z = sigma * np.sqrt(h) * rng.standard_normal((steps, 2))
    u = np.empty(steps + 1)
    v = np.empty(steps + 1)
    u[0], v[0] = u0, np.mod(v0, geo.TWO_PI)
    n = steps + 1
    absorbed = False
    for k in range(steps + 1):
        if abs(u[k]) >= u_absorb:
            absorbed, n = True, k + 1
            break
        if k == steps:
            break
        E, _ = hyperbolic_metric(a, c, u[k])
        u[k + 1] = u[k] + Z[k, 0] / np.sqrt(E) + sigma**2 * hyperbolic_drift(a, c, u[k], exact_drift) * h
        v[k + 1] = np.mod(v[k] + Z[k, 1] / (a * np.cosh(u[k])), geo.TWO_PI)
        if not np.isfinite(u[k + 1]):
            raise NumericalBlowup(f"hyperbolic chart path diverged at step {k + 1}", step=k + 1)
    chart = geo.canonical_chart(spec, np.stack([u[:n], v[:n]], axis=1))
    seg = Segment(0, n, spec, h, seed if isinstance(seed, int) else None, absorbed=absorbed)
    meta = {"absorbed": absorbed, "absorbed_at": n - 1 if absorbed else None}
    return Path3D(geo.from_chart(spec, chart), h=h, segments=[seg], chart=chart, meta=meta)


# -- scenario catalog ---------------------------------------------------------------

# Default step per geometry. The unit-scale surfaces use 1e-3. The torus
# and Euclidean blocks use larger steps so that a few hundred points cover
# the torus (needed for the loop test) and the free path reaches a length
# scale where a curvature of 0.01 is resolvable.
DEFAULT_STEPS = {"S": 1e-3, "H": 1e-3, "E": 1.0, "T": 1.0}


@dataclass
class ScenarioConfig:
    """Settings for :func:`build_scenario`.

    ``h`` is either one step for every block or a mapping from geometry
    short code (``"S"``, ``"H"``, ``"E"``, ``"T"``) to step.
    """

    scenario_id: int
    block_length: int = 500
    total_length: int = 5000
    h: Union[float, Mapping[str, float], None] = None
    seed: int = 0
    sphere: ManifoldSpec = field(default_factory=lambda: ManifoldSpec.sphere(1.0))
    torus: ManifoldSpec = field(default_factory=lambda: ManifoldSpec.torus(3.0, 1.0))
    hyperboloid: ManifoldSpec = field(default_factory=lambda: ManifoldSpec.hyperboloid(1.0, 1.0, 1.0))
    u_absorb: float = 5.0
    max_redraws: int = 50

    def __post_init__(self):
        check_int(self.scenario_id, "scenario_id", 1)
        if self.scenario_id > 7:
            raise InvalidInput(f"scenario_id must be in 1..7, got {self.scenario_id}")
        check_int(self.block_length, "block_length", 2)
        check_int(self.total_length, "total_length", 2)
        check_int(self.seed, "seed", 0)
        if self.hyperboloid.a != self.hyperboloid.b:
            raise InvalidInput("scenario hyperboloid blocks need a == b (rotational surface)")

    def step(self, code):
        if self.h is None:
            return DEFAULT_STEPS[code]
        if isinstance(self.h, Mapping):
            return float(self.h.get(code, DEFAULT_STEPS[code]))
        return float(self.h)

    def spec_for(self, code):
        return {
            "S": self.sphere,
            "T": self.torus,
            "H": self.hyperboloid,
            "E": ManifoldSpec.euclidean(),
        }[code]

    def to_dict(self):
        return {
            "scenario_id": self.scenario_id,
            "block_length": self.block_length,
            "total_length": self.total_length,
            "h": {c: self.step(c) for c in "SHET"},
            "seed": self.seed,
            "sphere": self.sphere.to_dict(),
            "torus": self.torus.to_dict(),
            "hyperboloid": self.hyperboloid.to_dict(),
            "u_absorb": self.u_absorb,
            "max_redraws": self.max_redraws,
        }


def scenario_blocks(cfg):
    """Sequence of ``(code, length)`` blocks for a scenario."""
    sid, B, T = cfg.scenario_id, cfg.block_length, cfg.total_length
    pure = {3: "S", 4: "T", 5: "E", 6: "H"}
    if sid in pure:
        return [(pure[sid], T)]
    n_blocks = -(-T // B)
    lengths = [B] * (n_blocks - 1) + [T - B * (n_blocks - 1)]
    if sid == 7:
        codes = ["SHET"[i % 4] for i in range(n_blocks)]
    else:
        codes = ["SHE"[i % 3] for i in range(n_blocks - 1)] + ["S"]
        if sid == 2:
            order = np.random.default_rng(np.random.SeedSequence([cfg.seed, 2])).permutation(n_blocks - 1)
            codes = [codes[i] for i in order] + ["S"]
    return list(zip(codes, lengths))


def _default_start(spec):
    if spec.kind is Kind.EUCLIDEAN3:
        return np.zeros(3)
    return geo.from_chart(spec, [0.0, np.pi / 2] if spec.kind is Kind.SPHERE else [0.0, 0.0])


def _enter(spec, x):
    """Start point of a new block: the previous endpoint converted into ``spec``'s chart."""
    if spec.kind is Kind.EUCLIDEAN3:
        return np.asarray(x, float)
    if spec.kind is Kind.SPHERE and np.linalg.norm(x) == 0:
        return _default_start(spec)
    if spec.kind is Kind.TORUS and np.hypot(x[0], x[1]) == 0:
        x = np.array([1e-12, 0.0, x[2]])
    return geo.from_chart(spec, geo.to_chart(spec, x, tol=None))


def _simulate_block(cfg, code, length, start, seed):
    spec = cfg.spec_for(code)
    h = cfg.step(code)
    steps = length - 1
    if code in ("S", "E"):
        pts = ambient_paths(spec, start, steps, h, seed)[:, 0, :]
        return pts, False
    c = geo.to_chart(spec, start, tol=None)
    if code == "T":
        return simulate_torus_intrinsic(spec.R, spec.r, c[0], c[1], steps, h, seed).points, False
    p = simulate_hyperbolic_intrinsic(spec.a, spec.c, c[0], c[1], steps, h, seed, u_absorb=cfg.u_absorb)
    return p.points, p.meta["absorbed"]


def build_scenario(cfg):
    """Assemble one of the seven scenario paths.

    Each block starts from the previous endpoint converted into the new
    geometry's chart. A hyperbolic block that hits the absorbing barrier
    is redrawn with the next seed; the number of draws is recorded.
    """
    blocks = scenario_blocks(cfg)
    pieces, segments = [], []
    x = None
    start_idx = 0
    for b, (code, length) in enumerate(blocks):
        spec = cfg.spec_for(code)
        start = _default_start(spec) if x is None else _enter(spec, x)
        for attempt in range(1, cfg.max_redraws + 1):
            ss = np.random.SeedSequence([cfg.seed, b, attempt])
            seed = int(ss.generate_state(1)[0])
            pts, absorbed = _simulate_block(cfg, code, length, start, seed)
            if not absorbed:
                break
        else:
            raise GeoAlphaError(f"hyperbolic block {b} absorbed on all {cfg.max_redraws} draws")
        pieces.append(pts)
        segments.append(Segment(start_idx, start_idx + len(pts), spec, cfg.step(code), seed, attempt))
        start_idx += len(pts)
        x = pts[-1]
    steps = {s.h for s in segments}
    meta = {"scenario": cfg.to_dict(), "blocks": [c for c, _ in blocks]}
    return Path3D(np.concatenate(pieces), h=steps.pop() if len(steps) == 1 else None, segments=segments, meta=meta)


# -- correlated Brownian null control ---------------------------------------------------


@dataclass
class CbmConfig:
    n: int = 10
    rho: float = 0.9
    T: int = 5000
    seed: int = 0

    def __post_init__(self):
        check_int(self.n, "n", 3)
        check_int(self.T, "T", 2)
        if not 0.0 <= self.rho < 1.0:
            raise InvalidInput(f"rho must lie in [0, 1), got {self.rho}")


@dataclass
class CbmResult:
    levels: np.ndarray  # (T, n) Brownian levels, W_t = sum of increments up to t
    increments: np.ndarray  # (T, n)
    eigenvalues: np.ndarray  # sample increment covariance, descending
    components: np.ndarray  # (n, 3) top principal directions
    path: Path3D  # levels projected on the components


def equicorrelation(n, rho):
    return rho * np.ones((n, n)) + (1.0 - rho) * np.eye(n)


def simulate_cbm(cfg):
    """Equicorrelated n-dimensional Brownian motion and its 3-D PCA projection."""
    sigma = equicorrelation(cfg.n, cfg.rho)
    L = np.linalg.cholesky(sigma)
    rng = rng_from(np.random.SeedSequence([cfg.seed, cfg.n]))
    dW = rng.standard_normal((cfg.T, cfg.n)) @ L.T
    W = np.cumsum(dW, axis=0)
    evals, evecs = np.linalg.eigh(np.cov(dW, rowvar=False))
    order = np.argsort(evals)[::-1]
    evals, evecs = evals[order], evecs[:, order]
    V = evecs[:, :3].copy()
    # deterministic sign: largest-magnitude loading positive
    idx = np.argmax(np.abs(V), axis=0)
    V *= np.sign(V[idx, np.arange(3)])
    path = Path3D(W @ V, h=1.0, meta={"cbm": {"n": cfg.n, "rho": cfg.rho, "T": cfg.T, "seed": cfg.seed}})
    return CbmResult(W, dW, evals, V, path)
