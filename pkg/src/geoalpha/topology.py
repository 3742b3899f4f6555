"""Delay embeddings, Vietoris-Rips persistence and the two-loop torus test."""

from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import pandas as pd
from scipy.spatial import cKDTree
from scipy.spatial.distance import cdist

from ._validation import as_series, check_int, rng_from
from ._vr import vr_pairs
from .exceptions import InvalidInput, MinWindow, ScaleCapExceeded

N_MAX = 400
MAX_TOP_SIMPLICES = 5e7
EPS_FACTOR = 1.25


# -- delay embedding ------------------------------------------------------------


def standardize(X, mode="coordinate"):
    """Centre a cloud and rescale it.

    ``"coordinate"`` divides each column by its standard deviation,
    ``"global"`` divides by the RMS distance to the centroid (keeps the
    shape), ``None`` only centres.
    """
    X = np.asarray(X, dtype=float)
    C = X - X.mean(axis=0)
    if mode is None:
        return C
    if mode == "coordinate":
        sd = C.std(axis=0)
        return C / np.where(sd > 0, sd, 1.0)
    if mode == "global":
        s = np.sqrt(np.mean(np.sum(C * C, axis=1)))
        return C / s if s > 0 else C
    raise InvalidInput(f"unknown standardization {mode!r}")


def takens_embed(series, m, tau=1, standardize_mode="coordinate"):
    """Rows ``(x_t, x_{t-tau}, ..., x_{t-(m-1)tau})`` for every admissible ``t``.

    ``series`` may be 1-D or ``(n, k)``; each row then has ``m * k``
    entries. ``m=1`` returns the (standardized) series itself.
    """
    Y = as_series(series, "series")
    m = check_int(m, "m", 1)
    tau = check_int(tau, "tau", 1)
    span = (m - 1) * tau
    if len(Y) <= span:
        raise MinWindow(f"series of length {len(Y)} is too short for m={m}, tau={tau}")
    n = len(Y) - span
    cloud = np.hstack([Y[span - j * tau : span - j * tau + n] for j in range(m)])
    return standardize(cloud, standardize_mode) if standardize_mode else cloud


def autocorrelation(x, max_lag):
    x = np.asarray(x, dtype=float) - np.mean(x)
    denom = x @ x
    if denom == 0:
        return np.ones(max_lag + 1)
    return np.array([1.0] + [(x[:-k] @ x[k:]) / denom for k in range(1, max_lag + 1)])


def _fnn_fraction(x, m, tau, rtol=10.0, atol=2.0):
    """Kennel false-nearest-neighbour fraction when going from m to m+1."""
    n = len(x) - m * tau
    if n < 10:
        return np.nan
    E = np.column_stack([x[m * tau - j * tau : m * tau - j * tau + n] for j in range(m)])
    nxt = x[: n]  # the coordinate added at dimension m+1 (lag m*tau)
    dist, idx = cKDTree(E).query(E, k=2)
    d, j = dist[:, 1], idx[:, 1]
    extra = np.abs(nxt - nxt[j])
    sd = np.std(x)
    # distances below this are round-off (e.g. an exactly periodic signal)
    tiny = 1e-9 * sd
    crit1 = (extra > tiny) & (extra > rtol * np.maximum(d, tiny))
    crit2 = np.sqrt(d**2 + extra**2) / sd > atol if sd > 0 else np.zeros(n, bool)
    return float(np.mean(crit1 | crit2))


@dataclass
class DelayChoice:
    m: int
    tau: int
    degenerate: bool = False
    tau_rule: str = ""
    fnn: list = field(default_factory=list)


def select_delay_dim(series, max_m=6, fnn_threshold=0.05, max_lag=None):
    """Delay and embedding dimension for a scalar series.

    ``tau`` is the first lag where the autocorrelation drops below the
    white-noise band ``2/sqrt(n)`` (so a sine gets a quarter period); if it
    never does, the first local minimum of the ACF, and otherwise
    ``n // 10``. ``m`` is the smallest dimension whose false-nearest-
    neighbour fraction is below ``fnn_threshold``, capped at ``max_m``.
    """
    x = as_series(series, "series")[:, 0]
    n = len(x)
    if n < 4:
        raise MinWindow("series too short to choose a delay")
    if np.ptp(x) == 0:
        return DelayChoice(1, 1, True, "constant")
    max_lag = max_lag or max(1, n // 4)
    acf = autocorrelation(x, max_lag)
    band = 2.0 / np.sqrt(n)
    below = np.nonzero(acf[1:] <= band)[0]
    if below.size:
        tau, rule = int(below[0]) + 1, "acf-band"
    else:
        mins = [k for k in range(1, max_lag) if acf[k] < acf[k - 1] and acf[k] <= acf[k + 1]]
        tau, rule = (mins[0], "acf-minimum") if mins else (max(1, n // 10), "fallback")
    fractions = []
    m = max_m
    for mm in range(1, max_m + 1):
        if n - mm * tau < 10:
            m = max(1, mm - 1)
            break
        f = _fnn_fraction(x, mm, tau)
        fractions.append(f)
        if f < fnn_threshold:
            m = mm
            break
    return DelayChoice(m, tau, False, rule, fractions)


# -- Vietoris-Rips ------------------------------------------------------------------


def maxmin_landmarks(X, n_landmarks, start=0):
    """Greedy farthest-point subsample; returns indices into ``X``."""
    X = np.asarray(X, dtype=float)
    n = len(X)
    if n_landmarks >= n:
        return np.arange(n)
    idx = np.empty(n_landmarks, dtype=int)
    idx[0] = start
    d = np.linalg.norm(X - X[start], axis=1)
    for k in range(1, n_landmarks):
        j = int(np.argmax(d))
        idx[k] = j
        d = np.minimum(d, np.linalg.norm(X - X[j], axis=1))
    return idx


@dataclass
class PersistenceDiagram:
    """Birth/death pairs per homology dimension (deaths may be ``inf``)."""

    pairs: dict
    threshold: float
    landmarks: Optional[np.ndarray] = None
    n_points: int = 0

    def lifetimes(self, dim):
        """Lifetimes ``death - birth`` of one dimension, descending.

        Classes still alive at the filtration threshold are cut there.
        """
        P = self.pairs.get(dim, np.empty((0, 2)))
        life = np.minimum(P[:, 1], self.threshold) - P[:, 0]
        if dim == 0:
            life = life[np.isfinite(P[:, 1])]
        return np.sort(life)[::-1]

    def to_frame(self):
        rows = [(d, b, e) for d, P in sorted(self.pairs.items()) for b, e in P]
        return pd.DataFrame(rows, columns=["dim", "birth", "death"])


def enclosing_radius(D):
    """Scale above which the Rips complex is a cone (no further homology)."""
    return float(np.min(np.max(D, axis=1)))


def _top_simplex_estimate(D, threshold, max_dim):
    A = (D <= threshold).astype(float)
    np.fill_diagonal(A, 0.0)
    if max_dim <= 1:
        return float(np.trace(A @ A @ A) / 6.0)
    common = (A @ A) * A  # common neighbours of each edge
    return float(np.sum(common * (common - 1) / 2.0) / 12.0)


def vietoris_rips(cloud, max_dim=1, max_scale=np.inf, n_max=N_MAX, landmark_start=0, max_simplices=MAX_TOP_SIMPLICES):
    """Vietoris-Rips persistence of a point cloud up to ``max_dim`` (<= 2).

    Clouds larger than ``n_max`` are reduced to ``n_max`` max-min
    landmarks. The filtration stops at ``min(max_scale, enclosing
    radius)``; beyond the enclosing radius nothing but the essential H0
    class survives. ``ScaleCapExceeded`` is raised when the estimated
    number of (max_dim+1)-simplices exceeds ``max_simplices``.
    """
    X = np.asarray(cloud, dtype=float)
    if X.ndim != 2 or len(X) < 3:
        raise InvalidInput("vietoris_rips needs a 2-D cloud with at least 3 points")
    if not np.all(np.isfinite(X)):
        raise InvalidInput("cloud contains non-finite values")
    if max_dim not in (0, 1, 2):
        raise InvalidInput("max_dim must be 0, 1 or 2")
    landmarks = None
    if len(X) > n_max:
        landmarks = maxmin_landmarks(X, n_max, landmark_start)
        X = X[landmarks]
    D = cdist(X, X)
    thr = min(float(max_scale), enclosing_radius(D))
    est = _top_simplex_estimate(D, thr, max_dim)
    if est > max_simplices:
        raise ScaleCapExceeded(
            f"about {est:.3g} simplices of dimension {max_dim + 1} at scale {thr:.3g}; "
            "lower max_scale, max_dim or the number of landmarks"
        )
    return PersistenceDiagram(vr_pairs(D, max_dim, thr), thr, landmarks, len(X))


def calibrate_epsilon(cloud, factor=EPS_FACTOR, n_max=N_MAX, landmark_start=0):
    """Lifetime threshold: ``factor`` times the 90th percentile of nearest-neighbour distances.

    Computed on the same landmark set the diagram uses, so that it tracks
    the sampling density of the cloud.
    """
    X = np.asarray(cloud, dtype=float)
    if len(X) > n_max:
        X = X[maxmin_landmarks(X, n_max, landmark_start)]
    d, _ = cKDTree(X).query(X, k=2)
    return factor * float(np.quantile(d[:, 1], 0.9))


# -- torus test -------------------------------------------------------------------


@dataclass
class TorusTestResult:
    flag: bool
    basic_flag: bool
    top_lifetimes: tuple
    n_long: int
    concentration: float
    null_q95: Optional[float]
    epsilon: float
    h2_long: Optional[int] = None

    def to_dict(self):
        return dict(self.__dict__)


def torus_test(diagram, epsilon, rho_star=0.5, null_q95=None, require_h2=False, concentration="long"):
    """Two-loop test on the H1 lifetimes of a diagram.

    The flag needs at least two lifetimes above ``epsilon``, the top two
    carrying a share ``>= rho_star`` of the total, and the second one at
    least ``null_q95`` (skipped when ``None``). ``concentration="long"``
    sums over the lifetimes above ``epsilon``; ``"all"`` over every H1
    bar. ``basic_flag`` is the count condition alone.
    """
    life = diagram.lifetimes(1)
    long_ = life[life > epsilon]
    n_long = len(long_)
    top = tuple(float(v) for v in life[:2])
    denom = long_.sum() if concentration == "long" else life.sum()
    conc = float((life[0] + life[1]) / denom) if len(life) >= 2 and denom > 0 else 0.0
    basic = n_long >= 2
    flag = basic and conc >= rho_star
    if null_q95 is not None:
        flag = flag and len(life) >= 2 and life[1] >= null_q95
    h2 = None
    if require_h2:
        h2 = int(np.sum(diagram.lifetimes(2) > epsilon))
        flag = flag and h2 >= 1
    return TorusTestResult(bool(flag), bool(basic), top, n_long, conc, null_q95, float(epsilon), h2)


# -- surrogate null -------------------------------------------------------------------


def phase_randomize(X, rng):
    """Surrogate with each column's Fourier amplitudes and independent random phases."""
    X = np.asarray(X, dtype=float)
    mu = X.mean(axis=0)
    F = np.fft.rfft(X - mu, axis=0)
    ph = rng.uniform(0.0, 2 * np.pi, F.shape)
    ph[0] = 0.0
    if len(X) % 2 == 0:
        ph[-1] = 0.0
    return np.fft.irfft(np.abs(F) * np.exp(1j * ph), n=len(X), axis=0) + mu


def brownian_surrogate(X, rng):
    """Gaussian random walk with the sample increment covariance of ``X``."""
    X = np.asarray(X, dtype=float)
    dX = np.diff(X, axis=0)
    C = np.atleast_2d(np.cov(dX, rowvar=False))
    L = np.linalg.cholesky(C + 1e-12 * np.trace(C) * np.eye(len(C)) + 1e-300 * np.eye(len(C)))
    steps = rng.standard_normal((len(X) - 1, len(C))) @ L.T
    return np.vstack([X[:1], X[:1] + np.cumsum(steps, axis=0)])


@dataclass
class NullDistribution:
    q95: float
    top_lifetimes: np.ndarray
    method: str


def surrogate_null(series, n_surrogates=40, seed=0, method="phase", embed=None, n_max=N_MAX):
    """95th percentile of the top H1 lifetime over surrogate series.

    ``embed`` maps a surrogate series to the point cloud that is fed to
    the Rips computation (default: the series itself, globally scaled).
    """
    Y = as_series(series, "series", min_length=4)
    check_int(n_surrogates, "n_surrogates", 20)
    if method not in ("phase", "brownian"):
        raise InvalidInput("method must be 'phase' or 'brownian'")
    embed = embed or (lambda S: standardize(S, "global"))
    rng = rng_from(np.random.SeedSequence([seed, len(Y)]))
    make = phase_randomize if method == "phase" else brownian_surrogate
    tops = []
    for _ in range(n_surrogates):
        life = vietoris_rips(embed(make(Y, rng)), 1, n_max=n_max).lifetimes(1)
        tops.append(life[0] if len(life) else 0.0)
    tops = np.array(tops)
    return NullDistribution(float(np.quantile(tops, 0.95)), tops, method)


# -- sliding-window detector ---------------------------------------------------------------


@dataclass
class TorusDetectorConfig:
    """Settings for :func:`sliding_torus_flags`.

    The default cloud is the 3-D window itself (``m=1``), rescaled
    globally so the shape is kept; ``m > 1`` stacks delayed copies.
    """

    window: int = 1000
    stride: int = 50
    m: int = 1
    tau: int = 1
    scaling: str = "global"
    n_max: int = N_MAX
    rho_star: float = 0.5
    eps_factor: float = EPS_FACTOR
    epsilon: Optional[float] = None
    null_method: Optional[str] = "phase"
    n_surrogates: int = 40
    require_h2: bool = False
    seed: int = 0

    def to_dict(self):
        return dict(self.__dict__)


@dataclass
class TorusFlagSeries:
    flags: np.ndarray  # float per index: 1/0, NaN before the first window
    window_ends: np.ndarray
    results: list
    null: Optional[NullDistribution]

    @property
    def window_flags(self):
        return np.array([r.flag for r in self.results], dtype=bool)


def sliding_torus_flags(path, cfg=None):
    """Causal torus flags along a path.

    The test runs on windows ending every ``stride`` indices; each flag is
    held until the next evaluation. The surrogate null is built once from
    the first full window and reused.
    """
    cfg = cfg or TorusDetectorConfig()
    X = as_series(getattr(path, "points", path), "path")
    n = len(X)
    if n < cfg.window:
        raise MinWindow(f"path of length {n} is shorter than the window {cfg.window}")

    def cloud(W):
        return takens_embed(W, cfg.m, cfg.tau, cfg.scaling)

    null = None
    if cfg.null_method:
        null = surrogate_null(X[: cfg.window], cfg.n_surrogates, cfg.seed, cfg.null_method, cloud, cfg.n_max)
    ends = np.arange(cfg.window - 1, n, cfg.stride)
    flags = np.full(n, np.nan)
    results = []
    for k, t in enumerate(ends):
        C = cloud(X[t - cfg.window + 1 : t + 1])
        dgm = vietoris_rips(C, 2 if cfg.require_h2 else 1, n_max=cfg.n_max)
        eps = cfg.epsilon if cfg.epsilon is not None else calibrate_epsilon(C, cfg.eps_factor, cfg.n_max)
        res = torus_test(dgm, eps, cfg.rho_star, null.q95 if null else None, cfg.require_h2)
        results.append(res)
        stop = ends[k + 1] if k + 1 < len(ends) else n
        flags[t:stop] = float(res.flag)
    return TorusFlagSeries(flags, ends, results, null)
