"""Brownian motion on surfaces, geometry inference and tangent-space forecasting."""

__version__ = "0.1.0"

from .curvature import CurvatureConfig, Regime, classify_regimes, curvature_series  # noqa: E402
from .exceptions import GeoAlphaError  # noqa: E402
from .fitgeom import GeometryFitter, fit_geometry  # noqa: E402
from .forecast import (  # noqa: E402
    ForecastConfig,
    GPRegressor,
    VARForecaster,
    pipeline_geometry_aware,
    pipeline_native,
)
from .geometry import Kind, ManifoldSpec, exp_map, from_chart, log_map, tangent_projector, to_chart  # noqa: E402
from .markets import BacktestConfig, load_prices, run_backtest  # noqa: E402
from .simulate import CbmConfig, Path3D, ScenarioConfig, build_scenario, simulate_ambient, simulate_cbm  # noqa: E402
from .topology import TorusDetectorConfig, sliding_torus_flags, torus_test, vietoris_rips  # noqa: E402

__all__ = [
    "BacktestConfig",
    "CbmConfig",
    "CurvatureConfig",
    "ForecastConfig",
    "GPRegressor",
    "GeoAlphaError",
    "GeometryFitter",
    "Kind",
    "ManifoldSpec",
    "Path3D",
    "Regime",
    "ScenarioConfig",
    "TorusDetectorConfig",
    "VARForecaster",
    "build_scenario",
    "classify_regimes",
    "curvature_series",
    "exp_map",
    "fit_geometry",
    "from_chart",
    "load_prices",
    "log_map",
    "pipeline_geometry_aware",
    "pipeline_native",
    "run_backtest",
    "simulate_ambient",
    "simulate_cbm",
    "sliding_torus_flags",
    "tangent_projector",
    "to_chart",
    "torus_test",
    "vietoris_rips",
]
