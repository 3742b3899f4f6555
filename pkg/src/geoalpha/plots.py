"""Static SVG figures drawn from the emitted CSV tables.

Every function takes a DataFrame as read back from disk, so a figure can
be regenerated from its CSV alone. Output is byte-stable: the SVG id salt
is fixed and no creation date is written.
"""

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

_RC = {"svg.hashsalt": "geoalpha", "svg.fonttype": "none", "path.simplify": False}
_REGIME_COLORS = {"SphereLike": "tab:red", "HyperbolicLike": "tab:blue", "Flat": "tab:gray", "TorusLike": "tab:green"}


def _save(fig, path):
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)


def plot_path(df, path):
    """3-D trajectory coloured by its ``label`` column when present."""
    with plt.rc_context(_RC):
        fig = plt.figure(figsize=(6, 5))
        ax = fig.add_subplot(projection="3d")
        labels = df["label"].fillna("").astype(str) if "label" in df else None
        if labels is None or (labels == "").all():
            ax.plot(df["x"], df["y"], df["z"], lw=0.5)
        else:
            for name in sorted(labels.unique()):
                sel = (labels == name).to_numpy()
                ax.scatter(df["x"][sel], df["y"][sel], df["z"][sel], s=0.5, label=name)
            ax.legend(loc="upper left", fontsize="small")
        ax.set_xlabel("x")
        ax.set_ylabel("y")
        ax.set_zlabel("z")
        _save(fig, path)


def plot_curvature(df, path, kappa_pos=0.01, kappa_neg=0.01):
    """Curvature estimate over time with the regime thresholds and torus flags."""
    with plt.rc_context(_RC):
        fig, (ax, ax2) = plt.subplots(2, 1, figsize=(8, 5), sharex=True, gridspec_kw={"height_ratios": [3, 1]})
        ax.plot(df["index"], df["K"], lw=0.6, color="black")
        ax.axhline(kappa_pos, color="tab:red", ls="--", lw=0.8)
        ax.axhline(-kappa_neg, color="tab:blue", ls="--", lw=0.8)
        ax.set_ylabel("K")
        if "regime" in df:
            reg = df["regime"].fillna("").astype(str)
            for name, color in _REGIME_COLORS.items():
                sel = (reg == name).to_numpy()
                ax2.fill_between(df["index"], 0, 1, where=sel, color=color, step="mid", lw=0, label=name)
            ax2.legend(loc="upper left", ncol=4, fontsize="x-small")
        ax2.set_yticks([])
        ax2.set_xlabel("index")
        _save(fig, path)


def plot_forecast_errors(frames, path):
    """Cumulative absolute error per arm; ``frames`` maps arm name to its forecast table."""
    with plt.rc_context(_RC):
        fig, ax = plt.subplots(figsize=(8, 4))
        for arm in sorted(frames):
            df = frames[arm]
            err = df[["abs_err_x", "abs_err_y", "abs_err_z"]].sum(axis=1).cumsum()
            ax.plot(df["index"], err, lw=0.8, label=arm)
        ax.set_xlabel("index")
        ax.set_ylabel("cumulative |error|")
        ax.legend()
        _save(fig, path)


def plot_backtest(df, path):
    """Cumulative pnl of every ``*_total`` run, the gated series and the benchmarks."""
    with plt.rc_context(_RC):
        fig, ax = plt.subplots(figsize=(8, 4))
        cols = [c for c in df.columns if c.endswith("_total")] + [c for c in ("gated", "LO", "RP") if c in df]
        x = np.arange(len(df))
        for c in cols:
            ax.plot(x, np.nancumsum(df[c].to_numpy(float)), lw=0.8, label=c.removesuffix("_total"))
        ax.set_xlabel("trading day")
        ax.set_ylabel("cumulative pnl")
        ax.legend(fontsize="small")
        _save(fig, path)
