"""Publication-style figures from benchmark output tables.

The renderer is purely presentational: every number drawn comes from the
input files.  The only derived quantities are display summaries of plotted
values (box-plot quartiles, the across-seed median and interquartile band in
the regret figure, the per-step argmax overlaid on the runlength heatmap).

Output is deterministic: a fixed style sheet, a fixed SVG hash salt, and no
timestamp metadata, so rendering the same inputs twice yields identical
bytes.  Empty inputs still produce a figure — blank axes with a warning
annotation — so batch pipelines never break on a zero-row table.
"""

from __future__ import annotations

import os
import tempfile
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Optional

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .io import read_summary, read_table

__all__ = ["FIGURE_IDS", "FigureSpec", "RenderResult", "render"]

FIGURE_IDS = (
    "rolling_error",
    "rmse_box",
    "runlength_heatmap",
    "regret_band",
    "ewma_overlay",
    "decision_boundary",
)

_REQUIRED_INPUTS = {
    "rolling_error": ("metrics",),
    "rmse_box": ("summary",),
    "runlength_heatmap": ("runlength",),
    "regret_band": ("metrics",),
    "ewma_overlay": ("metrics",),
    "decision_boundary": ("metrics", "stream"),
}

_OUTPUT_SUFFIXES = (".svg", ".png")

_RC = {
    "figure.figsize": (6.4, 4.2),
    "figure.dpi": 110,
    "savefig.dpi": 110,
    "font.size": 9.0,
    "axes.grid": True,
    "grid.alpha": 0.3,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "lines.linewidth": 1.3,
    "legend.frameon": False,
    "svg.hashsalt": "bayesfilt-plots",
    "svg.fonttype": "none",
    "path.simplify": False,
}

_EMPTY_MESSAGE = "warning: no data to plot"


@dataclass(frozen=True)
class FigureSpec:
    """One figure to render: which plot, from which files, to which path.

    ``inputs`` maps input roles (``metrics``, ``summary``, ``runlength``,
    ``stream``) to file paths; each figure id requires a fixed set of roles.
    ``method`` and ``seed`` select a single trial for figures that show one
    trajectory (runlength heatmap, EWMA overlay, decision boundary); they
    default to the first present in the file.  ``metric`` picks the column
    (rolling-error figure) or summary metric (box plot) when the default
    auto-selection is not wanted.
    """

    figure: str
    inputs: Mapping[str, str]
    output: str
    method: Optional[str] = None
    seed: Optional[int] = None
    metric: Optional[str] = None
    title: Optional[str] = None

    def __post_init__(self):
        if self.figure not in FIGURE_IDS:
            raise ValueError(
                f"unknown figure id {self.figure!r}; expected one of "
                f"{list(FIGURE_IDS)}"
            )
        if not isinstance(self.inputs, Mapping) or not all(
            isinstance(k, str) and isinstance(v, str)
            for k, v in self.inputs.items()
        ):
            raise ValueError("inputs must map role names to file paths")
        required = set(_REQUIRED_INPUTS[self.figure])
        missing = sorted(required - set(self.inputs))
        extra = sorted(set(self.inputs) - required)
        if missing:
            raise ValueError(
                f"figure {self.figure!r} needs input role(s) {missing}"
            )
        if extra:
            raise ValueError(
                f"figure {self.figure!r} does not use input role(s) {extra}"
            )
        if not isinstance(self.output, str) or not self.output:
            raise ValueError("output path must be a non-empty string")
        suffix = Path(self.output).suffix.lower()
        if suffix not in _OUTPUT_SUFFIXES:
            raise ValueError(
                f"output must end in one of {list(_OUTPUT_SUFFIXES)}, "
                f"got {self.output!r}"
            )
        if self.seed is not None and (
            isinstance(self.seed, bool) or not isinstance(self.seed, int)
        ):
            raise ValueError("seed must be an integer")


@dataclass(frozen=True)
class RenderResult:
    """Where the figure went plus what was drawn.

    ``info`` carries figure-specific facts (selected method/seed, plotted
    column, and — for the runlength heatmap — the mode trajectory) so tests
    and callers can check the rendering without parsing the image.
    """

    path: str
    figure: str
    empty: bool
    info: dict = field(default_factory=dict)


# ---------------------------------------------------------------------------
# Shared helpers


def _color(index: int):
    return plt.get_cmap("tab10")(index % 10)


def _blank(ax, reason: str):
    ax.set_xticks([])
    ax.set_yticks([])
    ax.grid(False)
    ax.annotate(
        _EMPTY_MESSAGE,
        xy=(0.5, 0.55),
        xycoords="axes fraction",
        ha="center",
        va="center",
        fontsize=11,
        color="0.35",
    )
    ax.annotate(
        reason,
        xy=(0.5, 0.4),
        xycoords="axes fraction",
        ha="center",
        va="center",
        fontsize=8,
        color="0.5",
    )


def _ordered_unique(series) -> list:
    return list(dict.fromkeys(series.tolist()))


def _select(frame, column: str, requested, path, label: str):
    """Pick a value from ``column``, defaulting to the first in file order."""
    values = _ordered_unique(frame[column])
    if requested is None:
        return values[0]
    if requested not in values:
        raise ValueError(
            f"{path}: {label} {requested!r} not present; available {values}"
        )
    return requested


# ---------------------------------------------------------------------------
# Figure drawers. Each returns (empty, info).


def _draw_rolling_error(spec, fig, ax):
    path = spec.inputs["metrics"]
    frame = read_table(path, ("method", "seed", "t"))
    column = spec.metric
    if column is None:
        rolling = [c for c in frame.columns if c.startswith("rolling_")]
        if not rolling:
            raise ValueError(
                f"{path}: no rolling_* column to plot; pass an explicit "
                f"metric or use a metrics table with one"
            )
        column = rolling[0]
    elif column not in frame.columns:
        raise ValueError(
            f"{path}: missing required column(s) [{column!r}]; "
            f"file has {list(frame.columns)}"
        )
    if frame.empty:
        _blank(ax, f"{Path(path).name} has no rows")
        return True, {"column": column}
    methods = _ordered_unique(frame["method"])
    multi_seed = frame["seed"].nunique() > 1
    for idx, method in enumerate(methods):
        sub = frame[frame["method"] == method]
        for n, seed in enumerate(sorted(sub["seed"].unique())):
            trial = sub[sub["seed"] == seed].sort_values("t")
            ax.plot(
                trial["t"],
                trial[column],
                color=_color(idx),
                alpha=0.45 if multi_seed else 0.9,
                label=method if n == 0 else None,
            )
    ax.set_xlabel("step")
    ax.set_ylabel(column.replace("_", " "))
    ax.legend()
    return False, {"column": column, "methods": methods}


def _draw_rmse_box(spec, fig, ax):
    path = spec.inputs["summary"]
    summary = read_summary(path)
    methods = summary["methods"]
    available: list = []
    for entry in methods.values():
        for key in entry.get("per_seed", {}):
            if key not in available:
                available.append(key)
    if not available:
        _blank(ax, f"{Path(path).name} has no per-seed metrics")
        return True, {}
    metric = spec.metric
    if metric is None:
        metric = "rmse" if "rmse" in available else available[0]
    elif metric not in available:
        raise ValueError(
            f"{path}: metric {metric!r} not in summary; available {available}"
        )
    labels, data = [], []
    for name, entry in methods.items():
        values = entry.get("per_seed", {}).get(metric)
        if values:
            labels.append(name)
            data.append([values[k] for k in sorted(values, key=int)])
    if not data:
        _blank(ax, f"no method reports {metric!r}")
        return True, {"metric": metric}
    box = ax.boxplot(data, tick_labels=labels, patch_artist=True)
    for idx, patch in enumerate(box["boxes"]):
        patch.set_facecolor(_color(idx))
        patch.set_alpha(0.5)
    for median in box["medians"]:
        median.set_color("black")
    ax.set_ylabel(metric)
    return False, {
        "metric": metric,
        "methods": labels,
        "n_seeds": [len(d) for d in data],
    }


def _draw_runlength_heatmap(spec, fig, ax):
    path = spec.inputs["runlength"]
    frame = read_table(path, ("method", "seed", "t", "r", "log_post"))
    if frame.empty:
        _blank(ax, f"{Path(path).name} has no rows")
        return True, {}
    method = _select(frame, "method", spec.method, path, "method")
    sub = frame[frame["method"] == method]
    seed = _select(sub, "seed", spec.seed, path, "seed")
    sub = sub[sub["seed"] == seed].sort_values(["t", "r"], kind="mergesort")
    ts = np.asarray(sorted(sub["t"].unique()), dtype=int)
    r_max = int(sub["r"].max())
    grid = np.full((r_max + 1, ts.size), np.nan)
    col_of = {t: j for j, t in enumerate(ts)}
    for t, r, lp in zip(sub["t"], sub["r"], sub["log_post"]):
        grid[int(r), col_of[int(t)]] = float(lp)
    # argmax scans r = 0 upward, so ties resolve to the shortest runlength
    modes = [int(np.nanargmax(grid[:, j])) for j in range(ts.size)]
    mesh = ax.imshow(
        np.ma.masked_invalid(grid),
        origin="lower",
        aspect="auto",
        interpolation="nearest",
        extent=(ts[0] - 0.5, ts[-1] + 0.5, -0.5, r_max + 0.5),
        cmap="viridis",
    )
    fig.colorbar(mesh, ax=ax, label="log posterior")
    ax.plot(ts, modes, color="white", linewidth=1.2, label="mode runlength")
    ax.grid(False)
    ax.set_xlabel("step")
    ax.set_ylabel("runlength")
    ax.legend(loc="upper left")
    return False, {
        "method": method,
        "seed": int(seed),
        "mode_trajectory": {"t": [int(t) for t in ts], "r": modes},
    }


def _draw_regret_band(spec, fig, ax):
    path = spec.inputs["metrics"]
    frame = read_table(path, ("method", "seed", "t", "regret"))
    if frame.empty:
        _blank(ax, f"{Path(path).name} has no rows")
        return True, {}
    methods = _ordered_unique(frame["method"])
    for idx, method in enumerate(methods):
        sub = frame[frame["method"] == method]
        pivot = (
            sub.pivot_table(
                index="t", columns="seed", values="regret", aggfunc="first"
            )
            .sort_index()
        )
        median = pivot.median(axis=1)
        lo = pivot.quantile(0.25, axis=1)
        hi = pivot.quantile(0.75, axis=1)
        ax.plot(pivot.index, median, color=_color(idx), label=method)
        ax.fill_between(
            pivot.index, lo, hi, color=_color(idx), alpha=0.25, linewidth=0
        )
    ax.set_xlabel("step")
    ax.set_ylabel("cumulative regret")
    ax.legend()
    return False, {
        "methods": methods,
        "band": "interquartile range across seeds",
    }


def _draw_ewma_overlay(spec, fig, ax):
    path = spec.inputs["metrics"]
    frame = read_table(path, ("method", "seed", "t", "y", "m"))
    if frame.empty:
        _blank(ax, f"{Path(path).name} has no rows")
        return True, {}
    seed = _select(frame, "seed", spec.seed, path, "seed")
    sub = frame[frame["seed"] == seed]
    methods = _ordered_unique(sub["method"])
    observed = sub[sub["method"] == methods[0]].sort_values("t")
    ax.plot(
        observed["t"],
        observed["y"],
        color="0.75",
        linewidth=0.9,
        label="observations",
    )
    for idx, method in enumerate(methods):
        trial = sub[sub["method"] == method].sort_values("t")
        ax.plot(trial["t"], trial["m"], color=_color(idx), label=method)
    ax.set_xlabel("step")
    ax.set_ylabel("value")
    ax.legend()
    return False, {"seed": int(seed), "methods": methods}


def _draw_decision_boundary(spec, fig, ax):
    metrics_path = spec.inputs["metrics"]
    metrics = read_table(
        metrics_path, ("method", "seed", "t", "y", "pred_class")
    )
    stream = read_table(spec.inputs["stream"], ("t", "x_0", "x_1"))
    if metrics.empty:
        _blank(ax, f"{Path(metrics_path).name} has no rows")
        return True, {}
    method = _select(metrics, "method", spec.method, metrics_path, "method")
    sub = metrics[metrics["method"] == method]
    seed = _select(sub, "seed", spec.seed, metrics_path, "seed")
    sub = sub[sub["seed"] == seed]
    joined = sub.merge(stream[["t", "x_0", "x_1"]], on="t", how="inner")
    if joined.empty:
        raise ValueError(
            "metrics and stream tables share no steps (empty join on 't')"
        )
    correct = joined["pred_class"] == joined["y"]
    for idx, cls in enumerate(sorted(joined["pred_class"].unique())):
        pts = joined[correct & (joined["pred_class"] == cls)]
        ax.scatter(
            pts["x_0"],
            pts["x_1"],
            s=18,
            color=_color(idx),
            edgecolors="none",
            label=f"predicted class {int(cls)}",
        )
    missed = joined[~correct]
    if len(missed):
        ax.scatter(
            missed["x_0"],
            missed["x_1"],
            s=26,
            marker="x",
            color="tab:red",
            linewidths=1.0,
            label="misclassified",
        )
    ax.set_xlabel("x_0")
    ax.set_ylabel("x_1")
    ax.legend()
    return False, {
        "method": method,
        "seed": int(seed),
        "n_points": int(len(joined)),
        "n_misclassified": int((~correct).sum()),
    }


_DRAWERS = {
    "rolling_error": _draw_rolling_error,
    "rmse_box": _draw_rmse_box,
    "runlength_heatmap": _draw_runlength_heatmap,
    "regret_band": _draw_regret_band,
    "ewma_overlay": _draw_ewma_overlay,
    "decision_boundary": _draw_decision_boundary,
}


# ---------------------------------------------------------------------------
# Entry point


def _save(fig, output: str):
    out = Path(output)
    out.parent.mkdir(parents=True, exist_ok=True)
    suffix = out.suffix.lower()
    handle, tmp = tempfile.mkstemp(dir=out.parent, suffix=suffix)
    os.close(handle)
    try:
        kwargs = {"metadata": {"Date": None}} if suffix == ".svg" else {}
        fig.savefig(tmp, format=suffix[1:], **kwargs)
        os.replace(tmp, out)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def render(spec: FigureSpec) -> RenderResult:
    """Draw the requested figure and write it atomically to ``spec.output``."""
    draw = _DRAWERS[spec.figure]
    with matplotlib.rc_context(_RC):
        fig, ax = plt.subplots()
        try:
            empty, info = draw(spec, fig, ax)
            if spec.title:
                ax.set_title(spec.title)
            fig.tight_layout()
            _save(fig, spec.output)
        finally:
            plt.close(fig)
    return RenderResult(
        path=spec.output, figure=spec.figure, empty=empty, info=info
    )
