"""Figure specifications and rendering.

render() returns the plotted data layer (per panel, per series: label,
rounds, mean, band half-width) alongside writing the image, so callers
and tests can verify the numbers without decoding pixels.
"""

import os
from typing import Dict, Sequence, Tuple

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402  (backend must be set first)
import numpy as np  # noqa: E402

from .runs import load_manifest, load_run, mean_std_curves  # noqa: E402

PANELS = ("regret", "violation", "performance", "sensitivity")

_PANEL_COLUMN = {
    "regret": "cum_regret",
    "violation": "cum_violation",
    "performance": "cum_reward",
}
_PANEL_YLABEL = {
    "regret": "cumulative regret",
    "violation": "cumulative violation",
    "performance": "cumulative reward",
    "sensitivity": "cumulative violation",
}

X_SCALES = ("linear", "log")
IMAGE_FORMATS = ("png", "pdf", "svg")


class FigureSpec:
    """What to draw: run directories, panels, axis scale, output file."""

    __slots__ = ("run_dirs", "panels", "x_scale", "out_path", "image_format")

    def __init__(self, run_dirs: Sequence[str], panels: Sequence[str],
                 x_scale: str = "linear", out_path: str = "figure.png",
                 image_format: str = None):
        run_dirs = tuple(run_dirs)
        panels = tuple(panels)
        if not run_dirs:
            raise ValueError("at least one run directory is required")
        if not panels:
            raise ValueError("at least one panel is required")
        for panel in panels:
            if panel not in PANELS:
                raise ValueError(f"unknown panel {panel!r}; "
                                 f"expected one of {PANELS}")
        if "sensitivity" in panels and len(panels) > 1:
            raise ValueError("the sensitivity panel cannot be combined "
                             "with other panels")
        if x_scale not in X_SCALES:
            raise ValueError(f"x_scale must be one of {X_SCALES}")
        if image_format is None:
            suffix = os.path.splitext(out_path)[1].lstrip(".").lower()
            image_format = suffix or "png"
        if image_format not in IMAGE_FORMATS:
            raise ValueError(f"image format must be one of {IMAGE_FORMATS}")
        self.run_dirs = run_dirs
        self.panels = panels
        self.x_scale = x_scale
        self.out_path = out_path
        self.image_format = image_format


def _comparison_data(spec: FigureSpec) -> Dict:
    runs = [load_run(d) for d in spec.run_dirs]
    instances = {run.instance for run in runs}
    if len(instances) > 1:
        raise ValueError("comparison panels need runs on one instance, "
                         f"got {sorted(instances)}")
    panels = []
    for panel in spec.panels:
        column = _PANEL_COLUMN[panel]
        series = []
        for run in runs:
            t, mean, std = mean_std_curves(run, column)
            series.append({"label": run.label, "t": t, "mean": mean,
                           "std": std})
        panels.append({"panel": panel, "series": series})
    return {"panels": panels}


def _sensitivity_data(spec: FigureSpec) -> Dict:
    if len(spec.run_dirs) != 1:
        raise ValueError("the sensitivity panel takes exactly one sweep "
                         "directory containing manifest.json")
    root = spec.run_dirs[0]
    manifest = load_manifest(root)
    series = []
    for point in manifest["points"]:
        run = load_run(os.path.join(root, point["dir"]))
        t, mean, std = mean_std_curves(run, "cum_violation")
        label = f"margin {point['value']:g}"
        series.append({"label": label, "t": t, "mean": mean, "std": std})
    return {"panels": [{"panel": "sensitivity", "series": series}]}


def render(spec: FigureSpec) -> Dict:
    """Write the figure and return {path, panels: [...]} data layer."""
    if spec.panels == ("sensitivity",):
        data = _sensitivity_data(spec)
    else:
        data = _comparison_data(spec)
    panels = data["panels"]
    fig, axes = plt.subplots(1, len(panels),
                             figsize=(5.5 * len(panels), 4.2),
                             squeeze=False)
    for ax, panel in zip(axes[0], panels):
        for entry in panel["series"]:
            t, mean, std = entry["t"], entry["mean"], entry["std"]
            line, = ax.plot(t, mean, label=entry["label"], linewidth=1.4)
            ax.fill_between(t, mean - std, mean + std,
                            color=line.get_color(), alpha=0.22,
                            linewidth=0.0)
        ax.set_xscale(spec.x_scale)
        ax.set_xlabel("round")
        ax.set_ylabel(_PANEL_YLABEL[panel["panel"]])
        ax.set_title(panel["panel"])
        ax.legend()
    fig.tight_layout()
    fig.savefig(spec.out_path, format=spec.image_format, dpi=130)
    plt.close(fig)
    data["path"] = spec.out_path
    return data
