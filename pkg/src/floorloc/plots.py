"""Figure rendering: trajectories over floorplans with a time colormap."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .geo import FloorplanRaster, world_to_pixel
from .trajectory import PositionSeries


def plot_series_on_floorplan(plan: FloorplanRaster, series: PositionSeries,
                             out_path, gt_points=None, fixes=None,
                             title: str | None = None) -> None:
    """Render a position series over the floorplan raster and save a PNG.

    The trajectory is drawn with the same blue-to-red time colormap used for
    CNN samples; ground-truth points show as yellow crosses, fixes as circles
    sized by their accuracy radius.
    """
    reg = plan.registration
    px = world_to_pixel(series.positions, reg)
    t = series.timestamps
    t_norm = (t - t[0]) / (t[-1] - t[0]) if t[-1] > t[0] else np.zeros(len(t))

    fig, ax = plt.subplots(figsize=(8, 8))
    ax.imshow(plan.rgb, origin="upper")
    ax.scatter(px[:, 0], px[:, 1], c=t_norm, cmap="jet", s=2, linewidths=0)
    if fixes is not None:
        fpx = world_to_pixel(np.array([f.position for f in fixes]), reg)
        radii = np.array([f.accuracy for f in fixes]) * reg.pixels_per_meter
        ax.scatter(fpx[:, 0], fpx[:, 1], facecolors="none", edgecolors="black",
                   s=np.maximum(radii, 2.0) ** 2, linewidths=0.8, label="fixes")
    if gt_points is not None:
        gpx = world_to_pixel(np.array([p for _, p in gt_points]), reg)
        ax.scatter(gpx[:, 0], gpx[:, 1], marker="x", color="gold", s=30,
                   linewidths=1.5, label="ground truth")
    if title:
        ax.set_title(title)
    if fixes is not None or gt_points is not None:
        ax.legend(loc="lower right")
    ax.set_xlim(0, plan.width)
    ax.set_ylim(plan.height, 0)
    ax.set_xlabel("px")
    ax.set_ylabel("px")
    fig.tight_layout()
    fig.savefig(out_path, dpi=150)
    plt.close(fig)


def plot_error_bars(reports: dict, out_path, title: str | None = None) -> None:
    """Bar chart of mean errors with first/third-quartile whiskers."""
    names = list(reports)
    means = [reports[n].mean for n in names]
    q1 = [reports[n].q1 for n in names]
    q3 = [reports[n].q3 for n in names]
    err = np.array([np.maximum(np.array(means) - q1, 0.0),
                    np.maximum(np.array(q3) - means, 0.0)])

    fig, ax = plt.subplots(figsize=(1.6 * len(names) + 2, 4))
    ax.bar(names, means, yerr=err, capsize=4, color="steelblue")
    ax.set_ylabel("localization error (m)")
    if title:
        ax.set_title(title)
    ax.tick_params(axis="x", rotation=20)
    fig.tight_layout()
    fig.savefig(out_path, dpi=150)
    plt.close(fig)
