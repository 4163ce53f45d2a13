"""Coordinate frames, floorplan raster loading, and world<->pixel registration.

The world frame is a local metric frame (meters) anchored per floorplan.
Registration to pixel space is a similarity transform: uniform scale,
rotation, translation, and an optional y-flip for rasters whose rows grow
downward.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from enum import IntEnum
from pathlib import Path

import numpy as np
from PIL import Image

log = logging.getLogger(__name__)

# Nearest-RGB legend matching rejects pixels farther than this from every
# legend color (Euclidean distance in RGB space).
DEFAULT_COLOR_THRESHOLD = 60.0


class PixelClass(IntEnum):
    CORRIDOR = 0
    ROOM = 1
    UNWALKABLE = 2
    OPEN_BOUNDARY = 3
    WALL = 4
    BACKGROUND = 5


WALKABLE_CLASSES = (PixelClass.CORRIDOR, PixelClass.ROOM, PixelClass.OPEN_BOUNDARY)

_LEGEND_KEYS = {
    "corridor": PixelClass.CORRIDOR,
    "room": PixelClass.ROOM,
    "unwalkable": PixelClass.UNWALKABLE,
    "open_boundary": PixelClass.OPEN_BOUNDARY,
    "wall": PixelClass.WALL,
    "background": PixelClass.BACKGROUND,
}


@dataclass(frozen=True)
class GeoRegistration:
    """Similarity transform from world meters to floorplan pixels.

    ``rotation`` is the angle (rad) of the world x-axis in the pixel frame.
    ``flip_y`` negates the pixel y after rotation (raster rows grow down).
    """

    origin_world: np.ndarray
    pixels_per_meter: float
    rotation: float = 0.0
    flip_y: bool = False

    def __post_init__(self):
        object.__setattr__(self, "origin_world", np.asarray(self.origin_world, dtype=float))
        if self.pixels_per_meter <= 0:
            raise ValueError("pixels_per_meter must be > 0")


def world_to_pixel(points, reg: GeoRegistration) -> np.ndarray:
    """Map world points (m) to continuous pixel coordinates (x, y)."""
    p = np.asarray(points, dtype=float)
    d = p - reg.origin_world
    c, s = np.cos(reg.rotation), np.sin(reg.rotation)
    x = reg.pixels_per_meter * (c * d[..., 0] - s * d[..., 1])
    y = reg.pixels_per_meter * (s * d[..., 0] + c * d[..., 1])
    if reg.flip_y:
        y = -y
    return np.stack([x, y], axis=-1)


def pixel_to_world(points, reg: GeoRegistration) -> np.ndarray:
    """Exact inverse of :func:`world_to_pixel`."""
    q = np.asarray(points, dtype=float)
    x = q[..., 0] / reg.pixels_per_meter
    y = q[..., 1] / reg.pixels_per_meter
    if reg.flip_y:
        y = -y
    c, s = np.cos(reg.rotation), np.sin(reg.rotation)
    wx = c * x + s * y
    wy = -s * x + c * y
    return np.stack([wx, wy], axis=-1) + reg.origin_world


def pixel_delta_to_world(deltas, reg: GeoRegistration) -> np.ndarray:
    """Convert pixel displacement vectors to world meters (no translation)."""
    d = np.asarray(deltas, dtype=float)
    x = d[..., 0] / reg.pixels_per_meter
    y = d[..., 1] / reg.pixels_per_meter
    if reg.flip_y:
        y = -y
    c, s = np.cos(reg.rotation), np.sin(reg.rotation)
    return np.stack([c * x + s * y, -s * x + c * y], axis=-1)


@dataclass
class FloorplanRaster:
    """Semantic floorplan raster plus its geo-registration.

    ``classes`` and ``rgb`` are row-major grids of identical height x width;
    both are immutable after load and safe to share across workers.
    """

    classes: np.ndarray  # (H, W) uint8 of PixelClass values
    rgb: np.ndarray  # (H, W, 3) uint8
    registration: GeoRegistration
    legend: dict[PixelClass, tuple[int, int, int]] = field(default_factory=dict)

    def __post_init__(self):
        if self.classes.shape != self.rgb.shape[:2]:
            raise ValueError("classes and rgb must have identical dimensions")
        self.classes.setflags(write=False)
        self.rgb.setflags(write=False)

    @property
    def height(self) -> int:
        return self.classes.shape[0]

    @property
    def width(self) -> int:
        return self.classes.shape[1]

    @property
    def background_count(self) -> int:
        return int(np.count_nonzero(self.classes == PixelClass.BACKGROUND))

    def background_color(self) -> tuple[int, int, int]:
        return self.legend.get(PixelClass.BACKGROUND, (0, 0, 0))


def classify_colors(rgb: np.ndarray, legend: list[tuple[PixelClass, tuple[int, int, int]]],
                    threshold: float = DEFAULT_COLOR_THRESHOLD) -> np.ndarray:
    """Assign every pixel the legend class with minimal RGB distance.

    Ties go to the earlier legend entry; distances beyond ``threshold``
    become BACKGROUND. Classification is total: every pixel gets a class.
    """
    if not legend:
        raise ValueError("legend must be non-empty")
    flat = rgb.reshape(-1, 3).astype(np.float64)
    colors = np.array([c for _, c in legend], dtype=np.float64)
    # (npix, nlegend) distance table; argmin picks the first (lowest-index) tie
    dist = np.linalg.norm(flat[:, None, :] - colors[None, :, :], axis=2)
    best = np.argmin(dist, axis=1)
    classes = np.array([cls for cls, _ in legend], dtype=np.uint8)[best]
    too_far = dist[np.arange(len(flat)), best] > threshold
    classes[too_far] = PixelClass.BACKGROUND
    return classes.reshape(rgb.shape[:2])


def load_floorplan(image_path, legend: list[tuple[PixelClass, tuple[int, int, int]]],
                   registration: GeoRegistration,
                   threshold: float = DEFAULT_COLOR_THRESHOLD) -> FloorplanRaster:
    """Load an 8-bit RGB floorplan image and classify pixels by the legend."""
    path = Path(image_path)
    if not path.is_file():
        raise FileNotFoundError(f"floorplan image not found: {path}")
    with Image.open(path) as im:
        rgb = np.asarray(im.convert("RGB"), dtype=np.uint8)
    if rgb.size == 0:
        raise ValueError(f"empty floorplan image: {path}")
    classes = classify_colors(rgb, legend, threshold)
    plan = FloorplanRaster(classes=classes, rgb=rgb, registration=registration,
                           legend={cls: tuple(c) for cls, c in legend})
    n_bg = plan.background_count
    if n_bg:
        log.info("floorplan %s: %d of %d pixels unmatched by legend (background)",
                 path.name, n_bg, rgb.shape[0] * rgb.shape[1])
    return plan


def parse_legend(raw: dict) -> list[tuple[PixelClass, tuple[int, int, int]]]:
    """Parse the config legend mapping (class name -> [r, g, b])."""
    if not raw:
        raise ValueError("legend must be non-empty")
    legend = []
    for key, color in raw.items():
        name = key.strip().lower().replace("-", "_").replace(" ", "_")
        if name not in _LEGEND_KEYS:
            raise ValueError(f"unknown legend class {key!r}; expected one of "
                             f"{sorted(_LEGEND_KEYS)}")
        color = tuple(int(v) for v in color)
        if len(color) != 3 or any(v < 0 or v > 255 for v in color):
            raise ValueError(f"legend color for {key!r} must be 3 bytes, got {color}")
        legend.append((_LEGEND_KEYS[name], color))
    return legend


def load_registration(config_path) -> tuple[GeoRegistration, list[tuple[PixelClass, tuple[int, int, int]]]]:
    """Read the registration + legend JSON config for a floorplan."""
    path = Path(config_path)
    with open(path) as fh:
        cfg = json.load(fh)
    try:
        reg = GeoRegistration(
            origin_world=np.asarray(cfg["origin_world"], dtype=float),
            pixels_per_meter=float(cfg["pixels_per_meter"]),
            rotation=float(cfg.get("rotation_rad", 0.0)),
            flip_y=bool(cfg.get("flip_y", False)),
        )
    except KeyError as exc:
        raise ValueError(f"{path}: missing registration field {exc}") from exc
    legend = parse_legend(cfg.get("legend", {}))
    return reg, legend
