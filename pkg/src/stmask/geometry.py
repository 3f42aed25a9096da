"""Canvas and latent-grid geometry: boxes, trajectories, rasterization.

Pixel boxes are half-open ([x0, x1) by [y0, y1)) so widths, areas, and
overlaps stay exact for integer coordinates. Latent masks are flat binary
vectors in row-major order (y outer, x inner).
"""

import math
from dataclasses import dataclass
from typing import Mapping, Optional, Sequence

import numpy as np

__all__ = [
    "Canvas",
    "BBox",
    "BBoxTrajectory",
    "LatentGrid",
    "FrameMaskSet",
    "rasterize",
    "interpolate_trajectory",
]


@dataclass(frozen=True)
class Canvas:
    """Video extent: pixel width/height and frame count."""

    width_px: int
    height_px: int
    num_frames: int

    def __post_init__(self):
        if self.width_px < 8 or self.height_px < 8:
            raise ValueError("canvas must be at least 8x8 px")
        if self.num_frames < 1:
            raise ValueError("canvas needs at least one frame")


@dataclass(frozen=True)
class BBox:
    """Axis-aligned box in pixel coordinates, half-open on both axes.

    Coordinates may be fractional (interpolated trajectories produce
    non-integer boxes); integer-valued coordinates keep all derived
    arithmetic (area, intersection) exact.
    """

    x0: float
    y0: float
    x1: float
    y1: float

    def __post_init__(self):
        coords = (self.x0, self.y0, self.x1, self.y1)
        if not all(math.isfinite(c) for c in coords):
            raise ValueError(f"box coordinates must be finite, got {coords}")
        if not (0 <= self.x0 < self.x1 and 0 <= self.y0 < self.y1):
            raise ValueError(f"degenerate or negative box {coords}")

    @property
    def width(self) -> float:
        return self.x1 - self.x0

    @property
    def height(self) -> float:
        return self.y1 - self.y0

    @property
    def area(self) -> float:
        return self.width * self.height

    @property
    def center(self) -> tuple[float, float]:
        return ((self.x0 + self.x1) / 2.0, (self.y0 + self.y1) / 2.0)

    def translate(self, dx: float, dy: float) -> "BBox":
        return BBox(self.x0 + dx, self.y0 + dy, self.x1 + dx, self.y1 + dy)

    def scaled(self, k: float) -> "BBox":
        return BBox(self.x0 * k, self.y0 * k, self.x1 * k, self.y1 * k)


@dataclass(frozen=True)
class BBoxTrajectory:
    """One optional box per frame; ``None`` means no foreground that frame."""

    canvas: Canvas
    boxes: tuple[Optional[BBox], ...]

    def __post_init__(self):
        object.__setattr__(self, "boxes", tuple(self.boxes))
        if len(self.boxes) != self.canvas.num_frames:
            raise ValueError(
                f"trajectory has {len(self.boxes)} slots for "
                f"{self.canvas.num_frames} frames"
            )
        for f, box in enumerate(self.boxes):
            if box is None:
                continue
            if box.x1 > self.canvas.width_px or box.y1 > self.canvas.height_px:
                raise ValueError(f"frame {f} box {box} exceeds canvas")

    @property
    def num_frames(self) -> int:
        return self.canvas.num_frames


@dataclass(frozen=True)
class LatentGrid:
    """Latent spatial resolution; cells flatten row-major (y outer, x inner)."""

    lat_w: int
    lat_h: int

    def __post_init__(self):
        if self.lat_w < 1 or self.lat_h < 1:
            raise ValueError("latent grid dims must be positive")

    @property
    def l_latents(self) -> int:
        return self.lat_w * self.lat_h

    def flat_index(self, x: int, y: int) -> int:
        return y * self.lat_w + x

    def cell_centers(self, canvas: Canvas) -> tuple[np.ndarray, np.ndarray]:
        """Per-axis pixel coordinates of cell centers on the given canvas."""
        cx = (np.arange(self.lat_w) + 0.5) * (canvas.width_px / self.lat_w)
        cy = (np.arange(self.lat_h) + 0.5) * (canvas.height_px / self.lat_h)
        return cx, cy


@dataclass(frozen=True, eq=False)
class FrameMaskSet:
    """Per-frame binary foreground masks at latent resolution, shape [F, L]."""

    grid: LatentGrid
    frames: np.ndarray

    def __post_init__(self):
        frames = np.asarray(self.frames, dtype=np.uint8)
        if frames.ndim != 2 or frames.shape[1] != self.grid.l_latents:
            raise ValueError(f"mask frames must be [F, {self.grid.l_latents}]")
        if not np.isin(frames, (0, 1)).all():
            raise ValueError("mask entries must be 0 or 1")
        frames.setflags(write=False)
        object.__setattr__(self, "frames", frames)

    @property
    def num_frames(self) -> int:
        return self.frames.shape[0]

    @property
    def l_latents(self) -> int:
        return self.frames.shape[1]

    def pixel_series(self, i: int) -> np.ndarray:
        """Foreground indicator of latent pixel ``i`` across frames."""
        return self.frames[:, i]


def rasterize(traj: BBoxTrajectory, grid: LatentGrid) -> FrameMaskSet:
    """Rasterize a box trajectory into per-frame binary latent masks.

    A cell is foreground iff its center lies strictly inside the frame's
    box. A frame whose box fires no cell (sub-cell box) gets the single
    cell whose center is nearest the box center, so a present box always
    yields at least one foreground cell. Frames without a box are all
    zero.
    """
    canvas = traj.canvas
    if grid.lat_w > canvas.width_px or grid.lat_h > canvas.height_px:
        raise ValueError("latent grid cannot exceed canvas resolution")
    cx, cy = grid.cell_centers(canvas)
    frames = np.zeros((canvas.num_frames, grid.l_latents), dtype=np.uint8)
    for f, box in enumerate(traj.boxes):
        if box is None:
            continue
        in_x = (box.x0 < cx) & (cx < box.x1)
        in_y = (box.y0 < cy) & (cy < box.y1)
        mask = (in_y[:, None] & in_x[None, :]).ravel()
        if not mask.any():
            bx, by = box.center
            d2 = (cy[:, None] - by) ** 2 + (cx[None, :] - bx) ** 2
            mask = np.zeros(grid.l_latents, dtype=bool)
            mask[int(np.argmin(d2.ravel()))] = True
        frames[f] = mask
    return FrameMaskSet(grid=grid, frames=frames)


def interpolate_trajectory(
    key_boxes: Mapping[int, BBox], canvas: Canvas
) -> BBoxTrajectory:
    """Densify sparse keyframe boxes by per-coordinate linear interpolation.

    Frames before the first key and after the last hold that key's box.
    """
    if not key_boxes:
        raise ValueError("need at least one key box")
    for f in key_boxes:
        if not 0 <= f < canvas.num_frames:
            raise ValueError(f"key frame {f} outside [0, {canvas.num_frames})")
    keys = sorted(key_boxes)
    key_arr = np.array(keys, dtype=float)
    coords = np.array(
        [[key_boxes[f].x0, key_boxes[f].y0, key_boxes[f].x1, key_boxes[f].y1] for f in keys]
    )
    frames = np.arange(canvas.num_frames, dtype=float)
    dense = np.stack(
        [np.interp(frames, key_arr, coords[:, c]) for c in range(4)], axis=1
    )
    boxes = tuple(BBox(*row) for row in dense)
    return BBoxTrajectory(canvas=canvas, boxes=boxes)
