"""Interactive-motion-control benchmark generator.

Builds the 34-prompt x 3-trajectory synthetic control set: for each
prompt, three box trajectories are sampled from a small parameter space
(start centroid on a 3x3 grid, box size 0.25 or 0.35 of the canvas's
shorter side shaped by the prompt's aspect label, speed 5..20 px/frame
for moving prompts, random direction flip, per-frame +-1 px center
jitter). Sampling is fully determined by one seed; each (prompt, rep)
pair gets an independent child stream so generation order and worker
parallelism cannot change the output.

Conventions the source material leaves open, pinned here:

* jitter displaces the box center per frame per coordinate (size is
  never jittered), uniform integer in [-jitter_px, +jitter_px];
* zig-zag travels horizontally and reverses sign every ceil(frames/3)
  frames, so the default 24-frame clip reverses twice;
* moving prompts may not start in the 3x3 column/row at the canvas edge
  the motion heads toward (6 admissible centroids remain);
* speeds are px/frame at the generation canvas.
"""

import json
import math
from dataclasses import dataclass
from functools import lru_cache
from importlib import resources

import numpy as np

from .geometry import BBox, BBoxTrajectory, Canvas

__all__ = [
    "MOTION_STATIONARY",
    "MOTION_MOVING",
    "DIR_UP_DOWN",
    "DIR_LEFT_RIGHT",
    "DIR_ZIG_ZAG",
    "DIR_NONE",
    "ASPECTS",
    "SIZE_FRACTIONS",
    "PromptEntry",
    "TrajectorySampleParams",
    "DatasetRecord",
    "builtin_prompts",
    "grid_centroids",
    "allowed_start_centroids",
    "sample_params",
    "trajectory_from_params",
    "sample_trajectory",
    "generate_dataset",
    "DEFAULT_CANVAS",
    "DEFAULT_SEED",
]

MOTION_STATIONARY = "stationary"
MOTION_MOVING = "moving"
DIR_UP_DOWN = "up_down"
DIR_LEFT_RIGHT = "left_right"
DIR_ZIG_ZAG = "zig_zag"
DIR_NONE = "none"

ASPECTS = {
    "square_1_1": 1.0,
    "horiz_4_3": 4.0 / 3.0,
    "vert_3_4": 3.0 / 4.0,
}
SIZE_FRACTIONS = (0.25, 0.35)
SPEED_MIN, SPEED_MAX = 5, 20

DEFAULT_CANVAS = Canvas(256, 256, 24)
DEFAULT_SEED = 0


@dataclass(frozen=True)
class PromptEntry:
    """One benchmark prompt with its hand-assigned labels."""

    text: str
    subject: str
    motion: str
    direction: str
    aspect: str

    def __post_init__(self):
        if self.motion not in (MOTION_STATIONARY, MOTION_MOVING):
            raise ValueError(f"bad motion {self.motion!r}")
        if self.direction not in (DIR_UP_DOWN, DIR_LEFT_RIGHT, DIR_ZIG_ZAG, DIR_NONE):
            raise ValueError(f"bad direction {self.direction!r}")
        if self.aspect not in ASPECTS:
            raise ValueError(f"bad aspect {self.aspect!r}")
        if (self.direction == DIR_NONE) != (self.motion == MOTION_STATIONARY):
            raise ValueError("direction is none iff motion is stationary")


@dataclass(frozen=True)
class TrajectorySampleParams:
    """Sampled randomness for one trajectory."""

    start_centroid: tuple[float, float]
    size_fraction: float
    speed: int
    flip: bool
    jitter_px: int = 1

    def __post_init__(self):
        if self.size_fraction not in SIZE_FRACTIONS:
            raise ValueError(f"size fraction must be one of {SIZE_FRACTIONS}")
        if not SPEED_MIN <= self.speed <= SPEED_MAX:
            raise ValueError(f"speed must lie in [{SPEED_MIN}, {SPEED_MAX}]")
        if self.jitter_px < 0:
            raise ValueError("jitter must be non-negative")


@lru_cache(maxsize=1)
def builtin_prompts() -> tuple[PromptEntry, ...]:
    """The 34 shipped prompts, in canonical order."""
    raw = resources.files("stmask").joinpath("data/imc_prompts.json").read_text("utf-8")
    entries = tuple(PromptEntry(**p) for p in json.loads(raw)["prompts"])
    if len(entries) != 34:
        raise RuntimeError(f"prompt data file has {len(entries)} entries, expected 34")
    return entries


def grid_centroids(canvas: Canvas) -> list[tuple[float, float]]:
    """The 9 cell centroids of the 3x3 canvas grid, row-major."""
    return [
        ((i + 0.5) * canvas.width_px / 3.0, (j + 0.5) * canvas.height_px / 3.0)
        for j in range(3)
        for i in range(3)
    ]


def _motion_sign(flip: bool) -> int:
    # Base direction is +x (right) / +y (down); flip negates it.
    return -1 if flip else 1


def allowed_start_centroids(
    canvas: Canvas, direction: str, flip: bool
) -> list[tuple[float, float]]:
    """Start centroids for a trajectory; moving ones exclude the 3 centroids
    at the canvas edge the motion heads toward."""
    cents = grid_centroids(canvas)
    if direction == DIR_NONE:
        return cents
    sign = _motion_sign(flip)
    if direction in (DIR_LEFT_RIGHT, DIR_ZIG_ZAG):
        drop = 2 if sign > 0 else 0
        return [c for idx, c in enumerate(cents) if idx % 3 != drop]
    drop = 2 if sign > 0 else 0
    return [c for idx, c in enumerate(cents) if idx // 3 != drop]


def _box_dims(canvas: Canvas, size_fraction: float, aspect: str) -> tuple[int, int]:
    shorter = min(canvas.width_px, canvas.height_px)
    s = size_fraction * shorter
    ratio = ASPECTS[aspect]
    w = _half_up(s * math.sqrt(ratio))
    h = _half_up(s / math.sqrt(ratio))
    if w < 1 or h < 1 or w > canvas.width_px or h > canvas.height_px:
        raise ValueError(
            f"canvas {canvas.width_px}x{canvas.height_px} too small for "
            f"size fraction {size_fraction} at aspect {aspect}"
        )
    return w, h


def _half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def sample_params(
    entry: PromptEntry, canvas: Canvas, rng: np.random.Generator, jitter_px: int = 1
) -> TrajectorySampleParams:
    """Draw one trajectory's parameters (fixed draw order for determinism)."""
    size_fraction = SIZE_FRACTIONS[int(rng.integers(0, len(SIZE_FRACTIONS)))]
    speed = int(rng.integers(SPEED_MIN, SPEED_MAX + 1))
    flip = bool(rng.integers(0, 2))
    allowed = allowed_start_centroids(canvas, entry.direction, flip)
    start = allowed[int(rng.integers(0, len(allowed)))]
    return TrajectorySampleParams(
        start_centroid=start,
        size_fraction=size_fraction,
        speed=speed,
        flip=flip,
        jitter_px=jitter_px,
    )


def zigzag_period(num_frames: int) -> int:
    return math.ceil(num_frames / 3)


def _center_path(
    entry: PromptEntry, canvas: Canvas, params: TrajectorySampleParams
) -> np.ndarray:
    """Ideal (unjittered, unclamped) center per frame, shape [F, 2]."""
    frames = canvas.num_frames
    cx, cy = params.start_centroid
    path = np.zeros((frames, 2))
    path[0] = (cx, cy)
    if entry.motion == MOTION_STATIONARY:
        path[:] = (cx, cy)
        return path
    sign = _motion_sign(params.flip)
    period = zigzag_period(frames)
    for f in range(1, frames):
        if entry.direction == DIR_UP_DOWN:
            v = (0, sign * params.speed)
        elif entry.direction == DIR_LEFT_RIGHT:
            v = (sign * params.speed, 0)
        else:  # zig-zag: horizontal travel, sign reverses each period
            seg_sign = sign * (-1) ** ((f - 1) // period)
            v = (seg_sign * params.speed, 0)
        path[f] = path[f - 1] + v
    return path


def trajectory_from_params(
    entry: PromptEntry,
    canvas: Canvas,
    params: TrajectorySampleParams,
    jitter: np.ndarray | None = None,
) -> BBoxTrajectory:
    """Deterministic kinematics given sampled parameters.

    ``jitter`` is an integer [F, 2] array of per-frame center offsets
    (zeros when omitted). Boxes are clamped inside the canvas by shifting,
    never by cropping, so width and height are preserved.
    """
    if canvas.num_frames < 8:
        raise ValueError("benchmark trajectories need at least 8 frames")
    w, h = _box_dims(canvas, params.size_fraction, entry.aspect)
    path = _center_path(entry, canvas, params)
    if jitter is None:
        jitter = np.zeros((canvas.num_frames, 2), dtype=int)
    jitter = np.asarray(jitter)
    if jitter.shape != (canvas.num_frames, 2):
        raise ValueError("jitter must be [num_frames, 2]")
    boxes = []
    for f in range(canvas.num_frames):
        cx = path[f, 0] + jitter[f, 0]
        cy = path[f, 1] + jitter[f, 1]
        x0 = _half_up(cx - w / 2.0)
        y0 = _half_up(cy - h / 2.0)
        x0 = min(max(x0, 0), canvas.width_px - w)
        y0 = min(max(y0, 0), canvas.height_px - h)
        boxes.append(BBox(float(x0), float(y0), float(x0 + w), float(y0 + h)))
    return BBoxTrajectory(canvas=canvas, boxes=tuple(boxes))


def sample_trajectory(
    entry: PromptEntry, canvas: Canvas, rng: np.random.Generator, jitter_px: int = 1
) -> BBoxTrajectory:
    """Sample one full trajectory for a prompt."""
    params = sample_params(entry, canvas, rng, jitter_px=jitter_px)
    jitter = rng.integers(-jitter_px, jitter_px + 1, size=(canvas.num_frames, 2))
    return trajectory_from_params(entry, canvas, params, jitter)


@dataclass(frozen=True)
class DatasetRecord:
    prompt_index: int
    rep: int
    entry: PromptEntry
    params: TrajectorySampleParams
    trajectory: BBoxTrajectory


REPS_PER_PROMPT = 3


def _record_rng(seed: int, prompt_index: int, rep: int) -> np.random.Generator:
    return np.random.default_rng(
        np.random.SeedSequence(int(seed), spawn_key=(prompt_index, rep))
    )


def generate_record(
    seed: int, prompt_index: int, rep: int, canvas: Canvas, jitter_px: int = 1
) -> DatasetRecord:
    """One dataset item; independent of all other items given the seed."""
    entry = builtin_prompts()[prompt_index]
    rng = _record_rng(seed, prompt_index, rep)
    params = sample_params(entry, canvas, rng, jitter_px=jitter_px)
    jitter = rng.integers(-jitter_px, jitter_px + 1, size=(canvas.num_frames, 2))
    traj = trajectory_from_params(entry, canvas, params, jitter)
    return DatasetRecord(prompt_index, rep, entry, params, traj)


def generate_dataset(
    canvas: Canvas = DEFAULT_CANVAS, seed: int = DEFAULT_SEED, jitter_px: int = 1
) -> list[DatasetRecord]:
    """All 34 x 3 = 102 (prompt, trajectory) pairs, deterministic in seed."""
    return [
        generate_record(seed, i, rep, canvas, jitter_px)
        for i in range(len(builtin_prompts()))
        for rep in range(REPS_PER_PROMPT)
    ]
