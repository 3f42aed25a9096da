import hypothesis
import numpy as np
import pytest

from stmask.geometry import BBox, BBoxTrajectory, Canvas, LatentGrid
from stmask.pipeline import PipelineConfig, PromptSpec

hypothesis.settings.register_profile("default", deadline=None)
hypothesis.settings.load_profile("default")

# Standard pipeline fixture: 16x16 latent grid, 8 frames, centered box
# covering 0.35 of the canvas side, everything seeded with 0.
STD_SEED = 0
STD_CANVAS = Canvas(256, 256, 8)
STD_GRID = LatentGrid(16, 16)
STD_PROMPT_TEXT = "a fox sitting in a forest clearing"
STD_FG_PHRASE = "fox"


def centered_box(canvas: Canvas, fraction: float = 0.35) -> BBox:
    side = round(fraction * min(canvas.width_px, canvas.height_px))
    x0 = (canvas.width_px - side) // 2
    y0 = (canvas.height_px - side) // 2
    return BBox(x0, y0, x0 + side, y0 + side)


@pytest.fixture
def std_trajectory() -> BBoxTrajectory:
    box = centered_box(STD_CANVAS)
    return BBoxTrajectory(STD_CANVAS, tuple(box for _ in range(STD_CANVAS.num_frames)))


@pytest.fixture
def std_prompt() -> PromptSpec:
    return PromptSpec.from_text(STD_PROMPT_TEXT, STD_FG_PHRASE, seed=STD_SEED)


@pytest.fixture
def moving_trajectory() -> BBoxTrajectory:
    # Box sliding right so every mask family has genuinely masked entries.
    canvas = Canvas(128, 128, 8)
    boxes = tuple(BBox(8 + 10 * f, 40, 48 + 10 * f, 80) for f in range(8))
    return BBoxTrajectory(canvas, boxes)


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(1234)
