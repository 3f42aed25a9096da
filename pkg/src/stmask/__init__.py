"""Bounding-box trajectories to block-sparse spatio-temporal attention masks.

Submodules: geometry (boxes, rasterization), maskgen (mask families),
attention (additive masked attention), pipeline (surrogate denoising
loop), imc (benchmark generator), metrics (control metrics), formats
(file codecs), cli (command-line driver).
"""

from .attention import (
    NEG_MASK_VALUE,
    masked_attention,
    masked_attention_detailed,
    to_additive,
)
from .geometry import (
    BBox,
    BBoxTrajectory,
    Canvas,
    FrameMaskSet,
    LatentGrid,
    interpolate_trajectory,
    rasterize,
)
from .maskgen import (
    AblationFlags,
    AttentionMaskBundle,
    TokenLabels,
    build_bundle,
    build_cross_mask,
    build_spatial_mask,
    build_temporal_mask,
    token_labels_from_prompt,
)
from .metrics import EvalRecord, build_suite_report, iou
from .pipeline import LatentVideo, PipelineConfig, PromptSpec, RunReport, run, schedule

__version__ = "0.1.0"
