"""Spatio-temporal control metrics over ground-truth boxes and detections.

Definitions, with the conventions this toolkit pins down:

* a video's evaluable frames are those where the ground truth has a box;
* detected_frame_fraction = detected evaluable frames / evaluable frames;
* Coverage = fraction of videos with detected_frame_fraction strictly
  above 0.5 (a video with exactly half its frames detected is excluded);
* mIoU averages per-frame IoU per video (an undetected frame counts as
  IoU 0), then over videos, restricted to videos passing the strict 50%
  filter; with no passing video it is undefined (None) while Coverage is
  still reported;
* AP50 is the per-video fraction of evaluable frames with IoU >= 0.5,
  averaged over all videos with no filter;
* Centroid Distance averages, over detected frames only, the Euclidean
  distance between box centers divided by the canvas diagonal (so it
  lives in [0, 1]), then over videos that have at least one detection.
"""

import math
from dataclasses import dataclass
from typing import Mapping, Optional, Sequence

from .geometry import BBox, BBoxTrajectory

__all__ = [
    "DetectionTrack",
    "EvalRecord",
    "MethodSummary",
    "SuiteReport",
    "iou",
    "coverage",
    "video_miou",
    "ap50",
    "centroid_distance",
    "build_suite_report",
]

COVERAGE_THRESHOLD = 0.5
AP_IOU_THRESHOLD = 0.5


def iou(a: BBox, b: BBox) -> float:
    """Intersection over union of two half-open boxes (exact for integer
    coordinates)."""
    iw = min(a.x1, b.x1) - max(a.x0, b.x0)
    ih = min(a.y1, b.y1) - max(a.y0, b.y0)
    if iw <= 0 or ih <= 0:
        return 0.0
    inter = iw * ih
    union = a.area + b.area - inter
    return inter / union


@dataclass(frozen=True, eq=False)
class DetectionTrack:
    """Per-frame optional detection, plus optional per-frame confidence."""

    boxes: tuple[Optional[BBox], ...]
    scores: Optional[tuple[Optional[float], ...]] = None

    def __post_init__(self):
        object.__setattr__(self, "boxes", tuple(self.boxes))
        if self.scores is not None:
            scores = tuple(self.scores)
            if len(scores) != len(self.boxes):
                raise ValueError("scores and boxes lengths differ")
            object.__setattr__(self, "scores", scores)

    def __len__(self) -> int:
        return len(self.boxes)


@dataclass(frozen=True, eq=False)
class EvalRecord:
    """Per-video pairing of ground truth and detections with its metrics."""

    video_id: str
    gt: BBoxTrajectory
    det: DetectionTrack
    detected_frame_fraction: float
    mean_iou: Optional[float]  # None unless detected_frame_fraction > 0.5
    ap50: float
    centroid_distance: Optional[float]  # None when nothing was detected

    @classmethod
    def evaluate(cls, video_id: str, gt: BBoxTrajectory, det: DetectionTrack) -> "EvalRecord":
        if len(det) != gt.num_frames:
            raise ValueError(
                f"detection track has {len(det)} frames, ground truth {gt.num_frames}"
            )
        eval_frames = [f for f, b in enumerate(gt.boxes) if b is not None]
        if not eval_frames:
            raise ValueError(f"video {video_id!r} has no ground-truth boxes")

        ious = []
        distances = []
        detected = 0
        diag = math.hypot(gt.canvas.width_px, gt.canvas.height_px)
        for f in eval_frames:
            gt_box = gt.boxes[f]
            det_box = det.boxes[f]
            if det_box is None:
                ious.append(0.0)
                continue
            detected += 1
            ious.append(iou(gt_box, det_box))
            (gx, gy), (dx, dy) = gt_box.center, det_box.center
            distances.append(math.hypot(gx - dx, gy - dy) / diag)

        fraction = detected / len(eval_frames)
        mean_iou = sum(ious) / len(ious) if fraction > COVERAGE_THRESHOLD else None
        hit_rate = sum(1 for v in ious if v >= AP_IOU_THRESHOLD) / len(ious)
        cd = sum(distances) / len(distances) if distances else None
        return cls(
            video_id=video_id,
            gt=gt,
            det=det,
            detected_frame_fraction=fraction,
            mean_iou=mean_iou,
            ap50=hit_rate,
            centroid_distance=cd,
        )


def _require_records(records: Sequence[EvalRecord]):
    if not records:
        raise ValueError("need at least one evaluation record")


def coverage(records: Sequence[EvalRecord]) -> float:
    """Fraction of videos with strictly more than half their frames detected."""
    _require_records(records)
    passing = sum(1 for r in records if r.detected_frame_fraction > COVERAGE_THRESHOLD)
    return passing / len(records)


def video_miou(records: Sequence[EvalRecord]) -> Optional[float]:
    """Mean of per-video mean IoU over filter-passing videos; None if none pass."""
    _require_records(records)
    vals = [r.mean_iou for r in records if r.mean_iou is not None]
    return sum(vals) / len(vals) if vals else None


def ap50(records: Sequence[EvalRecord]) -> float:
    """Mean per-video IoU>=0.5 hit rate over all videos (no filter)."""
    _require_records(records)
    return sum(r.ap50 for r in records) / len(records)


def centroid_distance(records: Sequence[EvalRecord]) -> Optional[float]:
    """Mean per-video normalized center distance; None with zero detections."""
    _require_records(records)
    vals = [r.centroid_distance for r in records if r.centroid_distance is not None]
    return sum(vals) / len(vals) if vals else None


@dataclass(frozen=True)
class MethodSummary:
    miou: Optional[float]
    ap50: float
    coverage: float
    centroid_distance: Optional[float]
    n_videos: int
    n_filtered_in: int

    @property
    def n_filtered_out(self) -> int:
        return self.n_videos - self.n_filtered_in

    def to_dict(self) -> dict:
        return {
            "miou": self.miou,
            "ap50": self.ap50,
            "coverage": self.coverage,
            "centroid_distance": self.centroid_distance,
            "videos": self.n_videos,
            "filtered_in": self.n_filtered_in,
            "filtered_out": self.n_filtered_out,
        }


@dataclass(frozen=True)
class SuiteReport:
    """Per-method metric summary (one row per method)."""

    methods: dict[str, MethodSummary]

    def to_dict(self) -> dict:
        return {"methods": {name: m.to_dict() for name, m in self.methods.items()}}

    def render_table(self) -> str:
        header = f"{'method':<16} {'videos':>6} {'mIoU':>8} {'AP50':>8} {'Cov':>8} {'CD':>8} {'filt':>9}"
        lines = [header, "-" * len(header)]
        for name, m in self.methods.items():
            lines.append(
                f"{name:<16} {m.n_videos:>6d} {_fmt(m.miou):>8} {_fmt(m.ap50):>8} "
                f"{_fmt(m.coverage):>8} {_fmt(m.centroid_distance):>8} "
                f"{m.n_filtered_in:>4d}/{m.n_videos:<4d}"
            )
        return "\n".join(lines) + "\n"


def _fmt(v: Optional[float]) -> str:
    return "-" if v is None else f"{v:.4f}"


def summarize(records: Sequence[EvalRecord]) -> MethodSummary:
    _require_records(records)
    return MethodSummary(
        miou=video_miou(records),
        ap50=ap50(records),
        coverage=coverage(records),
        centroid_distance=centroid_distance(records),
        n_videos=len(records),
        n_filtered_in=sum(
            1 for r in records if r.detected_frame_fraction > COVERAGE_THRESHOLD
        ),
    )


def build_suite_report(groups: Mapping[str, Sequence[EvalRecord]]) -> SuiteReport:
    """Summarize each method's records into one report."""
    if not groups:
        raise ValueError("need at least one method group")
    return SuiteReport(methods={name: summarize(recs) for name, recs in groups.items()})
