"""File codecs and the experiment configuration.

Binary layouts (little-endian throughout):

* Mask export (one file per family)
    magic   4 bytes  b"PKBM"
    version u16      currently 1
    family  u8       0 = cross, 1 = spatial, 2 = temporal
    count   u32      number of matrices (frames for cross/spatial,
                     latent pixels for temporal)
    rows    u32
    cols    u32
    payload packed bits of the [count, rows, cols] stack flattened
            row-major, 8 entries per byte, LSB first (bit k of byte n
            holds entry 8n+k); the payload length must be exactly
            ceil(count*rows*cols / 8) bytes.

* Latent export
    magic   4 bytes  b"PKBL"
    frames, latents, channels  u32 each
    payload float32 values, row-major [frames, latents, channels].

Text formats: trajectory documents and experiment configs are JSON with
sorted keys and compact separators so identical inputs serialize to
identical bytes; detections are JSON lines with fields
{video_id, frame, x0, y0, x1, y1, score?}.
"""

import dataclasses
import hashlib
import json
import math
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Optional, Sequence

import numpy as np

from .geometry import BBox, BBoxTrajectory, Canvas, LatentGrid, interpolate_trajectory
from .imc import DatasetRecord
from .maskgen import AblationFlags, AttentionMaskBundle
from .metrics import DetectionTrack
from .pipeline import LatentVideo, PipelineConfig, RunReport

__all__ = [
    "FormatError",
    "ValidationError",
    "MASK_MAGIC",
    "MASK_VERSION",
    "FAMILY_CROSS",
    "FAMILY_SPATIAL",
    "FAMILY_TEMPORAL",
    "encode_mask_stack",
    "decode_mask_stack",
    "write_bundle",
    "read_bundle",
    "LATENT_MAGIC",
    "encode_latent",
    "decode_latent",
    "TrajectoryDoc",
    "dumps_trajectory",
    "loads_trajectory",
    "load_trajectory_file",
    "parse_detections",
    "detection_tracks",
    "ExperimentConfig",
    "dumps_run_report",
    "sha256_hex",
    "dumps_manifest",
    "dataset_file_name",
]


class FormatError(ValueError):
    """Malformed binary data: bad magic, version, or truncation."""


class ValidationError(ValueError):
    """Well-formed input that fails semantic validation."""


MASK_MAGIC = b"PKBM"
MASK_VERSION = 1
FAMILY_CROSS = 0
FAMILY_SPATIAL = 1
FAMILY_TEMPORAL = 2
_FAMILIES = (FAMILY_CROSS, FAMILY_SPATIAL, FAMILY_TEMPORAL)

LATENT_MAGIC = b"PKBL"

_MASK_HEADER = struct.Struct("<4sHBIII")
_LATENT_HEADER = struct.Struct("<4sIII")


def encode_mask_stack(stack: np.ndarray, family: int) -> bytes:
    """Serialize a [count, rows, cols] binary stack for one mask family."""
    if family not in _FAMILIES:
        raise ValueError(f"unknown mask family {family}")
    arr = np.asarray(stack)
    if arr.ndim != 3:
        raise ValueError("mask stack must be 3-D")
    if not np.isin(arr, (0, 1)).all():
        raise ValueError("mask entries must be 0 or 1")
    count, rows, cols = arr.shape
    header = _MASK_HEADER.pack(MASK_MAGIC, MASK_VERSION, family, count, rows, cols)
    payload = np.packbits(arr.astype(np.uint8).ravel(), bitorder="little").tobytes()
    return header + payload


def decode_mask_stack(data: bytes) -> tuple[int, np.ndarray]:
    """Inverse of :func:`encode_mask_stack`; returns (family, stack)."""
    if len(data) < _MASK_HEADER.size:
        raise FormatError("mask file shorter than its header")
    magic, version, family, count, rows, cols = _MASK_HEADER.unpack_from(data)
    if magic != MASK_MAGIC:
        raise FormatError(f"bad mask magic {magic!r}")
    if version != MASK_VERSION:
        raise FormatError(f"unsupported mask version {version}")
    if family not in _FAMILIES:
        raise FormatError(f"unknown mask family {family}")
    n_bits = count * rows * cols
    expected = _MASK_HEADER.size + math.ceil(n_bits / 8)
    if len(data) != expected:
        raise FormatError(
            f"mask payload is {len(data) - _MASK_HEADER.size} bytes, "
            f"expected {expected - _MASK_HEADER.size}"
        )
    bits = np.unpackbits(
        np.frombuffer(data, dtype=np.uint8, offset=_MASK_HEADER.size),
        count=n_bits,
        bitorder="little",
    )
    return family, bits.reshape(count, rows, cols)


_FAMILY_SUFFIX = {
    FAMILY_CROSS: "cross",
    FAMILY_SPATIAL: "spatial",
    FAMILY_TEMPORAL: "temporal",
}


def write_bundle(bundle: AttentionMaskBundle, out_dir, stem: str) -> dict[str, Path]:
    """Write the three family files ``<stem>.<family>.pkbm``."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = {}
    for family, arr in (
        (FAMILY_CROSS, bundle.cross),
        (FAMILY_SPATIAL, bundle.spatial),
        (FAMILY_TEMPORAL, bundle.temporal),
    ):
        name = _FAMILY_SUFFIX[family]
        path = out_dir / f"{stem}.{name}.pkbm"
        path.write_bytes(encode_mask_stack(arr, family))
        paths[name] = path
    return paths


def read_bundle(cross_path, spatial_path, temporal_path) -> AttentionMaskBundle:
    """Load the three family files and validate cross-file consistency."""
    arrays = {}
    for family, path in (
        (FAMILY_CROSS, cross_path),
        (FAMILY_SPATIAL, spatial_path),
        (FAMILY_TEMPORAL, temporal_path),
    ):
        got_family, stack = decode_mask_stack(Path(path).read_bytes())
        if got_family != family:
            raise ValidationError(
                f"{path} holds family {got_family}, expected {family}"
            )
        arrays[family] = stack
    f, l, t = arrays[FAMILY_CROSS].shape
    if arrays[FAMILY_SPATIAL].shape != (f, l, l):
        raise ValidationError("spatial mask dims inconsistent with cross mask")
    if arrays[FAMILY_TEMPORAL].shape != (l, f, f):
        raise ValidationError("temporal mask dims inconsistent with cross mask")
    return AttentionMaskBundle(
        cross=arrays[FAMILY_CROSS],
        spatial=arrays[FAMILY_SPATIAL],
        temporal=arrays[FAMILY_TEMPORAL],
    )


def encode_latent(video: LatentVideo) -> bytes:
    f, l, c = video.data.shape
    header = _LATENT_HEADER.pack(LATENT_MAGIC, f, l, c)
    return header + video.data.astype("<f4").tobytes()


def decode_latent(data: bytes) -> LatentVideo:
    if len(data) < _LATENT_HEADER.size:
        raise FormatError("latent file shorter than its header")
    magic, f, l, c = _LATENT_HEADER.unpack_from(data)
    if magic != LATENT_MAGIC:
        raise FormatError(f"bad latent magic {magic!r}")
    expected = _LATENT_HEADER.size + 4 * f * l * c
    if len(data) != expected:
        raise FormatError("latent payload length does not match its dims")
    values = np.frombuffer(data, dtype="<f4", offset=_LATENT_HEADER.size)
    return LatentVideo(values.astype(np.float64).reshape(f, l, c))


MODE_DENSE = "dense"
MODE_KEYFRAMES = "keyframes"


@dataclass(frozen=True)
class TrajectoryDoc:
    """A trajectory file's content: prompt, fg phrase, and dense boxes."""

    prompt: str
    fg_phrase: str
    trajectory: BBoxTrajectory


def _num(v: float):
    # Integer-valued coordinates serialize as ints so files stay stable
    # and diff-friendly.
    return int(v) if float(v).is_integer() else float(v)


def dumps_trajectory(doc: TrajectoryDoc) -> bytes:
    boxes = [
        {"frame": f, "x0": _num(b.x0), "y0": _num(b.y0), "x1": _num(b.x1), "y1": _num(b.y1)}
        for f, b in enumerate(doc.trajectory.boxes)
        if b is not None
    ]
    payload = {
        "prompt": doc.prompt,
        "fg_phrase": doc.fg_phrase,
        "mode": MODE_DENSE,
        "canvas": {
            "w": doc.trajectory.canvas.width_px,
            "h": doc.trajectory.canvas.height_px,
            "frames": doc.trajectory.canvas.num_frames,
        },
        "boxes": boxes,
    }
    return (json.dumps(payload, sort_keys=True, separators=(",", ":")) + "\n").encode()


def loads_trajectory(data: bytes | str) -> TrajectoryDoc:
    try:
        payload = json.loads(data)
    except json.JSONDecodeError as e:
        raise FormatError(f"trajectory file is not valid JSON: {e}") from e
    try:
        canvas = Canvas(
            int(payload["canvas"]["w"]),
            int(payload["canvas"]["h"]),
            int(payload["canvas"]["frames"]),
        )
        mode = payload.get("mode", MODE_DENSE)
        entries = {
            int(b["frame"]): BBox(float(b["x0"]), float(b["y0"]), float(b["x1"]), float(b["y1"]))
            for b in payload["boxes"]
        }
        prompt = str(payload["prompt"])
        fg_phrase = str(payload["fg_phrase"])
    except (KeyError, TypeError, ValueError) as e:
        raise ValidationError(f"bad trajectory document: {e}") from e
    if mode == MODE_KEYFRAMES:
        traj = interpolate_trajectory(entries, canvas)
    elif mode == MODE_DENSE:
        boxes: list[Optional[BBox]] = [None] * canvas.num_frames
        for f, box in entries.items():
            if not 0 <= f < canvas.num_frames:
                raise ValidationError(f"box frame {f} outside canvas")
            boxes[f] = box
        traj = BBoxTrajectory(canvas=canvas, boxes=tuple(boxes))
    else:
        raise ValidationError(f"unknown trajectory mode {mode!r}")
    return TrajectoryDoc(prompt=prompt, fg_phrase=fg_phrase, trajectory=traj)


def load_trajectory_file(path) -> TrajectoryDoc:
    return loads_trajectory(Path(path).read_bytes())


def parse_detections(text: str) -> list[dict]:
    """Parse JSON-lines detections into raw records."""
    records = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.strip()
        if not line:
            continue
        try:
            raw = json.loads(line)
            rec = {
                "video_id": str(raw["video_id"]),
                "frame": int(raw["frame"]),
                "box": BBox(
                    float(raw["x0"]), float(raw["y0"]), float(raw["x1"]), float(raw["y1"])
                ),
                "score": float(raw["score"]) if "score" in raw else None,
            }
        except (json.JSONDecodeError, KeyError, TypeError, ValueError) as e:
            raise ValidationError(f"bad detection record on line {lineno}: {e}") from e
        records.append(rec)
    return records


def detection_tracks(
    records: Sequence[dict], videos: Mapping[str, Canvas]
) -> dict[str, DetectionTrack]:
    """Assemble per-video tracks; every known video gets a track (possibly
    empty). Unknown video ids, out-of-range frames, and duplicate frames are
    validation errors."""
    boxes: dict[str, list] = {vid: [None] * cv.num_frames for vid, cv in videos.items()}
    scores: dict[str, list] = {vid: [None] * cv.num_frames for vid, cv in videos.items()}
    for rec in records:
        vid = rec["video_id"]
        if vid not in boxes:
            raise ValidationError(f"detection references unknown video {vid!r}")
        frame = rec["frame"]
        if not 0 <= frame < len(boxes[vid]):
            raise ValidationError(f"video {vid!r} frame {frame} out of range")
        if boxes[vid][frame] is not None:
            raise ValidationError(f"video {vid!r} frame {frame} detected twice")
        boxes[vid][frame] = rec["box"]
        scores[vid][frame] = rec["score"]
    return {
        vid: DetectionTrack(boxes=tuple(bx), scores=tuple(scores[vid]))
        for vid, bx in boxes.items()
    }


@dataclass(frozen=True)
class ExperimentConfig:
    """One experiment: pipeline knobs, latent grid, ablations, and paths."""

    pipeline: PipelineConfig
    grid: LatentGrid
    ablation: AblationFlags
    dataset_path: str
    output_dir: str

    def to_json(self) -> str:
        payload = {
            "pipeline": dataclasses.asdict(self.pipeline),
            "grid": {"lat_w": self.grid.lat_w, "lat_h": self.grid.lat_h},
            "ablation": dataclasses.asdict(self.ablation),
            "dataset_path": self.dataset_path,
            "output_dir": self.output_dir,
        }
        return json.dumps(payload, sort_keys=True, separators=(",", ":")) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "ExperimentConfig":
        try:
            payload = json.loads(text)
            return cls(
                pipeline=PipelineConfig(**payload["pipeline"]),
                grid=LatentGrid(**payload["grid"]),
                ablation=AblationFlags(**payload["ablation"]),
                dataset_path=str(payload["dataset_path"]),
                output_dir=str(payload["output_dir"]),
            )
        except (KeyError, TypeError, ValueError) as e:
            raise ValidationError(f"bad experiment config: {e}") from e


def dumps_run_report(report: RunReport) -> bytes:
    return (json.dumps(report.to_dict(), sort_keys=True, separators=(",", ":")) + "\n").encode()


def sha256_hex(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def dataset_file_name(prompt_index: int, rep: int) -> str:
    return f"imc_{prompt_index:02d}_{rep}.json"


def dumps_manifest(
    canvas: Canvas, seed: int, jitter_px: int, entries: Sequence[tuple[DatasetRecord, str]]
) -> bytes:
    """Manifest for a generated dataset: checksums plus sampled parameters."""
    files = []
    for rec, digest in entries:
        files.append(
            {
                "file": dataset_file_name(rec.prompt_index, rec.rep),
                "sha256": digest,
                "prompt_index": rec.prompt_index,
                "rep": rec.rep,
                "text": rec.entry.text,
                "subject": rec.entry.subject,
                "motion": rec.entry.motion,
                "direction": rec.entry.direction,
                "aspect": rec.entry.aspect,
                "size_fraction": rec.params.size_fraction,
                "speed": rec.params.speed,
                "flip": rec.params.flip,
                "start_centroid": list(rec.params.start_centroid),
                "jitter_px": rec.params.jitter_px,
            }
        )
    payload = {
        "canvas": {"w": canvas.width_px, "h": canvas.height_px, "frames": canvas.num_frames},
        "seed": seed,
        "jitter_px": jitter_px,
        "count": len(files),
        "files": files,
    }
    return (json.dumps(payload, sort_keys=True, separators=(",", ":")) + "\n").encode()
