"""Block-sparse attention-mask families built from foreground labelings.

All three families share one kernel: an entry is 1 iff the two foreground
indicators agree (XNOR). Cross masks pair latent pixels with text tokens,
spatial masks pair pixels within a frame, temporal masks pair frames for a
fixed pixel. Disabled families are represented as all-ones so downstream
attention code takes a uniform mask argument.
"""

import re
from dataclasses import dataclass, field

import numpy as np

from .geometry import FrameMaskSet

__all__ = [
    "TokenLabels",
    "AblationFlags",
    "AttentionMaskBundle",
    "xnor_mask",
    "build_cross_mask",
    "build_spatial_mask",
    "build_temporal_mask",
    "build_bundle",
    "tokenize",
    "token_labels_from_prompt",
]

_TOKEN_RE = re.compile(r"[a-z0-9']+")


def _as_binary(v, name: str) -> np.ndarray:
    arr = np.asarray(v)
    if arr.ndim != 1 or arr.size < 1:
        raise ValueError(f"{name} must be a non-empty 1-D vector")
    if not np.isin(arr, (0, 1)).all():
        raise ValueError(f"{name} entries must be 0 or 1")
    return arr.astype(np.uint8)


@dataclass(frozen=True, eq=False)
class TokenLabels:
    """Per-token foreground indicator: 1 = token belongs to the fg phrase."""

    labels: np.ndarray

    def __post_init__(self):
        labels = _as_binary(self.labels, "token labels")
        labels.setflags(write=False)
        object.__setattr__(self, "labels", labels)

    @property
    def l_text(self) -> int:
        return self.labels.size

    def complement(self) -> "TokenLabels":
        return TokenLabels(1 - self.labels)


@dataclass(frozen=True)
class AblationFlags:
    """Per-family switches; a disabled family becomes an all-ones mask."""

    cross_on: bool = True
    spatial_on: bool = True
    temporal_on: bool = True


def xnor_mask(a, b) -> np.ndarray:
    """Binary matrix with entry[i, j] = 1 iff a[i] == b[j]."""
    a = _as_binary(a, "left labels")
    b = _as_binary(b, "right labels")
    return (a[:, None] == b[None, :]).astype(np.uint8)


def build_cross_mask(frame_fg, tokens: TokenLabels) -> np.ndarray:
    """Pixel-token mask for one frame, shape [l_latents, l_text]."""
    return xnor_mask(frame_fg, tokens.labels)


def build_spatial_mask(frame_fg) -> np.ndarray:
    """Pixel-pixel mask for one frame: symmetric, unit diagonal."""
    return xnor_mask(frame_fg, frame_fg)


def build_temporal_mask(pixel_fg) -> np.ndarray:
    """Frame-frame mask for one pixel: symmetric, unit diagonal."""
    return xnor_mask(pixel_fg, pixel_fg)


@dataclass(frozen=True, eq=False)
class AttentionMaskBundle:
    """The three mask families for a whole clip.

    Shapes: cross [F, L, T], spatial [F, L, L], temporal [L, F, F].
    ``fully_masked_cross_rows`` counts (frame, pixel) cross rows with no
    unmasked token; such rows only occur when every token carries one
    label and the pixel carries the other, and they engage the attention
    fallback downstream.
    """

    cross: np.ndarray
    spatial: np.ndarray
    temporal: np.ndarray
    ablation: AblationFlags = field(default_factory=AblationFlags)
    fully_masked_cross_rows: int = 0

    def __post_init__(self):
        for name in ("cross", "spatial", "temporal"):
            arr = np.asarray(getattr(self, name), dtype=np.uint8)
            if arr.ndim != 3:
                raise ValueError(f"{name} masks must be a 3-D stack")
            if not np.isin(arr, (0, 1)).all():
                raise ValueError(f"{name} mask entries must be 0 or 1")
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        f, l, t = self.cross.shape
        if self.spatial.shape != (f, l, l) or self.temporal.shape != (l, f, f):
            raise ValueError(
                f"inconsistent bundle shapes: cross {self.cross.shape}, "
                f"spatial {self.spatial.shape}, temporal {self.temporal.shape}"
            )

    @property
    def num_frames(self) -> int:
        return self.cross.shape[0]

    @property
    def l_latents(self) -> int:
        return self.cross.shape[1]

    @property
    def l_text(self) -> int:
        return self.cross.shape[2]

    def all_ones(self) -> "AttentionMaskBundle":
        """Same-shaped bundle with masking disabled everywhere."""
        f, l, t = self.cross.shape
        return AttentionMaskBundle(
            cross=np.ones((f, l, t), np.uint8),
            spatial=np.ones((f, l, l), np.uint8),
            temporal=np.ones((l, f, f), np.uint8),
            ablation=AblationFlags(False, False, False),
        )


def build_bundle(
    masks: FrameMaskSet,
    tokens: TokenLabels,
    ablation: AblationFlags | None = None,
) -> AttentionMaskBundle:
    """Assemble all three mask families from per-frame foreground masks.

    Deterministic; disabled families come out all-ones. The returned
    bundle reports how many cross rows are fully masked (see
    :class:`AttentionMaskBundle`).
    """
    ablation = ablation if ablation is not None else AblationFlags()
    frames = masks.frames
    n_frames, l_latents = frames.shape
    l_text = tokens.l_text
    if n_frames == 0 or l_latents == 0:
        raise ValueError("mask set must be non-empty")

    if ablation.cross_on:
        cross = (frames[:, :, None] == tokens.labels[None, None, :]).astype(np.uint8)
    else:
        cross = np.ones((n_frames, l_latents, l_text), np.uint8)
    if ablation.spatial_on:
        spatial = (frames[:, :, None] == frames[:, None, :]).astype(np.uint8)
    else:
        spatial = np.ones((n_frames, l_latents, l_latents), np.uint8)
    if ablation.temporal_on:
        pix = frames.T
        temporal = (pix[:, :, None] == pix[:, None, :]).astype(np.uint8)
    else:
        temporal = np.ones((l_latents, n_frames, n_frames), np.uint8)

    fully_masked = int(np.count_nonzero(~cross.any(axis=2))) if ablation.cross_on else 0
    return AttentionMaskBundle(
        cross=cross,
        spatial=spatial,
        temporal=temporal,
        ablation=ablation,
        fully_masked_cross_rows=fully_masked,
    )


def tokenize(text: str) -> tuple[str, ...]:
    """Lowercased word tokens; punctuation is dropped."""
    return tuple(_TOKEN_RE.findall(text.lower()))


def token_labels_from_prompt(prompt: str, fg_phrase: str) -> TokenLabels:
    """Label prompt tokens: 1 on every occurrence of the fg phrase.

    The foreground phrase is matched as a token subsequence after the same
    normalization as the prompt. Everything else, including articles and
    any padding-like tokens, is background. Raises ``ValueError`` when the
    phrase does not occur, since a labeling with no foreground token would
    silently disable cross-attention control.
    """
    words = tokenize(prompt)
    phrase = tokenize(fg_phrase)
    if not words:
        raise ValueError("prompt has no tokens")
    if not phrase:
        raise ValueError("fg phrase has no tokens")
    labels = np.zeros(len(words), dtype=np.uint8)
    n = len(phrase)
    found = False
    for i in range(len(words) - n + 1):
        if words[i : i + n] == phrase:
            labels[i : i + n] = 1
            found = True
    if not found:
        raise ValueError(f"fg phrase {fg_phrase!r} not found in prompt {prompt!r}")
    return TokenLabels(labels)
