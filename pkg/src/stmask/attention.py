"""Additive masked attention, exact reference semantics.

Masking is additive: binary masks convert to 0 / NEG addends on the
pre-softmax scores. NEG is a large negative finite constant rather than
-inf so a fully masked row never produces NaN before the explicit
fallback kicks in; with NEG = -1e9 the exponentials of masked entries
underflow to exactly 0.0 for any realistic score magnitude, so masked
probability mass is 0 in float64 (far below the 1e-12 contract).
"""

from dataclasses import dataclass

import numpy as np

__all__ = [
    "NEG_MASK_VALUE",
    "AttentionResult",
    "to_additive",
    "softmax_rows",
    "masked_attention",
    "masked_attention_detailed",
    "leakage_mass",
]

NEG_MASK_VALUE = -1.0e9


def to_additive(mask, neg: float = NEG_MASK_VALUE) -> np.ndarray:
    """Convert a binary mask to its additive form: 1 -> 0.0, 0 -> neg."""
    arr = np.asarray(mask)
    if not np.isin(arr, (0, 1)).all():
        raise ValueError("mask entries must be 0 or 1")
    if not neg <= -1.0e9:
        raise ValueError(f"additive mask constant must be <= -1e9, got {neg}")
    return np.where(arr == 1, 0.0, float(neg))


def softmax_rows(scores: np.ndarray) -> np.ndarray:
    """Numerically stable row-wise softmax (row-max subtraction)."""
    shifted = scores - scores.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


@dataclass(frozen=True, eq=False)
class AttentionResult:
    """Output of one masked attention call.

    ``weights`` is the row-stochastic attention matrix actually applied;
    rows listed in ``fallback_rows`` were fully masked and were recomputed
    without the mask (a zeroed row is not a probability mixture and would
    corrupt downstream residuals).
    """

    output: np.ndarray
    weights: np.ndarray
    fallback_rows: np.ndarray


def _check_inputs(q, k, v, mask):
    if q.ndim != 2 or k.ndim != 2 or v.ndim != 2 or mask.ndim != 2:
        raise ValueError("q, k, v, mask must all be 2-D")
    if q.shape[1] != k.shape[1]:
        raise ValueError(f"q/k model dims differ: {q.shape[1]} vs {k.shape[1]}")
    if v.shape[0] != k.shape[0]:
        raise ValueError(f"k/v row counts differ: {k.shape[0]} vs {v.shape[0]}")
    if mask.shape != (q.shape[0], k.shape[0]):
        raise ValueError(
            f"mask shape {mask.shape} does not match ({q.shape[0]}, {k.shape[0]})"
        )
    for name, arr in (("q", q), ("k", k), ("v", v)):
        if not np.isfinite(arr).all():
            raise ValueError(f"{name} contains non-finite values")


def masked_attention_detailed(
    q: np.ndarray,
    k: np.ndarray,
    v: np.ndarray,
    mask: np.ndarray,
    scale: float | None = None,
    neg: float = NEG_MASK_VALUE,
) -> AttentionResult:
    """softmax(scale * Q K^T + additive(mask)) V with fallback reporting.

    ``scale`` defaults to 1/sqrt(d_model); pass 1/d_model explicitly to
    get the plain inverse-dimension variant.
    """
    q = np.asarray(q, dtype=np.float64)
    k = np.asarray(k, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    mask = np.asarray(mask)
    _check_inputs(q, k, v, mask)
    if scale is None:
        scale = 1.0 / np.sqrt(q.shape[1])
    if not scale > 0:
        raise ValueError(f"scale must be positive, got {scale}")

    additive = to_additive(mask, neg)
    scores = (q @ k.T) * scale
    weights = softmax_rows(scores + additive)
    empty = ~mask.astype(bool).any(axis=1)
    fallback_rows = np.flatnonzero(empty)
    if fallback_rows.size:
        weights[fallback_rows] = softmax_rows(scores[fallback_rows])
    output = weights @ v
    return AttentionResult(output=output, weights=weights, fallback_rows=fallback_rows)


def masked_attention(q, k, v, mask, scale: float | None = None) -> np.ndarray:
    """Masked attention output only; see :func:`masked_attention_detailed`."""
    return masked_attention_detailed(q, k, v, mask, scale=scale).output


def leakage_mass(weights: np.ndarray, mask, exclude_rows=()) -> float:
    """Max over rows of probability mass landing on masked entries.

    Rows in ``exclude_rows`` (typically fallback rows, which are unmasked
    by construction) are ignored.
    """
    mask = np.asarray(mask)
    if mask.shape != weights.shape:
        raise ValueError("weights and mask shapes differ")
    per_row = (weights * (mask == 0)).sum(axis=1)
    if len(exclude_rows):
        per_row = per_row.copy()
        per_row[np.asarray(exclude_rows, dtype=int)] = 0.0
    return float(per_row.max()) if per_row.size else 0.0
