"""Class-specific softmax aggregation of spatial logits into per-class
prediction pairs, plus similarity-map export for visual inspection.

Each class/polarity logit plane is turned into a spatial softmax attention
map, and the aggregated prediction is the attention-weighted sum of the
plane — a softmax-weighted expectation, so it always lies between the
plane's min and max and sits at or above the uniform mean.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ShapeError
from .heads import SpatialLogits
from .numerics import Tensor

# keep pair probabilities strictly inside (0, 1) so log terms stay finite
_PROB_FLOOR = 1e-15


@dataclass(frozen=True)
class AttentionMaps:
    """Per-class, per-polarity spatial weights; each H x W slice sums to 1."""

    positive: np.ndarray
    negative: np.ndarray


@dataclass(frozen=True)
class PredictionPair:
    """Aggregated positive and negative logits, one per class."""

    positive: np.ndarray
    negative: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.positive, dtype=np.float64)
        n = np.asarray(self.negative, dtype=np.float64)
        if p.shape != n.shape or p.ndim != 1:
            raise ShapeError(f"prediction pair must be two N-vectors, "
                             f"got {p.shape} and {n.shape}")
        object.__setattr__(self, "positive", p)
        object.__setattr__(self, "negative", n)


def _plane_softmax(a: np.ndarray) -> np.ndarray:
    # softmax over the two spatial axes, per class; max subtraction for stability
    m = a.max(axis=(0, 1), keepdims=True)
    e = np.exp(a - m)
    return e / e.sum(axis=(0, 1), keepdims=True)


def attention_maps(a: SpatialLogits) -> AttentionMaps:
    """Spatial softmax over all H*W cells, per class and polarity."""
    return AttentionMaps(positive=_plane_softmax(a.positive),
                         negative=_plane_softmax(a.negative))


def aggregate(a: SpatialLogits, maps: AttentionMaps) -> PredictionPair:
    """Attention-weighted sum of each logit plane."""
    if maps.positive.shape != a.positive.shape or maps.negative.shape != a.negative.shape:
        raise ShapeError("attention maps and logits must share shapes")
    return PredictionPair(
        positive=np.einsum("hwn,hwn->n", maps.positive, a.positive),
        negative=np.einsum("hwn,hwn->n", maps.negative, a.negative),
    )


def aggregate_grad(a_plane: np.ndarray, attn_plane: np.ndarray,
                   pred: np.ndarray) -> np.ndarray:
    """d(aggregate)/d(logit) for one polarity.

    With s = softmax(a) and p = sum(s * a), the derivative w.r.t. a[h,w]
    is s[h,w] * (1 + a[h,w] - p).  Shapes: (H, W, N) in, (H, W, N) out.
    """
    return attn_plane * (1.0 + a_plane - pred[None, None, :])


def pair_probability(p: PredictionPair) -> np.ndarray:
    """Two-way softmax of the (positive, negative) logit pair.

    Equals 1 / (1 + exp(p_neg - p_pos)); invariant to adding a constant to
    both logits.  The result is clamped to stay strictly inside (0, 1) so
    downstream log-losses remain finite even for saturated pairs.
    """
    x = p.positive - p.negative
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    e = np.exp(x[~pos])
    out[~pos] = e / (1.0 + e)
    return np.clip(out, _PROB_FLOOR, 1.0 - _PROB_FLOOR)


def pair_probability_grad(y_hat: np.ndarray) -> np.ndarray:
    """d(y_hat)/d(p_pos); the negative-logit derivative is its negation."""
    return y_hat * (1.0 - y_hat)


def export_similarity_map(a: SpatialLogits, class_index: int, polarity: str,
                          path) -> None:
    """Write one class's H x W logit slice as ".mlt" plus a PGM rendering.

    The PGM (ASCII "P2") is min-max normalized to [0, 255]; a constant
    plane renders as uniform mid-gray.  ``path`` is a base name; ".mlt"
    and ".pgm" suffixes are appended.
    """
    if polarity not in ("positive", "negative"):
        raise ValueError(f"polarity must be 'positive' or 'negative', got {polarity!r}")
    plane3 = a.positive if polarity == "positive" else a.negative
    if not 0 <= class_index < plane3.shape[2]:
        raise IndexError(f"class index {class_index} out of range for N={plane3.shape[2]}")
    plane = np.ascontiguousarray(plane3[:, :, class_index])

    base = Path(path)
    from .data import write_tensor_file  # local import to avoid a cycle
    try:
        write_tensor_file(Tensor.from_array(plane), base.with_suffix(".mlt"))
        lo, hi = float(plane.min()), float(plane.max())
        if hi > lo:
            pixels = np.rint((plane - lo) / (hi - lo) * 255).astype(int)
        else:
            pixels = np.full(plane.shape, 128, dtype=int)
        h, w = plane.shape
        lines = [f"P2", f"{w} {h}", "255"]
        lines += [" ".join(str(v) for v in row) for row in pixels]
        base.with_suffix(".pgm").write_text("\n".join(lines) + "\n")
    except OSError as exc:
        raise OSError(f"failed writing similarity map to {base}: {exc}") from exc
