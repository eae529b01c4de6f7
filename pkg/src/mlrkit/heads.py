"""Scoring heads: feature map -> per-class positive/negative spatial logits.

Two head families:

* ``ProjectorHead`` — a single affine layer mapping each d-dimensional cell
  to 2N logits (vision-only baseline).
* ``EmbeddingBank`` — per-class positive and negative direction vectors
  scored against L2-normalized feature cells by cosine similarity over a
  temperature.  Each side carries a provenance mode; the standard ablations
  keep text-derived anchors on one side and learn the other side freely in
  feature space.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DegenerateInputError, FormatError, ShapeError
from .numerics import Rng

ANCHOR_FROZEN = "anchor-frozen"
ANCHOR_LEARNABLE = "anchor-learnable"
FREE_LEARNABLE = "free-learnable"
_MODES = (ANCHOR_FROZEN, ANCHOR_LEARNABLE, FREE_LEARNABLE)

DEFAULT_TEMPERATURE = 0.02
FREE_INIT_NORM = 0.1  # per-row norm of free-side init; small vs unit anchors


@dataclass(frozen=True)
class FeatureMap:
    """One image's H x W x d spatial features from a frozen encoder."""

    array: np.ndarray

    def __post_init__(self):
        a = np.asarray(self.array, dtype=np.float64)
        if a.ndim != 3:
            raise ShapeError(f"feature map must be rank 3 (H, W, d), got {a.shape}")
        if not np.all(np.isfinite(a)):
            raise DegenerateInputError("feature map contains non-finite values")
        a = np.ascontiguousarray(a)
        a.flags.writeable = False
        object.__setattr__(self, "array", a)

    @property
    def h(self) -> int:
        return self.array.shape[0]

    @property
    def w(self) -> int:
        return self.array.shape[1]

    @property
    def d(self) -> int:
        return self.array.shape[2]


@dataclass(frozen=True)
class SpatialLogits:
    """Positive and negative H x W x N logit planes."""

    positive: np.ndarray
    negative: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.positive, dtype=np.float64)
        n = np.asarray(self.negative, dtype=np.float64)
        if p.ndim != 3 or p.shape != n.shape:
            raise ShapeError(
                f"logit planes must share an (H, W, N) shape, got {p.shape} and {n.shape}")
        if not (np.all(np.isfinite(p)) and np.all(np.isfinite(n))):
            raise DegenerateInputError("spatial logits contain non-finite values")
        object.__setattr__(self, "positive", p)
        object.__setattr__(self, "negative", n)

    @property
    def num_classes(self) -> int:
        return self.positive.shape[2]


class ProjectorHead:
    """Affine per-cell projector: d features -> 2N logits.

    Weight rows are interleaved [class, polarity]: row 2j is class j's
    positive logit, row 2j+1 its negative logit.
    """

    def __init__(self, weight: np.ndarray, bias: np.ndarray | None, num_classes: int):
        weight = np.array(weight, dtype=np.float64)
        if weight.ndim != 2 or weight.shape[0] != 2 * num_classes:
            raise ShapeError(
                f"weight must be (2N, d) with N={num_classes}, got {weight.shape}")
        if bias is None:
            bias = np.zeros(2 * num_classes)
        bias = np.array(bias, dtype=np.float64)
        if bias.shape != (2 * num_classes,):
            raise ShapeError(f"bias must have shape (2N,), got {bias.shape}")
        self.weight = weight
        self.bias = bias
        self.num_classes = num_classes

    @property
    def dim(self) -> int:
        return self.weight.shape[1]

    @classmethod
    def random(cls, num_classes: int, dim: int, init_seed: int,
               use_bias: bool = True) -> "ProjectorHead":
        rng = Rng(init_seed)
        weight = rng.normal(2 * num_classes * dim).reshape(2 * num_classes, dim)
        weight /= np.sqrt(dim)
        bias = np.zeros(2 * num_classes) if use_bias else None
        return cls(weight, bias, num_classes)


def projector_forward(head: ProjectorHead, z: FeatureMap) -> SpatialLogits:
    """Apply the affine projector at every spatial cell; no feature normalization."""
    if z.d != head.dim:
        raise ShapeError(f"feature dim {z.d} != projector dim {head.dim}")
    a = z.array @ head.weight.T + head.bias  # (H, W, 2N)
    return SpatialLogits(positive=a[..., 0::2], negative=a[..., 1::2])


def _normalized_rows(m: np.ndarray, what: str) -> tuple[np.ndarray, np.ndarray]:
    norms = np.linalg.norm(m, axis=-1)
    if np.any(norms == 0.0):
        raise DegenerateInputError(f"zero-norm {what}")
    return m / norms[..., None], norms


class EmbeddingBank:
    """Per-class positive/negative embedding vectors with provenance modes.

    A side in an anchor mode must carry its anchor matrix; an anchor-frozen
    side is excluded from training and stays bit-identical to its anchors.
    """

    def __init__(self, positive: np.ndarray, negative: np.ndarray,
                 positive_mode: str, negative_mode: str,
                 anchors_positive: np.ndarray | None = None,
                 anchors_negative: np.ndarray | None = None,
                 temperature: float = DEFAULT_TEMPERATURE):
        positive = np.array(positive, dtype=np.float64)
        negative = np.array(negative, dtype=np.float64)
        if positive.ndim != 2 or positive.shape != negative.shape:
            raise ShapeError("positive and negative banks must share an (N, d) shape, "
                             f"got {positive.shape} and {negative.shape}")
        for mode, anchors, side in ((positive_mode, anchors_positive, "positive"),
                                    (negative_mode, anchors_negative, "negative")):
            if mode not in _MODES:
                raise ValueError(f"unknown mode {mode!r} for {side} side")
            if mode != FREE_LEARNABLE and anchors is None:
                raise ValueError(f"{mode} {side} side requires an anchor matrix")
            if anchors is not None and np.asarray(anchors).shape != positive.shape:
                raise ShapeError(f"{side} anchors must match bank shape {positive.shape}")
        if temperature <= 0:
            raise ValueError(f"temperature must be positive, got {temperature}")
        self.positive = positive
        self.negative = negative
        self.positive_mode = positive_mode
        self.negative_mode = negative_mode
        self.anchors_positive = None if anchors_positive is None else \
            np.array(anchors_positive, dtype=np.float64)
        self.anchors_negative = None if anchors_negative is None else \
            np.array(anchors_negative, dtype=np.float64)
        self.temperature = float(temperature)

    @property
    def num_classes(self) -> int:
        return self.positive.shape[0]

    @property
    def dim(self) -> int:
        return self.positive.shape[1]


def embedding_forward(bank: EmbeddingBank, z: FeatureMap,
                      temperature: float | None = None) -> SpatialLogits:
    """Cosine similarity of every feature cell with every class vector,
    divided by the temperature.  Both sides are L2-normalized first, so
    logits lie in [-1/tau, +1/tau]."""
    if bank.dim != z.d:
        raise ShapeError(f"feature dim {z.d} != bank dim {bank.dim}")
    tau = bank.temperature if temperature is None else float(temperature)
    if tau <= 0:
        raise ValueError(f"temperature must be positive, got {tau}")
    zn, _ = _normalized_rows(z.array, "feature cell")
    rp, _ = _normalized_rows(bank.positive, "positive embedding row")
    rn, _ = _normalized_rows(bank.negative, "negative embedding row")
    pos = np.einsum("hwd,nd->hwn", zn, rp) / tau
    neg = np.einsum("hwd,nd->hwn", zn, rn) / tau
    return SpatialLogits(positive=pos, negative=neg)


def _free_init(num_classes: int, dim: int, rng: Rng) -> np.ndarray:
    rows = rng.normal(num_classes * dim).reshape(num_classes, dim)
    rows /= np.linalg.norm(rows, axis=1, keepdims=True)
    return FREE_INIT_NORM * rows


def make_positivecoop(anchors_pos: np.ndarray, dim: int, init_seed: int,
                      temperature: float = DEFAULT_TEMPERATURE) -> EmbeddingBank:
    """Anchor-learnable positive side (text guidance), free negative side."""
    anchors_pos = np.asarray(anchors_pos, dtype=np.float64)
    if anchors_pos.ndim != 2 or anchors_pos.shape[1] != dim:
        raise ShapeError(f"anchors must be (N, {dim}), got {anchors_pos.shape}")
    n = anchors_pos.shape[0]
    return EmbeddingBank(
        positive=anchors_pos.copy(),
        negative=_free_init(n, dim, Rng(init_seed)),
        positive_mode=ANCHOR_LEARNABLE,
        negative_mode=FREE_LEARNABLE,
        anchors_positive=anchors_pos,
        temperature=temperature,
    )


def make_negativecoop(anchors_neg: np.ndarray, dim: int, init_seed: int,
                      temperature: float = DEFAULT_TEMPERATURE) -> EmbeddingBank:
    """Mirror of :func:`make_positivecoop`: anchored negative, free positive."""
    anchors_neg = np.asarray(anchors_neg, dtype=np.float64)
    if anchors_neg.ndim != 2 or anchors_neg.shape[1] != dim:
        raise ShapeError(f"anchors must be (N, {dim}), got {anchors_neg.shape}")
    n = anchors_neg.shape[0]
    return EmbeddingBank(
        positive=_free_init(n, dim, Rng(init_seed)),
        negative=anchors_neg.copy(),
        positive_mode=FREE_LEARNABLE,
        negative_mode=ANCHOR_LEARNABLE,
        anchors_negative=anchors_neg,
        temperature=temperature,
    )


def make_free_dual(num_classes: int, dim: int, init_seed: int,
                   temperature: float = DEFAULT_TEMPERATURE) -> EmbeddingBank:
    """Both sides learned freely in feature space (no text guidance at all)."""
    rng = Rng(init_seed)
    return EmbeddingBank(
        positive=_free_init(num_classes, dim, rng),
        negative=_free_init(num_classes, dim, rng),
        positive_mode=FREE_LEARNABLE,
        negative_mode=FREE_LEARNABLE,
        temperature=temperature,
    )


def save_head(head, out_dir) -> None:
    """Checkpoint a head: JSON descriptor plus ".mlt" parameter tensors."""
    from .data import write_tensor_file  # local import to avoid a cycle
    from .numerics import Tensor

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    if isinstance(head, ProjectorHead):
        desc = {"kind": "projector", "num_classes": head.num_classes, "dim": head.dim}
        write_tensor_file(Tensor.from_array(head.weight), out / "weight.mlt")
        write_tensor_file(Tensor.from_array(head.bias), out / "bias.mlt")
    elif isinstance(head, EmbeddingBank):
        desc = {
            "kind": "embedding",
            "num_classes": head.num_classes,
            "dim": head.dim,
            "positive_mode": head.positive_mode,
            "negative_mode": head.negative_mode,
            "temperature": head.temperature,
        }
        write_tensor_file(Tensor.from_array(head.positive), out / "positive.mlt")
        write_tensor_file(Tensor.from_array(head.negative), out / "negative.mlt")
        for name, anchors in (("anchors_positive", head.anchors_positive),
                              ("anchors_negative", head.anchors_negative)):
            if anchors is not None:
                write_tensor_file(Tensor.from_array(anchors), out / f"{name}.mlt")
    else:
        raise TypeError(f"cannot checkpoint {type(head).__name__}")
    (out / "descriptor.json").write_text(json.dumps(desc, indent=2, sort_keys=True))


def load_head(in_dir):
    from .data import read_tensor_file  # local import to avoid a cycle

    root = Path(in_dir)
    try:
        desc = json.loads((root / "descriptor.json").read_text())
    except FileNotFoundError:
        raise FormatError(f"{root}: missing descriptor.json") from None
    kind = desc.get("kind")
    if kind == "projector":
        weight = read_tensor_file(root / "weight.mlt").array
        bias = read_tensor_file(root / "bias.mlt").array
        return ProjectorHead(weight, bias, desc["num_classes"])
    if kind == "embedding":
        def opt(name):
            p = root / f"{name}.mlt"
            return read_tensor_file(p).array if p.exists() else None
        return EmbeddingBank(
            positive=read_tensor_file(root / "positive.mlt").array,
            negative=read_tensor_file(root / "negative.mlt").array,
            positive_mode=desc["positive_mode"],
            negative_mode=desc["negative_mode"],
            anchors_positive=opt("anchors_positive"),
            anchors_negative=opt("anchors_negative"),
            temperature=desc["temperature"],
        )
    raise FormatError(f"{root}: unknown head kind {kind!r}")


def head_forward(head, z: FeatureMap) -> SpatialLogits:
    """Dispatch to the forward pass for either head family."""
    if isinstance(head, ProjectorHead):
        return projector_forward(head, z)
    if isinstance(head, EmbeddingBank):
        return embedding_forward(head, z)
    raise TypeError(f"unknown head type {type(head).__name__}")
