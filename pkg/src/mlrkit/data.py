"""Datasets on disk and in memory: ternary label matrices, partial-label
masking, the ".mlt" binary tensor format, and a synthetic separable
feature-map generator for desk-scale experiments.

Label convention: +1 present, -1 absent, 0 unknown (masked).  Masking is
drawn once per run, cell-wise i.i.d.; it is never re-drawn per epoch.
"""

from __future__ import annotations

import csv
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import FormatError, ShapeError
from .heads import FeatureMap
from .numerics import Rng, Tensor

_MAGIC = b"MLT1"
_DTYPE_CODES = {1: np.dtype("<f4"), 2: np.dtype("<f8")}
_CODE_FOR = {np.dtype("float32"): 1, np.dtype("float64"): 2}


@dataclass(frozen=True)
class LabelMatrix:
    """M x N ternary labels; entries in {+1, -1, 0}."""

    entries: np.ndarray

    def __post_init__(self):
        e = np.asarray(self.entries, dtype=np.int8)
        if e.ndim != 2:
            raise ShapeError(f"label matrix must be 2-D, got shape {e.shape}")
        if not np.isin(e, (-1, 0, 1)).all():
            raise ValueError("label entries must be in {+1, -1, 0}")
        e.flags.writeable = False
        object.__setattr__(self, "entries", e)

    @property
    def num_images(self) -> int:
        return self.entries.shape[0]

    @property
    def num_classes(self) -> int:
        return self.entries.shape[1]

    def is_full(self) -> bool:
        """True when no entry is unknown."""
        return not bool((self.entries == 0).any())


@dataclass(frozen=True)
class MaskSpec:
    """Keep each label cell with probability known_fraction, else mark unknown."""

    known_fraction: float
    seed: int

    def __post_init__(self):
        if not 0.0 < self.known_fraction <= 1.0:
            raise ValueError(f"known_fraction must be in (0, 1], got {self.known_fraction}")


def mask_labels(full: LabelMatrix, spec: MaskSpec) -> LabelMatrix:
    """Mask a fully annotated matrix down to a partial one.

    Each (image, class) cell is kept independently with probability
    ``spec.known_fraction``; dropped cells become 0.  Deterministic under
    ``spec.seed``.  Kept cells are untouched, so signs never flip.
    """
    if not full.is_full():
        raise ValueError("mask_labels requires a fully annotated matrix (no 0 entries)")
    rng = Rng(spec.seed)
    u = rng.uniform(full.num_images * full.num_classes).reshape(full.entries.shape)
    keep = u < spec.known_fraction
    masked = np.where(keep, full.entries, np.int8(0)).astype(np.int8)
    return LabelMatrix(masked)


def write_label_csv(labels: LabelMatrix, class_names: Sequence[str], path) -> None:
    """Plain-text label file: header row of class names, then {1,-1,0} rows."""
    if len(class_names) != labels.num_classes:
        raise ShapeError(
            f"{len(class_names)} class names for {labels.num_classes} classes")
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(class_names)
        for row in labels.entries:
            w.writerow(int(v) for v in row)


def read_label_csv(path) -> tuple[LabelMatrix, list[str]]:
    with open(path, newline="") as f:
        reader = csv.reader(f)
        try:
            class_names = next(reader)
        except StopIteration:
            raise FormatError(f"{path}: empty label file") from None
        rows = []
        for lineno, row in enumerate(reader, start=2):
            if len(row) != len(class_names):
                raise FormatError(
                    f"{path}:{lineno}: expected {len(class_names)} columns, got {len(row)}")
            try:
                rows.append([int(v) for v in row])
            except ValueError as exc:
                raise FormatError(f"{path}:{lineno}: non-integer label: {exc}") from None
    if not rows:
        raise FormatError(f"{path}: no label rows")
    return LabelMatrix(np.array(rows, dtype=np.int8)), list(class_names)


def write_tensor_file(t: Tensor, path, dtype: str = "float64") -> None:
    """Write a tensor in the ".mlt" format.

    Layout: magic "MLT1"; one dtype byte (1 = float32, 2 = float64); one
    rank byte; rank little-endian uint64 dims; row-major little-endian
    payload.  float32 files lose precision on write but widen losslessly
    on read.
    """
    np_dtype = np.dtype(dtype)
    if np_dtype not in _CODE_FOR:
        raise FormatError(f"unsupported dtype {dtype!r} (float32 or float64)")
    rank = len(t.shape)
    if rank > 255:
        raise FormatError(f"rank {rank} exceeds format limit 255")
    with open(path, "wb") as f:
        f.write(_MAGIC)
        f.write(struct.pack("<BB", _CODE_FOR[np_dtype], rank))
        f.write(struct.pack(f"<{rank}Q", *t.shape))
        f.write(np.ascontiguousarray(t.array).astype(np_dtype).tobytes())


def read_tensor_file(path) -> Tensor:
    """Read an ".mlt" file, widening float32 payloads to float64."""
    raw = Path(path).read_bytes()
    if len(raw) < 6 or raw[:4] != _MAGIC:
        raise FormatError(f"{path}: bad magic (expected MLT1)")
    code, rank = raw[4], raw[5]
    if code not in _DTYPE_CODES:
        raise FormatError(f"{path}: unsupported dtype code {code}")
    header_end = 6 + 8 * rank
    if len(raw) < header_end:
        raise FormatError(f"{path}: truncated dims header (rank {rank})")
    shape = struct.unpack(f"<{rank}Q", raw[6:header_end])
    np_dtype = _DTYPE_CODES[code]
    expected = int(np.prod(shape, dtype=np.uint64)) * np_dtype.itemsize
    payload = raw[header_end:]
    if len(payload) != expected:
        raise FormatError(
            f"{path}: payload length {len(payload)} != expected {expected} for shape {shape}")
    values = np.frombuffer(payload, dtype=np_dtype).astype(np.float64)
    return Tensor(shape, values)


@dataclass(frozen=True)
class DatasetBundle:
    """Feature maps plus labels plus class names; immutable after construction.

    ``concepts`` carries the generator's per-class unit direction vectors
    when the bundle is synthetic (useful as stand-in text anchors); it is
    None for bundles loaded from disk.
    """

    features: list[FeatureMap]
    labels: LabelMatrix
    class_names: list[str]
    concepts: np.ndarray | None = field(default=None)

    def __post_init__(self):
        if len(self.features) != self.labels.num_images:
            raise ShapeError(
                f"{len(self.features)} feature maps for {self.labels.num_images} label rows")
        if len(self.class_names) != self.labels.num_classes:
            raise ShapeError("class_names length must equal num_classes")
        if self.features:
            hwd = (self.features[0].h, self.features[0].w, self.features[0].d)
            for i, fm in enumerate(self.features):
                if (fm.h, fm.w, fm.d) != hwd:
                    raise ShapeError(f"feature map {i} has shape {(fm.h, fm.w, fm.d)}, "
                                     f"expected {hwd}")

    @property
    def num_images(self) -> int:
        return self.labels.num_images

    def subset(self, indices: Sequence[int]) -> "DatasetBundle":
        idx = list(indices)
        return DatasetBundle(
            features=[self.features[i] for i in idx],
            labels=LabelMatrix(self.labels.entries[idx]),
            class_names=list(self.class_names),
            concepts=self.concepts,
        )

    def with_labels(self, labels: LabelMatrix) -> "DatasetBundle":
        return DatasetBundle(self.features, labels, list(self.class_names), self.concepts)


def generate_synthetic(num_images: int, num_classes: int, h: int, w: int,
                       dim: int, seed: int, noise: float = 0.05,
                       presence_prob: float = 0.3) -> DatasetBundle:
    """Synthetic separable dataset: one unit concept direction per class.

    Each image samples a class subset; every present class's concept vector
    (plus Gaussian noise of scale ``noise``) is planted at its own spatial
    cell, at most one concept per cell.  Remaining cells hold pure noise.
    At low noise the classes are linearly separable by construction.

    Note: with ``noise=0`` background cells are exactly zero, which cosine
    heads reject; use a positive noise scale for embedding-bank training.
    """
    if num_images < 1 or h < 1 or w < 1 or dim < 1:
        raise ValueError("all dims must be >= 1")
    if num_classes < 2:
        raise ValueError("need at least 2 classes")
    rng = Rng(seed)
    concepts = rng.normal(num_classes * dim).reshape(num_classes, dim)
    concepts /= np.linalg.norm(concepts, axis=1, keepdims=True)

    cells = h * w
    features: list[FeatureMap] = []
    label_rows = np.empty((num_images, num_classes), dtype=np.int8)
    for i in range(num_images):
        present = rng.uniform(num_classes) < presence_prob
        if not present.any():
            present[int(rng.uniform(1)[0] * num_classes)] = True
        idx = np.flatnonzero(present)
        if idx.size > cells:
            idx = idx[rng.permutation(idx.size)[:cells]]
            present = np.zeros(num_classes, dtype=bool)
            present[idx] = True
        fmap = noise * rng.normal(cells * dim).reshape(cells, dim)
        slots = rng.permutation(cells)[:idx.size]
        for slot, cls in zip(slots, idx):
            fmap[slot] = concepts[cls] + noise * rng.normal(dim)
        features.append(FeatureMap(fmap.reshape(h, w, dim)))
        label_rows[i] = np.where(present, 1, -1)

    class_names = [f"class{i:02d}" for i in range(num_classes)]
    return DatasetBundle(features, LabelMatrix(label_rows), class_names, concepts)


def write_bundle(bundle: DatasetBundle, out_dir) -> None:
    """Persist a bundle as per-image ".mlt" files, an index manifest, and a
    label CSV, matching the exporter's on-disk layout."""
    out = Path(out_dir)
    feat_dir = out / "features"
    feat_dir.mkdir(parents=True, exist_ok=True)
    files = []
    for i, fm in enumerate(bundle.features):
        name = f"img{i:06d}.mlt"
        write_tensor_file(Tensor.from_array(fm.array), feat_dir / name)
        files.append(name)
    fm0 = bundle.features[0]
    manifest = {"height": fm0.h, "width": fm0.w, "dim": fm0.d, "files": files}
    (out / "features.json").write_text(json.dumps(manifest, indent=2))
    write_label_csv(bundle.labels, bundle.class_names, out / "labels.csv")


def read_bundle(in_dir, labels_path=None) -> DatasetBundle:
    """Load a bundle written by :func:`write_bundle` or by the exporter.

    ``labels_path`` overrides the default ``<in_dir>/labels.csv`` (e.g. to
    train on a masked copy)."""
    root = Path(in_dir)
    manifest_path = root / "features.json"
    try:
        manifest = json.loads(manifest_path.read_text())
    except FileNotFoundError:
        raise FormatError(f"{manifest_path}: missing features manifest") from None
    features = []
    for name in manifest["files"]:
        t = read_tensor_file(root / "features" / name)
        if len(t.shape) != 3:
            raise FormatError(f"{name}: feature maps must be rank 3, got {t.shape}")
        features.append(FeatureMap(t.array))
    labels, class_names = read_label_csv(labels_path or root / "labels.csv")
    return DatasetBundle(features, labels, class_names)
