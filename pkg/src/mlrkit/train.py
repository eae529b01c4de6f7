"""SGD training loop: per-parameter-group learning rates, per-epoch cosine
annealing, seeded shuffling, and analytic backpropagation through the
aggregation chain for both head families.

Learning-rate routing mirrors the three distinct rates of the protocol:
projector heads use ``lr_projector``; embedding banks route anchor-learnable
sides to ``lr_prompt_anchor`` and free sides to ``lr_free_embedding``.
Anchor-frozen sides never join a parameter group.

Per-image gradients are always reduced in image order, so results are
bit-identical for any worker count.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .aggregation import (PredictionPair, aggregate, aggregate_grad,
                          attention_maps, pair_probability,
                          pair_probability_grad)
from .data import DatasetBundle
from .errors import NumericalError, ShapeError
from .heads import (ANCHOR_FROZEN, ANCHOR_LEARNABLE, FREE_LEARNABLE,
                    EmbeddingBank, FeatureMap, ProjectorHead, head_forward)
from .loss import LossConfig, asl_grads, asl_terms
from .metrics import mean_average_precision
from .numerics import Rng


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 50
    batch_size: int = 32
    lr_prompt_anchor: float = 0.002
    lr_free_embedding: float = 1.0
    lr_projector: float = 0.01
    momentum: float = 0.9
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be >= 1")
        if min(self.lr_prompt_anchor, self.lr_free_embedding, self.lr_projector) <= 0:
            raise ValueError("learning rates must be > 0")
        if not 0.0 <= self.momentum < 1.0:
            raise ValueError("momentum must be in [0, 1)")


@dataclass
class ParamGroup:
    """Named set of parameter arrays sharing one learning rate."""

    name: str
    params: list[np.ndarray]
    lr_key: str
    velocities: list[np.ndarray] = field(default_factory=list)

    def __post_init__(self):
        if not self.velocities:
            self.velocities = [np.zeros_like(p) for p in self.params]


def head_param_groups(head) -> list[ParamGroup]:
    """Trainable parameter groups for a head; frozen sides are excluded."""
    if isinstance(head, ProjectorHead):
        return [ParamGroup("projector", [head.weight, head.bias], "lr_projector")]
    if isinstance(head, EmbeddingBank):
        lr_key_for = {ANCHOR_LEARNABLE: "lr_prompt_anchor",
                      FREE_LEARNABLE: "lr_free_embedding"}
        groups = []
        for side, mode, param in (("positive", head.positive_mode, head.positive),
                                  ("negative", head.negative_mode, head.negative)):
            if mode == ANCHOR_FROZEN:
                continue
            groups.append(ParamGroup(side, [param], lr_key_for[mode]))
        return groups
    raise TypeError(f"unknown head type {type(head).__name__}")


def cosine_lr(lr0: float, step: int, total_steps: int) -> float:
    """Annealed rate lr0 * 0.5 * (1 + cos(pi * t / T)); lr0 at t=0, 0 at t=T."""
    if lr0 <= 0:
        raise ValueError("lr0 must be positive")
    if total_steps < 1:
        raise ValueError("total_steps must be >= 1")
    if not 0 <= step <= total_steps:
        raise ValueError(f"step {step} outside [0, {total_steps}]")
    return lr0 * 0.5 * (1.0 + math.cos(math.pi * step / total_steps))


def sgd_step(group: ParamGroup, grads: list[np.ndarray], lr: float,
             momentum: float) -> None:
    """In-place heavy-ball update: v <- momentum*v + g; theta <- theta - lr*v."""
    if len(grads) != len(group.params):
        raise ShapeError(f"{len(grads)} gradients for {len(group.params)} parameters")
    for p, g, v in zip(group.params, grads, group.velocities):
        if g.shape != p.shape:
            raise ShapeError(f"gradient shape {g.shape} != parameter shape {p.shape}")
        v *= momentum
        v += g
        p -= lr * v


def predict_pair(head, fmap: FeatureMap) -> PredictionPair:
    """Full forward: head logits -> attention maps -> aggregated pair."""
    logits = head_forward(head, fmap)
    return aggregate(logits, attention_maps(logits))


def predict_probabilities(head, features: list[FeatureMap]) -> np.ndarray:
    """(M, N) matrix of per-image class probabilities."""
    return np.stack([pair_probability(predict_pair(head, fm)) for fm in features])


def _image_loss_and_grads(head, fmap: FeatureMap, label_row: np.ndarray,
                          loss_cfg: LossConfig) -> tuple[float, dict[str, np.ndarray]]:
    """Loss and analytic parameter gradients for a single image."""
    logits = head_forward(head, fmap)
    maps = attention_maps(logits)
    pair = aggregate(logits, maps)
    y_hat = pair_probability(pair)

    loss = float(np.sum(asl_terms(label_row, y_hat, loss_cfg)))
    dl_dyhat = asl_grads(label_row, y_hat, loss_cfg)
    dpos = dl_dyhat * pair_probability_grad(y_hat)  # d loss / d p_plus
    # d loss / d logit plane, per polarity
    ga_pos = dpos[None, None, :] * aggregate_grad(logits.positive, maps.positive,
                                                  pair.positive)
    ga_neg = -dpos[None, None, :] * aggregate_grad(logits.negative, maps.negative,
                                                   pair.negative)

    if isinstance(head, ProjectorHead):
        z = fmap.array
        dw = np.empty_like(head.weight)
        dw[0::2] = np.einsum("hwn,hwd->nd", ga_pos, z)
        dw[1::2] = np.einsum("hwn,hwd->nd", ga_neg, z)
        db = np.empty_like(head.bias)
        db[0::2] = ga_pos.sum(axis=(0, 1))
        db[1::2] = ga_neg.sum(axis=(0, 1))
        return loss, {"weight": dw, "bias": db}

    if isinstance(head, EmbeddingBank):
        zn = fmap.array / np.linalg.norm(fmap.array, axis=-1, keepdims=True)
        tau = head.temperature
        grads: dict[str, np.ndarray] = {}
        for side, ga, bank_side in (("positive", ga_pos, head.positive),
                                    ("negative", ga_neg, head.negative)):
            norms = np.linalg.norm(bank_side, axis=1)
            r_hat = bank_side / norms[:, None]
            cos = np.einsum("hwd,nd->hwn", zn, r_hat)
            gc = ga / tau  # logits = cos / tau
            t1 = np.einsum("hwn,hwd->nd", gc, zn)
            t2 = np.einsum("hwn,hwn->n", gc, cos)
            grads[side] = (t1 - t2[:, None] * r_hat) / norms[:, None]
        return loss, grads

    raise TypeError(f"unknown head type {type(head).__name__}")


@dataclass
class TrainResult:
    head: object
    history: list[dict]


def _grad_names(group: ParamGroup) -> list[str]:
    return {"projector": ["weight", "bias"],
            "positive": ["positive"],
            "negative": ["negative"]}[group.name]


def train_run(bundle: DatasetBundle, head, cfg: TrainConfig,
              loss_cfg: LossConfig, eval_bundle: DatasetBundle | None = None,
              workers: int = 1,
              progress: Callable[[dict], None] | None = None) -> TrainResult:
    """Train a head in place over the bundle's (possibly partial) labels.

    Batch updates use the batch-mean gradient so the step size does not
    scale with ``batch_size``.  Runs are deterministic under ``cfg.seed``
    for any ``workers`` value: per-image gradients are computed in
    parallel but reduced in image order.  Raises ``NumericalError`` on the
    first non-finite batch loss.
    """
    if bundle.num_images < 1:
        raise ValueError("empty dataset")
    groups = head_param_groups(head)
    shuffle_rng = Rng(cfg.seed)
    labels = bundle.labels.entries
    history: list[dict] = []
    executor = ThreadPoolExecutor(max_workers=workers) if workers > 1 else None
    try:
        for epoch in range(cfg.epochs):
            lrs = {g.name: cosine_lr(getattr(cfg, g.lr_key), epoch, cfg.epochs)
                   for g in groups}
            perm = shuffle_rng.permutation(bundle.num_images)
            epoch_loss = 0.0
            for b_start in range(0, bundle.num_images, cfg.batch_size):
                batch = perm[b_start:b_start + cfg.batch_size]
                jobs = [(head, bundle.features[i], labels[i], loss_cfg) for i in batch]
                if executor is not None:
                    results = list(executor.map(lambda a: _image_loss_and_grads(*a), jobs))
                else:
                    results = [_image_loss_and_grads(*a) for a in jobs]

                batch_loss = 0.0
                acc: dict[str, np.ndarray] = {}
                for loss_i, grads_i in results:  # fixed order: batch index
                    batch_loss += loss_i
                    for name, g in grads_i.items():
                        if name in acc:
                            acc[name] += g
                        else:
                            acc[name] = g.copy()
                if not math.isfinite(batch_loss):
                    raise NumericalError(
                        f"non-finite loss at epoch {epoch}, batch {b_start // cfg.batch_size}")
                scale = 1.0 / len(batch)
                for g in groups:
                    sgd_step(g, [acc[n] * scale for n in _grad_names(g)],
                             lrs[g.name], cfg.momentum)
                epoch_loss += batch_loss

            row: dict = {"epoch": epoch}
            for g in groups:
                row[f"lr_{g.name}"] = lrs[g.name]
            row["train_loss"] = epoch_loss / bundle.num_images
            if eval_bundle is not None:
                scores = predict_probabilities(head, eval_bundle.features)
                row["val_map"] = mean_average_precision(scores, eval_bundle.labels.entries)
            history.append(row)
            if progress is not None:
                progress(row)
    finally:
        if executor is not None:
            executor.shutdown(wait=False)
    return TrainResult(head=head, history=history)


def history_to_csv(history: list[dict], path) -> None:
    """Metrics log: epoch, per-group learning rates, train loss, optional val mAP."""
    import csv

    if not history:
        raise ValueError("empty history")
    cols = list(history[0].keys())
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(cols)
        for row in history:
            w.writerow([repr(row[c]) if isinstance(row[c], float) else row[c]
                        for c in cols])
