"""Asymmetric focal loss over ternary labels, with analytic gradients.

Sign convention: the loss is the standard negative-log form, so it is
non-negative everywhere and gradient descent minimizes it.  Unknown labels
(0) contribute exactly zero loss and zero gradient.

For negatives the probability is shifted and clamped, y_delta = max(y_hat -
delta, 0), which is non-differentiable at y_hat == delta; the gradient
there is defined as 0 (the clamp-side subgradient).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .aggregation import PredictionPair, pair_probability, pair_probability_grad
from .errors import DomainError, ShapeError


@dataclass(frozen=True)
class LossConfig:
    """Focusing exponents and the negative-side probability shift.

    ``focal_detach`` drops the derivative of the focusing weight itself
    (treating it as a constant), matching implementations that detach the
    weight; the default keeps the exact product-rule gradient.
    """

    gamma_plus: float = 1.0
    gamma_minus: float = 2.0
    delta: float = 0.05
    focal_detach: bool = False

    def __post_init__(self):
        if self.gamma_plus < 0 or self.gamma_minus < 0:
            raise ValueError("focusing exponents must be >= 0")
        if not 0.0 <= self.delta < 1.0:
            raise ValueError(f"delta must be in [0, 1), got {self.delta}")


def _check_probs(y_hat: np.ndarray) -> None:
    if np.any(y_hat <= 0.0) or np.any(y_hat >= 1.0):
        raise DomainError("probabilities must lie strictly in (0, 1)")


def asl_terms(y: np.ndarray, y_hat: np.ndarray, cfg: LossConfig) -> np.ndarray:
    """Element-wise loss for label array y in {+1, -1, 0}."""
    y = np.asarray(y)
    y_hat = np.asarray(y_hat, dtype=np.float64)
    _check_probs(y_hat)
    out = np.zeros(np.broadcast(y, y_hat).shape)
    y_hat_b = np.broadcast_to(y_hat, out.shape)

    pos = y == 1
    if pos.any():
        yh = y_hat_b[pos]
        out[pos] = -np.power(1.0 - yh, cfg.gamma_plus) * np.log(yh)

    neg = y == -1
    if neg.any():
        yh = y_hat_b[neg]
        shifted = np.maximum(yh - cfg.delta, 0.0)
        out[neg] = -np.power(shifted, cfg.gamma_minus) * np.log1p(-shifted)
    return out


def asl_grads(y: np.ndarray, y_hat: np.ndarray, cfg: LossConfig) -> np.ndarray:
    """Element-wise d(loss)/d(y_hat); zero for unknown labels."""
    y = np.asarray(y)
    y_hat = np.asarray(y_hat, dtype=np.float64)
    _check_probs(y_hat)
    out = np.zeros(np.broadcast(y, y_hat).shape)
    y_hat_b = np.broadcast_to(y_hat, out.shape)

    pos = y == 1
    if pos.any():
        yh = y_hat_b[pos]
        w = np.power(1.0 - yh, cfg.gamma_plus)
        g = -w / yh
        if cfg.gamma_plus > 0 and not cfg.focal_detach:
            g = g + cfg.gamma_plus * np.power(1.0 - yh, cfg.gamma_plus - 1.0) * np.log(yh)
        out[pos] = g

    neg = y == -1
    if neg.any():
        yh = y_hat_b[neg]
        shifted = np.maximum(yh - cfg.delta, 0.0)
        active = yh > cfg.delta  # zero gradient on the clamp plateau and at the kink
        g = np.zeros_like(yh)
        s = shifted[active]
        ga = np.power(s, cfg.gamma_minus) / (1.0 - s)
        if cfg.gamma_minus > 0 and not cfg.focal_detach:
            ga = ga - cfg.gamma_minus * np.power(s, cfg.gamma_minus - 1.0) * np.log1p(-s)
        g[active] = ga
        out[neg] = g
    return out


def asl_term(y: int, y_hat: float, cfg: LossConfig) -> float:
    """Loss of one prediction; y in {+1, -1, 0}, y_hat strictly in (0, 1)."""
    if y not in (1, -1, 0):
        raise ValueError(f"label must be +1, -1 or 0, got {y}")
    return float(asl_terms(np.array([y]), np.array([y_hat]), cfg)[0])


def asl_grad(y: int, y_hat: float, cfg: LossConfig) -> float:
    """Analytic d(loss)/d(y_hat) of one prediction."""
    if y not in (1, -1, 0):
        raise ValueError(f"label must be +1, -1 or 0, got {y}")
    return float(asl_grads(np.array([y]), np.array([y_hat]), cfg)[0])


def batch_loss(preds: Sequence[PredictionPair], labels, cfg: LossConfig
               ) -> tuple[float, list[PredictionPair]]:
    """Total loss over a batch plus gradients w.r.t. every aggregated logit.

    ``labels`` is an (M, N) array in {+1, -1, 0}, one row per prediction
    pair.  The probability chain y_hat = two-way-softmax(p_pos, p_neg) is
    differentiated analytically; the returned pairs hold d(total)/d(p_pos)
    and d(total)/d(p_neg).  Accumulation order is fixed (image 0..M-1) so
    totals are bit-stable.
    """
    labels = np.asarray(getattr(labels, "entries", labels))
    if labels.ndim != 2 or labels.shape[0] != len(preds):
        raise ShapeError(
            f"labels shape {labels.shape} does not match {len(preds)} predictions")
    total = 0.0
    grads: list[PredictionPair] = []
    for i, pair in enumerate(preds):
        if pair.positive.shape != (labels.shape[1],):
            raise ShapeError(f"prediction {i} has {pair.positive.shape[0]} classes, "
                             f"labels have {labels.shape[1]}")
        y_hat = pair_probability(pair)
        total += float(np.sum(asl_terms(labels[i], y_hat, cfg)))
        dl_dyhat = asl_grads(labels[i], y_hat, cfg)
        dyhat_dpos = pair_probability_grad(y_hat)
        dpos = dl_dyhat * dyhat_dpos
        grads.append(PredictionPair(positive=dpos, negative=-dpos))
    return total, grads
