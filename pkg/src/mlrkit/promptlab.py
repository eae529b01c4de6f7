"""Cosine-similarity statistics between class-embedding banks.

Used to quantify how close "positive" and "negative" prompt embeddings land
in the shared feature space.  Standard deviations are population (1/N);
the multi-template sweep pools every (class, template) cosine by default,
with a per-template-mean alternative behind a flag.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import DegenerateInputError, ShapeError

POOLED = "pooled"
PER_TEMPLATE_MEAN = "per-template-mean"


@dataclass(frozen=True)
class SimilarityStats:
    mean: float
    std: float
    min: float
    max: float

    def as_dict(self) -> dict:
        return {"mean": self.mean, "std": self.std, "min": self.min, "max": self.max}


def _stats(values: np.ndarray) -> SimilarityStats:
    return SimilarityStats(mean=float(values.mean()),
                           std=float(values.std()),  # population std
                           min=float(values.min()),
                           max=float(values.max()))


def rowwise_cosines(bank_a: np.ndarray, bank_b: np.ndarray) -> np.ndarray:
    """Cosine between corresponding rows of two (N, d) banks."""
    a = np.asarray(bank_a, dtype=np.float64)
    b = np.asarray(bank_b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 2:
        raise ShapeError(f"banks must share an (N, d) shape, got {a.shape} and {b.shape}")
    na = np.linalg.norm(a, axis=1)
    nb = np.linalg.norm(b, axis=1)
    if np.any(na == 0) or np.any(nb == 0):
        raise DegenerateInputError("bank contains a zero row")
    return np.einsum("nd,nd->n", a, b) / (na * nb)


def pairwise_stats(bank_a: np.ndarray, bank_b: np.ndarray) -> SimilarityStats:
    """Stats of the per-class cosines between two banks."""
    return _stats(rowwise_cosines(bank_a, bank_b))


def template_sweep_stats(banks_p1: Sequence[np.ndarray],
                         banks_n1: Sequence[np.ndarray],
                         banks_p2: Sequence[np.ndarray],
                         aggregation: str = POOLED
                         ) -> tuple[SimilarityStats, SimilarityStats]:
    """Stats over a list of per-template banks: (P1 vs N1, P1 vs P2).

    ``pooled`` gathers all N*T per-class cosines before computing stats;
    ``per-template-mean`` first averages within each template."""
    if not banks_p1 or not (len(banks_p1) == len(banks_n1) == len(banks_p2)):
        raise ShapeError("template lists must be nonempty and equal-length")
    if aggregation not in (POOLED, PER_TEMPLATE_MEAN):
        raise ValueError(f"unknown aggregation {aggregation!r}")

    def collect(side_b: Sequence[np.ndarray]) -> np.ndarray:
        per_template = [rowwise_cosines(a, b) for a, b in zip(banks_p1, side_b)]
        if aggregation == POOLED:
            return np.concatenate(per_template)
        return np.array([c.mean() for c in per_template])

    return _stats(collect(banks_n1)), _stats(collect(banks_p2))
