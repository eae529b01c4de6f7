"""Average precision and mean average precision for ranked class scores.

AP convention: mean precision at positive ranks (the information-retrieval
form of the area under the precision-recall curve), with ties broken by
stable original index after a descending sort.  Evaluation labels must be
fully annotated; unknown (0) entries are rejected.
"""

from __future__ import annotations

import csv
import warnings

import numpy as np

from .errors import ShapeError, UndefinedAPError


def _check_eval_labels(labels: np.ndarray) -> np.ndarray:
    labels = np.asarray(labels)
    if not np.isin(labels, (-1, 1)).all():
        raise ValueError("evaluation labels must be fully annotated (+1/-1 only)")
    return labels


def average_precision(scores, labels) -> float:
    """AP for one class: (1/P) * sum of precision@k over positive ranks k."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = _check_eval_labels(labels)
    if scores.shape != labels.shape or scores.ndim != 1:
        raise ShapeError(f"scores {scores.shape} and labels {labels.shape} "
                         "must be equal-length vectors")
    num_pos = int((labels == 1).sum())
    if num_pos == 0:
        raise UndefinedAPError("no positive labels; AP undefined")
    order = np.argsort(-scores, kind="stable")
    hits = (labels[order] == 1)
    cum_hits = np.cumsum(hits)
    ranks = np.arange(1, scores.size + 1)
    return float((cum_hits[hits] / ranks[hits]).sum() / num_pos)


def per_class_average_precision(scores, labels) -> list[float | None]:
    """AP per class over (M, N) score/label matrices; None where undefined."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = _check_eval_labels(labels)
    if scores.shape != labels.shape or scores.ndim != 2:
        raise ShapeError("scores and labels must be matching (M, N) matrices")
    aps: list[float | None] = []
    for j in range(scores.shape[1]):
        try:
            aps.append(average_precision(scores[:, j], labels[:, j]))
        except UndefinedAPError:
            warnings.warn(f"class {j} has no positives; excluded from mAP", stacklevel=2)
            aps.append(None)
    return aps


def mean_average_precision(scores, labels) -> float:
    """Unweighted mean of the defined per-class APs."""
    aps = [a for a in per_class_average_precision(scores, labels) if a is not None]
    if not aps:
        raise UndefinedAPError("no class has a positive label; mAP undefined")
    return float(np.mean(aps))


def write_eval_report(path, class_names, scores, labels) -> float:
    """CSV report: one AP row per class plus a final mAP row.  Returns mAP."""
    aps = per_class_average_precision(scores, labels)
    defined = [a for a in aps if a is not None]
    if not defined:
        raise UndefinedAPError("no class has a positive label; mAP undefined")
    m_ap = float(np.mean(defined))
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["class", "ap"])
        for name, ap in zip(class_names, aps):
            w.writerow([name, "" if ap is None else repr(ap)])
        w.writerow(["mAP", repr(m_ap)])
    return m_ap
