"""Per-class evaluation: accuracy thirds, margins, feature geometry."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ._validation import check_features, check_labels
from .stats import batch_class_stats


def predict(logits) -> np.ndarray:
    """Argmax with ties resolved to the lowest class index."""
    logits = check_features(logits)
    return logits.argmax(axis=1)


def per_class_accuracy(logits, labels, num_classes: int) -> np.ndarray:
    """Accuracy per class; classes with no samples get NaN."""
    logits = check_features(logits)
    labels = check_labels(labels, num_classes, length=logits.shape[0])
    pred = predict(logits)
    acc = np.full(num_classes, np.nan)
    for k in range(num_classes):
        mask = labels == k
        if mask.any():
            acc[k] = float(np.mean(pred[mask] == k))
    return acc


def partition_classes(per_class_acc):
    """Split classes into (easy, medium, hard) index lists.

    Classes are ranked by descending accuracy with ties broken toward the
    lower index; the top ceil(V/3) are easy and the bottom floor(V/3) are
    hard, where V counts classes that actually have an accuracy (NaN
    entries, from empty classes, are left out entirely).
    """
    acc = np.asarray(per_class_acc, dtype=np.float64)
    if acc.ndim != 1 or acc.size == 0:
        raise ValueError("per_class_acc must be a non-empty 1-D array")
    valid = np.flatnonzero(np.isfinite(acc))
    if valid.size == 0:
        raise ValueError("no class has an accuracy to rank")
    order = valid[np.lexsort((valid, -acc[valid]))]
    v = order.size
    n_easy = math.ceil(v / 3)
    n_hard = v // 3
    easy = sorted(order[:n_easy].tolist())
    hard = sorted(order[v - n_hard :].tolist()) if n_hard else []
    medium = sorted(order[n_easy : v - n_hard].tolist())
    return easy, medium, hard


def softmax(logits) -> np.ndarray:
    logits = check_features(logits)
    m = logits.max(axis=1, keepdims=True)
    e = np.exp(logits - m)
    return e / e.sum(axis=1, keepdims=True)


def output_margins(logits, labels) -> np.ndarray:
    """Per-sample probability margin p(true) - max p(other), raw logits."""
    probs = softmax(logits)
    labels = check_labels(labels, probs.shape[1], length=probs.shape[0])
    rows = np.arange(probs.shape[0])
    true = probs[rows, labels]
    masked = probs.copy()
    masked[rows, labels] = -np.inf
    return true - masked.max(axis=1)


def classifier_margin_degrees(weights) -> float:
    """Angle in degrees of the closest pair of class weight vectors."""
    w = check_features(weights)
    if w.shape[0] < 2:
        raise ValueError("need at least two class vectors")
    norms = np.linalg.norm(w, axis=1)
    if np.any(norms == 0):
        raise ValueError("zero-norm class vector has no direction")
    u = w / norms[:, None]
    cos = u @ u.T
    np.fill_diagonal(cos, -np.inf)
    worst = np.clip(cos.max(), -1.0, 1.0)
    return float(np.degrees(np.arccos(worst)))


def variability_ratio(features, labels, num_classes: int):
    """Mean over classes of spread norm / mean-embedding norm.

    Returns ``(ratio, excluded)`` where ``excluded`` lists classes left out
    because they were empty or had a zero-norm mean embedding.
    """
    mu_sq, s_sq, _, counts = batch_class_stats(features, labels, num_classes)
    excluded = [k for k in range(num_classes) if counts[k] == 0 or mu_sq[k] == 0.0]
    keep = [k for k in range(num_classes) if k not in excluded]
    if not keep:
        return float("nan"), excluded
    ratio = float(np.mean(np.sqrt(s_sq[keep]) / np.sqrt(mu_sq[keep])))
    return ratio, excluded


@dataclass
class EvalReport:
    num_classes: int
    overall_acc: float
    per_class_acc: np.ndarray
    easy: list
    medium: list
    hard: list
    easy_acc: float
    medium_acc: float
    hard_acc: float
    m_o: float
    m_o_easy: float
    m_o_medium: float
    m_o_hard: float
    m_c_degrees: float
    variability: float
    mu_norms: np.ndarray
    s_norms: np.ndarray

    def subset_of(self, k: int) -> str:
        if k in self.easy:
            return "easy"
        if k in self.medium:
            return "medium"
        if k in self.hard:
            return "hard"
        return "excluded"

    def rows(self):
        out = [
            ("num_classes", "", self.num_classes),
            ("overall_acc", "", self.overall_acc),
            ("easy_acc", "", self.easy_acc),
            ("medium_acc", "", self.medium_acc),
            ("hard_acc", "", self.hard_acc),
            ("m_o", "", self.m_o),
            ("m_o_easy", "", self.m_o_easy),
            ("m_o_medium", "", self.m_o_medium),
            ("m_o_hard", "", self.m_o_hard),
            ("m_c_degrees", "", self.m_c_degrees),
            ("variability", "", self.variability),
        ]
        for i, a in enumerate(self.per_class_acc):
            out.append(("per_class_acc", i, a))
        return out

    def per_class_rows(self):
        """(class_id, accuracy, mu_norm, s_norm, subset) rows."""
        return [
            (
                k,
                self.per_class_acc[k],
                self.mu_norms[k],
                self.s_norms[k],
                self.subset_of(k),
            )
            for k in range(self.num_classes)
        ]


def _subset_mean(values, labels, subset) -> float:
    if not subset:
        return float("nan")
    mask = np.isin(labels, subset)
    if not mask.any():
        return float("nan")
    return float(values[mask].mean())


def evaluate_model(model, dataset) -> EvalReport:
    """Full evaluation of a model on a dataset."""
    logits = model.predict_logits(dataset.x)
    feats = model.features(dataset.x)
    y = dataset.y
    k = dataset.num_classes
    acc = per_class_accuracy(logits, y, k)
    easy, medium, hard = partition_classes(acc)
    margins = output_margins(logits, y)
    mu_sq, s_sq, _, _ = batch_class_stats(feats, y, k)
    ratio, _ = variability_ratio(feats, y, k)
    pred = predict(logits)
    return EvalReport(
        num_classes=k,
        overall_acc=float(np.mean(pred == y)),
        per_class_acc=acc,
        easy=easy,
        medium=medium,
        hard=hard,
        easy_acc=float(np.nanmean(acc[easy])) if easy else float("nan"),
        medium_acc=float(np.nanmean(acc[medium])) if medium else float("nan"),
        hard_acc=float(np.nanmean(acc[hard])) if hard else float("nan"),
        m_o=float(margins.mean()),
        m_o_easy=_subset_mean(margins, y, easy),
        m_o_medium=_subset_mean(margins, y, medium),
        m_o_hard=_subset_mean(margins, y, hard),
        m_c_degrees=classifier_margin_degrees(model.params["head_w"]),
        variability=ratio,
        mu_norms=np.sqrt(mu_sq),
        s_norms=np.sqrt(s_sq),
    )
