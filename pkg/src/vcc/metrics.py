"""Clustering accuracy under optimal label matching, and normalized mutual information."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linear_sum_assignment

from .errors import LengthError


def _check(pred, truth):
    pred = np.asarray(pred).ravel()
    truth = np.asarray(truth).ravel()
    if pred.shape[0] != truth.shape[0]:
        raise LengthError(f"pred has {pred.shape[0]} entries, truth has {truth.shape[0]}")
    if pred.shape[0] == 0:
        raise LengthError("cannot score an empty labelling")
    return pred, truth


def contingency(pred, truth):
    """Counts matrix (pred cluster x true class) plus the sorted label values of each axis."""
    pred, truth = _check(pred, truth)
    p_vals, p_idx = np.unique(pred, return_inverse=True)
    t_vals, t_idx = np.unique(truth, return_inverse=True)
    table = np.zeros((p_vals.size, t_vals.size), dtype=np.int64)
    np.add.at(table, (p_idx, t_idx), 1)
    return table, p_vals, t_vals


def accuracy(pred, truth):
    """Best one-to-one matching of predicted clusters to classes.

    Returns ``(acc, mapping)``; ``mapping`` sends a predicted label to the class it
    was matched with. Unequal label counts are handled by zero padding, so surplus
    predicted clusters stay unmatched and count as errors.
    """
    table, p_vals, t_vals = contingency(pred, truth)
    size = max(table.shape)
    padded = np.zeros((size, size), dtype=np.int64)
    padded[: table.shape[0], : table.shape[1]] = table
    rows, cols = linear_sum_assignment(padded, maximize=True)
    mapping = {}
    matched = 0
    for r, c in zip(rows, cols):
        if r < p_vals.size and c < t_vals.size:
            mapping[p_vals[r].item()] = t_vals[c].item()
            matched += padded[r, c]
    return matched / table.sum(), mapping


def _entropy(counts, n):
    p = counts[counts > 0] / n
    return float(-(p * np.log(p)).sum())


def nmi(pred, truth) -> float:
    """I(pred; truth) / sqrt(H(pred) H(truth)), natural logs."""
    table, _, _ = contingency(pred, truth)
    n = table.sum()
    h_pred = _entropy(table.sum(axis=1), n)
    h_true = _entropy(table.sum(axis=0), n)
    if h_pred == 0.0 or h_true == 0.0:
        # a single-cluster labelling carries no information, unless both are trivial
        return 1.0 if h_pred == h_true else 0.0
    nonzero = table > 0
    if (nonzero.sum(axis=0) == 1).all() and (nonzero.sum(axis=1) == 1).all():
        return 1.0  # same partition up to relabelling
    pij = table / n
    outer = np.outer(table.sum(axis=1), table.sum(axis=0)) / n ** 2
    nz = pij > 0
    mi = float((pij[nz] * np.log(pij[nz] / outer[nz])).sum())
    return max(0.0, min(1.0, mi / np.sqrt(h_pred * h_true)))


@dataclass
class MetricsReport:
    acc: float
    nmi: float
    contingency: np.ndarray
    mapping: dict = field(default_factory=dict)

    @property
    def n(self) -> int:
        return int(self.contingency.sum())

    def record(self) -> dict:
        return {"acc": float(self.acc), "nmi": float(self.nmi), "N": self.n,
                "K_pred": int(self.contingency.shape[0]), "K_true": int(self.contingency.shape[1])}


def evaluate(pred, truth) -> MetricsReport:
    table, _, _ = contingency(pred, truth)
    acc, mapping = accuracy(pred, truth)
    return MetricsReport(acc, nmi(pred, truth), table, mapping)
