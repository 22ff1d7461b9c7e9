"""Embedding and clustering losses with analytic gradients.

Pairwise similarity in the embedding is ``s = exp(-|h_i - h_j|)``. Before any
logarithm it is clamped to ``[eps, 1 - eps]``; inside the clamped region the
gradient is zero, matching what an autodiff clamp would give.

* boundary separation: ``-(log s + log(1 - s))`` over the boundary pool batch
* contraction:         ``-log s``                over the contraction batch
* expansion:           ``-log(1 - s)``           over disconnected pairs
* clustering:          ``KL(P || Q)`` averaged over rows, Q a Student-t kernel

Each pair term is averaged over its pairs in the batch.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import ArgumentError, DegenerateColumnError

CLAMP_EPS = 1e-4
DIST_FLOOR = 1e-7
LOG_FLOOR = 1e-12


@dataclass(frozen=True)
class LossBreakdown:
    l_bps: float = 0.0
    l_c: float = 0.0
    l_e: float = 0.0
    l_clu: float = 0.0
    beta: float = 0.0

    @property
    def total(self) -> float:
        return self.l_bps + self.l_c + self.l_e + self.beta * self.l_clu

    def as_dict(self) -> dict:
        return {"l_bps": float(self.l_bps), "l_c": float(self.l_c), "l_e": float(self.l_e),
                "l_clu": float(self.l_clu), "beta": float(self.beta), "total": float(self.total)}


@dataclass
class ClusterState:
    """Learnable centers plus the schedule that phases in the clustering loss."""

    centers: np.ndarray
    gamma: float = 0.01
    epoch: int = 0
    velocity: Optional[np.ndarray] = None
    Q: Optional[np.ndarray] = None
    P: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.velocity is None:
            self.velocity = np.zeros_like(self.centers)

    @property
    def k(self) -> int:
        return self.centers.shape[0]

    @property
    def beta(self) -> float:
        return self.gamma * self.epoch

    def refresh_targets(self, H_full) -> np.ndarray:
        self.Q = assignment_q(H_full, self.centers)
        self.P = target_p(self.Q)
        return self.P


def similarity(h_i, h_j) -> float:
    """Unclamped ``exp(-||h_i - h_j||)``."""
    return float(np.exp(-np.linalg.norm(np.asarray(h_i, dtype=np.float64) - np.asarray(h_j, dtype=np.float64))))


def clamp_similarity(s, eps: float = CLAMP_EPS):
    return np.clip(s, eps, 1.0 - eps)


def _scatter_pairs(n, pairs, g):
    """dH[i] += g_k, dH[j] -= g_k for every pair k = (i, j)."""
    d = g.shape[1]
    out = np.empty((n, d), dtype=g.dtype)
    for c in range(d):
        out[:, c] = (np.bincount(pairs[:, 0], weights=g[:, c], minlength=n)
                     - np.bincount(pairs[:, 1], weights=g[:, c], minlength=n))
    return out


def _pair_loss(H, pairs, attract: bool, repel: bool, eps: float, reduction: str = "mean"):
    H = np.asarray(H)
    pairs = np.asarray(pairs, dtype=np.int64).reshape(-1, 2)
    n = H.shape[0]
    if pairs.shape[0] == 0:
        return 0.0, np.zeros_like(H)
    diff = H[pairs[:, 0]] - H[pairs[:, 1]]
    raw = np.sqrt(np.einsum("ij,ij->i", diff, diff))
    r = np.maximum(raw, DIST_FLOOR)
    s = np.exp(-r)
    sc = clamp_similarity(s, eps)
    live = (s > eps) & (s < 1.0 - eps)
    value = 0.0
    dr = np.zeros_like(r)
    if attract:
        value -= np.log(sc).sum()
        dr += live  # d/dr of -log(exp(-r)) is 1
    if repel:
        value -= np.log1p(-sc).sum()
        dr -= np.where(live, s / (1.0 - s), 0.0)
    scale = 1.0 / pairs.shape[0] if reduction == "mean" else 1.0
    coef = np.where(raw >= DIST_FLOOR, scale * dr / r, 0.0)
    return float(scale * value), _scatter_pairs(n, pairs, diff * coef[:, None])


def loss_bps(H, pairs, eps: float = CLAMP_EPS):
    """Boundary separation: both the attractive and the repulsive log term per pair."""
    return _pair_loss(H, pairs, True, True, eps)


def loss_contraction(H, pairs, eps: float = CLAMP_EPS):
    return _pair_loss(H, pairs, True, False, eps)


def loss_expansion(H, pairs, eps: float = CLAMP_EPS):
    return _pair_loss(H, pairs, False, True, eps)


def _kernel(H, C):
    diff = H[:, None, :] - C[None, :, :]
    return diff, 1.0 / (1.0 + np.einsum("ikd,ikd->ik", diff, diff))


def assignment_q(H, C) -> np.ndarray:
    """Student-t (one degree of freedom) soft assignment of rows of H to centers C."""
    H = np.asarray(H, dtype=np.float64)
    C = np.asarray(C, dtype=np.float64)
    if C.shape[0] < 2:
        raise ArgumentError(f"need at least 2 centers, got {C.shape[0]}")
    _, w = _kernel(H, C)
    return w / w.sum(axis=1, keepdims=True)


def target_p(Q) -> np.ndarray:
    """Sharpened target: square Q, divide by column mass, renormalise rows."""
    Q = np.asarray(Q, dtype=np.float64)
    freq = Q.sum(axis=0)
    if np.any(freq < 1e-12):
        dead = np.flatnonzero(freq < 1e-12).tolist()
        raise DegenerateColumnError(f"clusters {dead} have no assignment mass")
    num = Q ** 2 / freq
    return num / num.sum(axis=1, keepdims=True)


def kl_rows(P, Q) -> np.ndarray:
    """Per-row KL(P || Q), with 0 log 0 = 0 and Q floored inside the log."""
    P = np.asarray(P, dtype=np.float64)
    Q = np.asarray(Q, dtype=np.float64)
    terms = np.where(P > 0, P * (np.log(np.maximum(P, LOG_FLOOR)) - np.log(np.maximum(Q, LOG_FLOOR))), 0.0)
    return terms.sum(axis=1)


def loss_clu(H, C, P):
    """Mean-over-rows KL(P || Q(H, C)) and its gradients w.r.t. H and C. P is held fixed."""
    H = np.asarray(H, dtype=np.float64)
    C = np.asarray(C, dtype=np.float64)
    P = np.asarray(P, dtype=np.float64)
    if H.shape[0] == 0:
        return 0.0, np.zeros_like(H), np.zeros_like(C)
    diff, w = _kernel(H, C)
    Q = w / w.sum(axis=1, keepdims=True)
    b = H.shape[0]
    value = float(kl_rows(P, Q).sum() / b)
    # d log w_ij / d h_i = -2 w_ij (h_i - c_j); P rows may deviate from 1 by rounding
    coef = 2.0 * w * (P - Q * P.sum(axis=1, keepdims=True)) / b
    g = coef[:, :, None] * diff
    return value, g.sum(axis=1), -g.sum(axis=0)


def combined_loss(H, C, neg_pairs, pos_pairs, disc_pairs, P=None, beta: float = 0.0,
                  eps: float = CLAMP_EPS):
    """All four terms on one batch of embeddings.

    Pair arrays index rows of ``H``. ``P`` (rows aligned with ``H``) and ``C`` may
    be None while clustering is inactive. Returns ``(LossBreakdown, dH, dC)``.
    """
    l_bps, g_bps = loss_bps(H, neg_pairs, eps)
    l_c, g_c = loss_contraction(H, pos_pairs, eps)
    l_e, g_e = loss_expansion(H, disc_pairs, eps)
    dH = g_bps + g_c + g_e
    l_clu, dC = 0.0, None
    if C is not None:
        dC = np.zeros_like(C, dtype=np.float64)
        if P is not None:
            l_clu, g_h, g_cen = loss_clu(H, C, P)
            dH = dH + beta * g_h
            dC = beta * g_cen
    return LossBreakdown(l_bps, l_c, l_e, l_clu, float(beta)), dH, dC
