"""Augmented edge pools and per-epoch batch streams.

The boundary-separation pool repeats each edge ``floor(f_max / w)`` times, so weak
edges (typical of sparse boundary regions) are visited more often. The contraction
pool repeats each edge ``floor(w / f_mean)`` times, so only strong edges survive.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterator

import numpy as np

from .errors import ArgumentError, EmptyPoolError, MultiplicityOverflowError, SaturationError
from .graph import LatentGraph

DEFAULT_MULTIPLICITY_CAP = 10_000
PROBE_WINDOW = 10_000
MIN_ACCEPT_RATE = 1e-3


@dataclass(frozen=True)
class EdgePools:
    graph: LatentGraph
    e_neg: np.ndarray
    e_pos: np.ndarray
    neg_multiplicity: np.ndarray
    pos_multiplicity: np.ndarray
    rng_seed: int = 0

    @property
    def n(self) -> int:
        return self.graph.n

    def connected(self, i, j):
        return self.graph.connected(i, j)


@dataclass(frozen=True)
class EdgeBatch:
    neg: np.ndarray
    pos: np.ndarray
    disconnected: np.ndarray

    def vertices(self) -> np.ndarray:
        return np.unique(np.concatenate([self.neg.ravel(), self.pos.ravel(), self.disconnected.ravel()]))


def build_pools(graph: LatentGraph, multiplicity_cap: int = DEFAULT_MULTIPLICITY_CAP,
                rng_seed: int = 0) -> EdgePools:
    if graph.num_edges == 0:
        raise EmptyPoolError("latent graph has no edges")
    w = graph.weights
    with np.errstate(divide="ignore"):
        ratio_neg = np.floor(graph.f_max / w)
    ratio_pos = np.floor(w / graph.f_mean)
    worst = max(ratio_neg.max(), ratio_pos.max())
    if not worst <= multiplicity_cap:
        e = int(np.argmax(np.maximum(ratio_neg, ratio_pos)))
        a, b = graph.edges[e]
        raise MultiplicityOverflowError(
            f"edge ({a}, {b}) with weight {w[e]:.3g} would be repeated {worst:.3g} times "
            f"(cap {multiplicity_cap}); the weight ratio is pathological"
        )
    r_neg = ratio_neg.astype(np.int64)
    r_pos = ratio_pos.astype(np.int64)
    return EdgePools(
        graph=graph,
        e_neg=np.repeat(graph.edges, r_neg, axis=0),
        e_pos=np.repeat(graph.edges, r_pos, axis=0),
        neg_multiplicity=r_neg,
        pos_multiplicity=r_pos,
        rng_seed=rng_seed,
    )


def sample_disconnected(connected, n: int, rng: np.random.Generator, num_nodes: int | None = None) -> np.ndarray:
    """Draw ``n`` ordered pairs uniformly from the pairs with no graph edge.

    ``connected`` is a LatentGraph/EdgePools (anything with a vectorised
    ``connected(i, j)`` and an ``n`` attribute) or a plain callable together with
    ``num_nodes``.
    """
    if num_nodes is None:
        num_nodes = connected.n
    test = connected.connected if hasattr(connected, "connected") else connected
    if n < 0:
        raise ArgumentError(f"n must be non-negative, got {n}")
    out = np.empty((0, 2), dtype=np.int64)
    if n == 0:
        return out
    num_edges = getattr(getattr(connected, "graph", connected), "num_edges", None)
    if num_nodes < 2 or (num_edges is not None and num_edges >= num_nodes * (num_nodes - 1) // 2):
        raise SaturationError("graph is complete: there are no disconnected pairs")
    chunks = []
    have = drawn = 0
    while have < n:
        size = max(2 * (n - have), 256)
        i = rng.integers(0, num_nodes, size=size)
        j = rng.integers(0, num_nodes, size=size)
        ok = (i != j) & ~test(i, j)
        drawn += size
        acc = np.flatnonzero(ok)
        if acc.size:
            chunks.append(np.stack([i[acc], j[acc]], axis=1))
            have += acc.size
        if drawn >= PROBE_WINDOW and have < MIN_ACCEPT_RATE * drawn:
            raise SaturationError(
                f"only {have} of {drawn} random pairs were disconnected; the graph is nearly complete"
            )
    return np.concatenate(chunks)[:n]


def epoch_batches(pools: EdgePools, batch_size: int = 200, epoch_seed=0, n_neg: int = 5,
                  with_pos: bool = True, with_disconnected: bool = True) -> Iterator[EdgeBatch]:
    """Yield one epoch of batches.

    The boundary-separation pool is shuffled and cut into chunks, so every element
    appears exactly once per epoch. Each chunk of ``b`` pairs is joined by ``b``
    contraction pairs drawn with replacement and ``n_neg * b`` disconnected pairs.
    """
    if batch_size < 1:
        raise ArgumentError(f"batch_size must be >= 1, got {batch_size}")
    if pools.e_neg.shape[0] == 0:
        raise EmptyPoolError("boundary-separation pool is empty")
    rng = np.random.default_rng(epoch_seed)
    order = rng.permutation(pools.e_neg.shape[0])
    empty = np.empty((0, 2), dtype=np.int64)
    for start in range(0, order.shape[0], batch_size):
        neg = pools.e_neg[order[start:start + batch_size]]
        b = neg.shape[0]
        pos = pools.e_pos[rng.integers(0, pools.e_pos.shape[0], size=b)] if with_pos else empty
        disc = sample_disconnected(pools, n_neg * b, rng) if with_disconnected else empty
        yield EdgeBatch(neg, pos, disc)
