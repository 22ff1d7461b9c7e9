"""Latent kNN graph over the input features.

Each sample is linked to its ``m`` nearest neighbours (exact Euclidean search,
self excluded). A row-wise softmax over negated neighbour distances gives the
directed forces ``F``; the undirected weight of a pair is the probabilistic
union ``F_ij + F_ji - F_ij * F_ji`` with a missing direction counting as 0.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dataset import Dataset
from .errors import ArgumentError, ParseError

METRICS = ("euclidean",)


def _features(data):
    return data.features if isinstance(data, Dataset) else np.asarray(data, dtype=np.float64)


def knn_distances(data, m: int, metric: str = "euclidean", block_size: int = 512):
    """Exact m-nearest neighbours of every row.

    Returns ``(neighbor_idx, D)``, both N x m, sorted by ascending distance with
    ties going to the lower sample index. Candidates are screened with the BLAS
    expansion ``|a|^2 + |b|^2 - 2ab`` and then re-measured directly, so the
    reported distances and order do not depend on cancellation error.
    """
    if metric not in METRICS:
        raise ArgumentError(f"unsupported metric {metric!r}; available: {', '.join(METRICS)}")
    X = _features(data)
    n = X.shape[0]
    if int(m) != m or not 1 <= m <= n - 1:
        raise ArgumentError(f"m must be in [1, {n - 1}], got {m!r}")
    m = int(m)
    sq = np.einsum("ij,ij->i", X, X)
    sq_max = sq.max()
    idx = np.empty((n, m), dtype=np.int64)
    dist = np.empty((n, m), dtype=np.float64)
    for r0 in range(0, n, block_size):
        r1 = min(n, r0 + block_size)
        rows = np.arange(r0, r1)
        d2 = sq[r0:r1, None] + sq[None, :] - 2.0 * (X[r0:r1] @ X.T)
        d2[rows - r0, rows] = np.inf
        kth = np.partition(d2, m - 1, axis=1)[:, m - 1]
        slack = 1e-8 * (sq[r0:r1] + sq_max) + 1e-12
        for a, i in enumerate(rows):
            cand = np.flatnonzero(d2[a] <= kth[a] + slack[a])
            exact = np.sqrt(np.sum((X[cand] - X[i]) ** 2, axis=1))
            order = np.lexsort((cand, exact))[:m]
            idx[i] = cand[order]
            dist[i] = exact[order]
    return idx, dist


def softmax_forces(D) -> np.ndarray:
    """Row-wise softmax of ``-D`` (shifted by the row minimum to avoid overflow)."""
    D = np.asarray(D, dtype=np.float64)
    if not np.all(np.isfinite(D)):
        raise ParseError("distance matrix contains non-finite values")
    z = np.exp(-(D - D.min(axis=1, keepdims=True)))
    return z / z.sum(axis=1, keepdims=True)


def symmetrize(F, neighbor_idx):
    """Collapse directed forces into one weighted edge per unordered pair.

    Returns ``(edges, weights, f_max, f_mean)`` where ``edges`` is an E x 2 array
    with ``edges[:, 0] < edges[:, 1]``, sorted lexicographically.
    """
    F = np.asarray(F, dtype=np.float64)
    nbr = np.asarray(neighbor_idx, dtype=np.int64)
    n = nbr.shape[0]
    src = np.repeat(np.arange(n), nbr.shape[1])
    dst = nbr.ravel()
    f = F.ravel()
    keep = src != dst
    src, dst, f = src[keep], dst[keep], f[keep]
    lo = np.minimum(src, dst)
    hi = np.maximum(src, dst)
    keys, inverse = np.unique(lo * n + hi, return_inverse=True)
    forward = np.zeros(keys.shape[0])
    backward = np.zeros(keys.shape[0])
    up = src < dst
    forward[inverse[up]] = f[up]
    backward[inverse[~up]] = f[~up]
    weights = forward + backward - forward * backward
    edges = np.stack([keys // n, keys % n], axis=1)
    f_max = float(weights.max())
    # the float mean of equal weights can land one ulp above their max
    f_mean = min(float(weights.mean()), f_max)
    return edges, weights, f_max, f_mean


@dataclass(frozen=True)
class LatentGraph:
    n: int
    neighbor_idx: np.ndarray
    distances: np.ndarray
    forces: np.ndarray
    edges: np.ndarray
    weights: np.ndarray
    f_max: float
    f_mean: float

    @property
    def m(self) -> int:
        return self.neighbor_idx.shape[1]

    @property
    def num_edges(self) -> int:
        return self.edges.shape[0]

    @property
    def edge_keys(self) -> np.ndarray:
        # edges are sorted, so keys are sorted too
        return self.edges[:, 0] * self.n + self.edges[:, 1]

    def connected(self, i, j) -> np.ndarray:
        """Vectorised membership test for unordered pairs (the sign of the weight matrix)."""
        i = np.asarray(i, dtype=np.int64)
        j = np.asarray(j, dtype=np.int64)
        keys = np.minimum(i, j) * self.n + np.maximum(i, j)
        table = self.edge_keys
        pos = np.searchsorted(table, keys)
        pos = np.minimum(pos, table.shape[0] - 1)
        return (table[pos] == keys) & (i != j)

    def to_csv(self, path) -> None:
        with open(path, "w") as fh:
            fh.write("i,j,weight\n")
            for (a, b), w in zip(self.edges, self.weights):
                fh.write(f"{a},{b},{float(w)!r}\n")


def build_latent_graph(data, m: int = 10, metric: str = "euclidean") -> LatentGraph:
    X = _features(data)
    nbr, D = knn_distances(X, m, metric=metric)
    F = softmax_forces(D)
    edges, weights, f_max, f_mean = symmetrize(F, nbr)
    for a in (nbr, D, F, edges, weights):
        a.setflags(write=False)
    return LatentGraph(X.shape[0], nbr, D, F, edges, weights, f_max, f_mean)


def boundary_scores(neighbor_idx, D) -> np.ndarray:
    """Sample variance of each row of neighbour distances.

    Points near a sparse/dense transition see a wider spread of neighbour
    distances, so high scores flag likely boundary points. Rows with a single
    neighbour score 0.
    """
    D = np.asarray(D, dtype=np.float64)
    if D.shape[1] < 2:
        return np.zeros(D.shape[0])
    return D.var(axis=1, ddof=1)
