"""End-to-end training loop: graph, pools, embedding losses, then self-training of centers."""

from __future__ import annotations

import dataclasses
import json
import logging
import os
import tempfile
from dataclasses import dataclass, field
from typing import Callable, List, Optional, Tuple

import numpy as np

from . import __version__
from .dataset import Dataset
from .errors import ArgumentError, DegenerateError, FormatError, NonFiniteError, ShapeError
from .graph import METRICS, LatentGraph, build_latent_graph
from .loss import ClusterState, LossBreakdown, assignment_q, combined_loss
from .metrics import evaluate
from .nn import (DEFAULT_HIDDEN, EncoderState, OptimizerConfig, backward, encoder_dims, forward,
                 init_params, momentum_update, sgd_step)
from .sampling import EdgePools, build_pools, epoch_batches

log = logging.getLogger(__name__)

CHECKPOINT_VERSION = 1


@dataclass
class TrainConfig:
    k_clusters: int = 2
    m_neighbors: int = 10
    latent_dim: int = 2
    hidden_dims: Tuple[int, ...] = DEFAULT_HIDDEN
    epochs: int = 7
    batch_size: int = 200
    learning_rate: float = 0.01
    momentum: float = 0.9
    weight_decay: float = 0.0005
    gamma: float = 0.01
    n_neg: int = 5
    center_init_epoch: int = 5
    seed: int = 0
    clamp_eps: float = 1e-4
    enable_contraction: bool = True
    enable_expansion: bool = True
    multiplicity_cap: int = 10_000
    metric: str = "euclidean"
    dtype: str = "float32"

    def __post_init__(self):
        self.hidden_dims = tuple(int(h) for h in self.hidden_dims)
        if self.k_clusters < 2:
            raise ArgumentError(f"k_clusters must be >= 2, got {self.k_clusters}")
        if self.epochs < 1:
            raise ArgumentError(f"epochs must be >= 1, got {self.epochs}")
        if self.center_init_epoch < 1:
            raise ArgumentError(f"center_init_epoch must be >= 1, got {self.center_init_epoch}")
        if self.m_neighbors < 1 or self.latent_dim < 1 or self.batch_size < 1 or self.n_neg < 0:
            raise ArgumentError("m_neighbors, latent_dim and batch_size must be >= 1, n_neg >= 0")
        if not 0 < self.clamp_eps < 0.5:
            raise ArgumentError(f"clamp_eps must be in (0, 0.5), got {self.clamp_eps}")
        if self.metric not in METRICS:
            raise ArgumentError(f"unsupported metric {self.metric!r}")
        if self.dtype not in ("float32", "float64"):
            raise ArgumentError(f"dtype must be float32 or float64, got {self.dtype!r}")
        self.optimizer  # validates lr / momentum / weight decay

    @property
    def optimizer(self) -> OptimizerConfig:
        return OptimizerConfig(self.learning_rate, self.momentum, self.weight_decay)

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["hidden_dims"] = list(self.hidden_dims)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(d) - names)
        if unknown:
            raise ArgumentError(f"unknown config keys: {', '.join(unknown)}")
        return cls(**d)


def load_config(path) -> dict:
    """Flat JSON object whose keys are TrainConfig field names."""
    with open(path) as fh:
        d = json.load(fh)
    if not isinstance(d, dict) or any(isinstance(v, dict) for v in d.values()):
        raise FormatError(f"{path}: config must be a flat JSON object")
    return d


@dataclass
class EpochRecord:
    epoch: int
    losses: LossBreakdown
    num_batches: int
    metrics: Optional[dict] = None

    def as_dict(self) -> dict:
        d = {"epoch": self.epoch, **self.losses.as_dict(), "batches": self.num_batches}
        if self.metrics:
            d.update(self.metrics)
        return d


@dataclass
class Checkpoint:
    encoder: EncoderState
    centers: Optional[np.ndarray]
    center_velocity: Optional[np.ndarray]
    epoch: int
    history: List[EpochRecord]
    config: dict


@dataclass
class RunResult:
    H: np.ndarray
    centers: np.ndarray
    assignments: np.ndarray
    history: List[EpochRecord]
    encoder: EncoderState
    graph: LatentGraph = field(repr=False)
    Q: Optional[np.ndarray] = None
    metrics: Optional[dict] = None

    @property
    def loss_history(self) -> List[LossBreakdown]:
        return [r.losses for r in self.history]


# -- centers -----------------------------------------------------------------

def _sq_dists(X, C):
    return np.maximum((X ** 2).sum(1)[:, None] + (C ** 2).sum(1)[None, :] - 2.0 * X @ C.T, 0.0)


def kmeans_plusplus(X, k, rng) -> np.ndarray:
    n = X.shape[0]
    idx = [int(rng.integers(n))]
    closest = _sq_dists(X, X[idx]).ravel()
    for _ in range(1, k):
        total = closest.sum()
        if total <= 0:
            raise DegenerateError("fewer distinct points than clusters")
        nxt = int(rng.choice(n, p=closest / total))
        idx.append(nxt)
        closest = np.minimum(closest, ((X - X[nxt]) ** 2).sum(1))
    return X[idx].copy()


def lloyd_objective(X, C) -> float:
    return float(_sq_dists(X, C).min(axis=1).sum())


def init_centers(H, k: int, seed=0, max_iter: int = 50, history: Optional[list] = None) -> np.ndarray:
    """k-means++ seeding refined by at most ``max_iter`` Lloyd iterations.

    If ``history`` is a list, the objective after seeding and after each
    iteration is appended to it.
    """
    H = np.asarray(H, dtype=np.float64)
    if H.shape[0] < k:
        raise DegenerateError(f"need at least {k} points, got {H.shape[0]}")
    if np.unique(H, axis=0).shape[0] < k:
        raise DegenerateError(f"fewer than {k} distinct embedding points")
    rng = np.random.default_rng(seed)
    C = kmeans_plusplus(H, k, rng)
    labels = None
    if history is not None:
        history.append(lloyd_objective(H, C))
    for _ in range(max_iter):
        new_labels = _sq_dists(H, C).argmin(axis=1)
        if labels is not None and np.array_equal(new_labels, labels):
            break
        labels = new_labels
        for j in range(k):
            members = labels == j
            if members.any():  # an emptied cluster keeps its previous center
                C[j] = H[members].mean(axis=0)
        if history is not None:
            history.append(lloyd_objective(H, C))
    return C


# -- embedding ---------------------------------------------------------------

def embed(enc: EncoderState, data, batch_size: int = 1024) -> np.ndarray:
    X = data.features if isinstance(data, Dataset) else np.asarray(data, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != enc.input_dim:
        raise ShapeError(f"encoder expects {enc.input_dim} input columns, got shape {X.shape}")
    out = np.empty((X.shape[0], enc.output_dim), dtype=np.float64)
    for s in range(0, X.shape[0], batch_size):
        out[s:s + batch_size] = forward(enc, X[s:s + batch_size])[0]
    return out


# -- checkpoints -------------------------------------------------------------

def save_checkpoint(path, ckpt: Checkpoint) -> None:
    arrays = {}
    for k, (w, b, vw, vb) in enumerate(zip(ckpt.encoder.weights, ckpt.encoder.biases,
                                           ckpt.encoder.vel_weights, ckpt.encoder.vel_biases)):
        arrays[f"W{k}"], arrays[f"b{k}"], arrays[f"vW{k}"], arrays[f"vb{k}"] = w, b, vw, vb
    if ckpt.centers is not None:
        arrays["centers"] = ckpt.centers
        arrays["center_velocity"] = ckpt.center_velocity
    meta = {
        "format": "vcc-checkpoint",
        "version": CHECKPOINT_VERSION,
        "software": __version__,
        "layer_dims": ckpt.encoder.layer_dims,
        "epoch": ckpt.epoch,
        "config": ckpt.config,
        "history": [r.as_dict() for r in ckpt.history],
    }
    arrays["meta"] = np.frombuffer(json.dumps(meta).encode(), dtype=np.uint8)
    d = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=d, suffix=".npz")
    os.close(fd)
    with open(tmp, "wb") as fh:
        np.savez(fh, **arrays)
    os.replace(tmp, path)


def load_checkpoint(path) -> Checkpoint:
    try:
        z = np.load(path)
        meta = json.loads(bytes(z["meta"]).decode())
    except (OSError, KeyError, ValueError) as exc:
        raise FormatError(f"{path}: not a vcc checkpoint ({exc})") from exc
    if meta.get("format") != "vcc-checkpoint" or meta.get("version") != CHECKPOINT_VERSION:
        raise FormatError(f"{path}: unsupported checkpoint format/version")
    n = len(meta["layer_dims"]) - 1
    enc = EncoderState(
        list(meta["layer_dims"]),
        [z[f"W{k}"] for k in range(n)], [z[f"b{k}"] for k in range(n)],
        [z[f"vW{k}"] for k in range(n)], [z[f"vb{k}"] for k in range(n)],
    )
    history = []
    for rec in meta["history"]:
        losses = LossBreakdown(rec["l_bps"], rec["l_c"], rec["l_e"], rec["l_clu"], rec["beta"])
        extra = {k: rec[k] for k in ("acc", "nmi") if k in rec}
        history.append(EpochRecord(rec["epoch"], losses, rec["batches"], extra or None))
    centers = z["centers"] if "centers" in z else None
    vel = z["center_velocity"] if "center_velocity" in z else None
    return Checkpoint(enc, centers, vel, int(meta["epoch"]), history, meta["config"])


# -- training ----------------------------------------------------------------

def _current_checkpoint(enc, cluster, epoch, history, cfg) -> Checkpoint:
    return Checkpoint(
        enc.copy(),
        None if cluster is None else cluster.centers.copy(),
        None if cluster is None else cluster.velocity.copy(),
        epoch, list(history), cfg.to_dict(),
    )


def fit(data: Dataset, cfg: TrainConfig, resume: Optional[Checkpoint] = None,
        checkpoint_path=None, log_path=None, track_metrics: bool = False,
        on_epoch: Optional[Callable[[EpochRecord], None]] = None) -> RunResult:
    """Train the encoder and cluster centers on ``data``.

    Epochs are numbered from 1. Before ``center_init_epoch`` only the embedding
    losses are active; at that epoch centers are seeded by k-means on the current
    embedding, and from then on the target ``P`` is refreshed from the full
    dataset at the start of every epoch with ``beta = gamma * epoch``.
    All randomness of epoch E derives from ``(seed, E)``, so resuming from a
    checkpoint reproduces the uninterrupted run.
    """
    X = data.features
    n = X.shape[0]
    if n <= cfg.m_neighbors:
        raise ArgumentError(f"need more than m_neighbors={cfg.m_neighbors} samples, got {n}")
    if n < cfg.k_clusters:
        raise ArgumentError(f"need at least k_clusters={cfg.k_clusters} samples, got {n}")

    graph = build_latent_graph(X, cfg.m_neighbors, cfg.metric)
    pools = build_pools(graph, cfg.multiplicity_cap, cfg.seed)
    log.info("latent graph: %d edges, f_max=%.4g f_mean=%.4g; pools |E-|=%d |E+|=%d",
             graph.num_edges, graph.f_max, graph.f_mean, pools.e_neg.shape[0], pools.e_pos.shape[0])
    return _train(data, cfg, graph, pools, resume, checkpoint_path, log_path, track_metrics, on_epoch)


def _train(data, cfg, graph, pools: EdgePools, resume, checkpoint_path, log_path, track_metrics, on_epoch):
    X = data.features
    opt = cfg.optimizer
    if resume is not None:
        enc = resume.encoder.copy()
        if enc.input_dim != X.shape[1]:
            raise ShapeError(f"checkpoint expects {enc.input_dim} features, data has {X.shape[1]}")
        history = list(resume.history)
        start = resume.epoch + 1
        cluster = None
        if resume.centers is not None:
            cluster = ClusterState(resume.centers.copy(), cfg.gamma, resume.epoch, resume.center_velocity.copy())
    else:
        dims = encoder_dims(X.shape[1], cfg.latent_dim, cfg.hidden_dims)
        enc = init_params(dims, seed=cfg.seed, dtype=np.dtype(cfg.dtype))
        history, start, cluster = [], 1, None
    X_work = X.astype(enc.dtype)

    last_good = _current_checkpoint(enc, cluster, start - 1, history, cfg)
    for epoch in range(start, cfg.epochs + 1):
        beta = 0.0
        if epoch >= cfg.center_init_epoch:
            H_full = embed(enc, X_work)
            if cluster is None:
                cluster = ClusterState(init_centers(H_full, cfg.k_clusters, seed=cfg.seed), cfg.gamma)
            cluster.epoch = epoch
            cluster.refresh_targets(H_full)
            beta = cluster.beta

        sums = np.zeros(4)
        batches = 0
        try:
            for batch in epoch_batches(pools, cfg.batch_size, (cfg.seed, epoch), cfg.n_neg,
                                       cfg.enable_contraction, cfg.enable_expansion):
                parts = (batch.neg, batch.pos, batch.disconnected)
                verts, local = np.unique(np.concatenate([p.ravel() for p in parts]), return_inverse=True)
                cuts = np.cumsum([p.size for p in parts])[:-1]
                neg_l, pos_l, disc_l = (a.reshape(-1, 2) for a in np.split(local, cuts))

                H, tape = forward(enc, X_work[verts])
                H = H.astype(np.float64)
                C = cluster.centers if cluster is not None else None
                P = cluster.P[verts] if cluster is not None else None
                losses, dH, dC = combined_loss(H, C, neg_l, pos_l, disc_l, P, beta, cfg.clamp_eps)
                sgd_step(enc, backward(enc, tape, dH, input_grad=False), opt)
                if cluster is not None:
                    c_new, v_new = momentum_update(cluster.centers, cluster.velocity, dC,
                                                   opt.learning_rate, opt.momentum)
                    if not np.all(np.isfinite(c_new)):
                        raise NonFiniteError("non-finite cluster center after update")
                    cluster.centers, cluster.velocity = c_new, v_new
                sums += (losses.l_bps, losses.l_c, losses.l_e, losses.l_clu)
                batches += 1
        except NonFiniteError as exc:
            if checkpoint_path is not None:
                save_checkpoint(checkpoint_path, last_good)
            raise NonFiniteError(f"epoch {epoch}: {exc}", last_good=last_good) from exc

        mean = sums / batches
        record = EpochRecord(epoch, LossBreakdown(*mean, beta=beta), batches)
        if track_metrics and data.labels is not None and cluster is not None:
            pred = assignment_q(embed(enc, X_work), cluster.centers).argmax(axis=1)
            rep = evaluate(pred, data.labels)
            record.metrics = {"acc": rep.acc, "nmi": rep.nmi}
        history.append(record)
        log.info("epoch %d: %s", epoch, json.dumps(record.as_dict()))
        if log_path is not None:
            with open(log_path, "a") as fh:
                fh.write(json.dumps(record.as_dict()) + "\n")
        last_good = _current_checkpoint(enc, cluster, epoch, history, cfg)
        if checkpoint_path is not None:
            save_checkpoint(checkpoint_path, last_good)
        if on_epoch is not None:
            on_epoch(record)

    H = embed(enc, X_work)
    if cluster is None:
        # training ended before clustering switched on: seed centers on the final embedding
        centers = init_centers(H, cfg.k_clusters, seed=cfg.seed)
    else:
        centers = cluster.centers
    Q = assignment_q(H, centers)
    assignments = Q.argmax(axis=1)
    report = None
    if data.labels is not None:
        report = evaluate(assignments, data.labels).record()
    return RunResult(H, centers, assignments, history, enc, graph, Q, report)
