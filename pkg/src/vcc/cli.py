"""Command-line interface: ``vcc {fit,evaluate,embed,boundary-score,export-plot}``.

Exit codes: 0 success, 1 runtime failure, 2 usage error.
"""

from __future__ import annotations

import argparse
import contextlib
import csv
import datetime as _dt
import hashlib
import json
import logging
import os
import sys
import tempfile

import numpy as np

from . import __version__
from .dataset import Dataset, load_csv, load_idx, load_labels
from .errors import ArgumentError, DimensionError, LengthError, ShapeError, VCCError
from .graph import boundary_scores, knn_distances
from .loss import assignment_q
from .metrics import evaluate
from .trainer import TrainConfig, embed, fit, load_checkpoint, load_config

log = logging.getLogger("vcc")

# CLI flag -> TrainConfig field
OVERRIDES = {
    "k": "k_clusters",
    "m": "m_neighbors",
    "latent_dim": "latent_dim",
    "hidden_dims": "hidden_dims",
    "epochs": "epochs",
    "batch_size": "batch_size",
    "lr": "learning_rate",
    "momentum": "momentum",
    "weight_decay": "weight_decay",
    "gamma": "gamma",
    "n_neg": "n_neg",
    "center_init_epoch": "center_init_epoch",
    "clamp_eps": "clamp_eps",
    "multiplicity_cap": "multiplicity_cap",
    "dtype": "dtype",
    "seed": "seed",
}


# -- helpers -----------------------------------------------------------------

def _sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _atomic_write_text(path, text: str) -> None:
    d = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=d, suffix=".tmp")
    with os.fdopen(fd, "w") as fh:
        fh.write(text)
    os.replace(tmp, path)


def _now() -> str:
    return _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds")


def read_dataset(args) -> Dataset:
    if args.format == "idx":
        return load_idx(args.input, args.labels)
    data = load_csv(args.input, has_labels=args.labels_in_last_column)
    if args.labels is not None:
        if args.labels_in_last_column:
            raise ArgumentError("use either --labels or --labels-in-last-column, not both")
        labels = load_labels(args.labels)
        if labels.shape[0] != data.n:
            raise LengthError(f"{data.n} samples but {labels.shape[0]} labels")
        data = Dataset(data.features, labels=labels)
    return data


def write_embeddings(path, ids, H, assignments=None) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        header = ["id"] + [f"h{c + 1}" for c in range(H.shape[1])]
        if assignments is not None:
            header.append("assignment")
        w.writerow(header)
        for k in range(H.shape[0]):
            row = [ids[k]] + [repr(float(v)) for v in H[k]]
            if assignments is not None:
                row.append(int(assignments[k]))
            w.writerow(row)


def read_embeddings(path):
    """Return ``(ids, H, assignments_or_None)`` from an embeddings CSV."""
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise ShapeError(f"{path}: empty embeddings file")
    header = rows[0]
    hcols = [c for c, name in enumerate(header) if name.startswith("h") and name[1:].isdigit()]
    if not hcols:
        raise ShapeError(f"{path}: no h1..hd columns in header {header}")
    body = rows[1:]
    ids = [r[0] for r in body]
    H = np.array([[float(r[c]) for c in hcols] for r in body], dtype=np.float64).reshape(len(body), len(hcols))
    assignments = None
    if "assignment" in header:
        a = header.index("assignment")
        assignments = np.array([int(r[a]) for r in body], dtype=np.int64)
    return ids, H, assignments


def resolve_config(args) -> TrainConfig:
    values = load_config(args.config) if args.config else {}
    for flag, name in OVERRIDES.items():
        v = getattr(args, flag, None)
        if v is not None:
            values[name] = v
    if args.no_contraction:
        values["enable_contraction"] = False
    if args.no_expansion:
        values["enable_expansion"] = False
    return TrainConfig.from_dict(values)


# -- subcommands -------------------------------------------------------------

def cmd_fit(args) -> int:
    cfg = resolve_config(args)
    data = read_dataset(args)
    out = args.out_dir
    os.makedirs(out, exist_ok=True)
    paths = {
        "embeddings": os.path.join(out, "embeddings.csv"),
        "loss_log": os.path.join(out, "loss_log.jsonl"),
        "checkpoint": args.checkpoint_out or os.path.join(out, "checkpoint.npz"),
    }
    if data.labels is not None:
        paths["metrics"] = os.path.join(out, "metrics.json")
    if args.dump_graph:
        paths["graph"] = args.dump_graph
    inputs = [p for p in (args.input, args.labels, args.checkpoint_in, args.config) if p]
    manifest = {
        "command": "fit",
        "software": {"name": "vcc", "version": __version__},
        "config": cfg.to_dict(),
        "inputs": {p: _sha256(p) for p in inputs},
        "outputs": paths,
        "started": _now(),
        "status": "running",
    }
    manifest_path = os.path.join(out, "manifest.json")
    _atomic_write_text(manifest_path, json.dumps(manifest, indent=2))
    if os.path.exists(paths["loss_log"]) and not args.checkpoint_in:
        os.remove(paths["loss_log"])

    resume = load_checkpoint(args.checkpoint_in) if args.checkpoint_in else None
    result = fit(data, cfg, resume=resume, checkpoint_path=paths["checkpoint"], log_path=paths["loss_log"])
    if resume is not None and not os.path.exists(paths["loss_log"]):
        open(paths["loss_log"], "w").close()

    write_embeddings(paths["embeddings"], data.sample_ids, result.H, result.assignments)
    if args.dump_graph:
        result.graph.to_csv(args.dump_graph)
    if result.metrics is not None:
        _atomic_write_text(paths["metrics"], json.dumps(result.metrics, indent=2))
        print(json.dumps(result.metrics))

    manifest.update(status="complete", finished=_now())
    _atomic_write_text(manifest_path, json.dumps(manifest, indent=2))
    return 0


def cmd_evaluate(args) -> int:
    _, _, pred = read_embeddings(args.embeddings)
    if pred is None:
        raise ShapeError(f"{args.embeddings}: no assignment column")
    if args.input:
        truth = read_dataset(args).labels
        if truth is None:
            raise ArgumentError("--input given without labels (use --labels-in-last-column or --labels)")
    elif args.labels:
        truth = load_labels(args.labels)
    else:
        raise ArgumentError("evaluate needs ground truth: --labels or --input with labels")
    record = evaluate(pred, truth).record()
    print(json.dumps(record))
    os.makedirs(args.out_dir, exist_ok=True)
    _atomic_write_text(os.path.join(args.out_dir, "metrics.json"), json.dumps(record, indent=2))
    return 0


def cmd_embed(args) -> int:
    ckpt = load_checkpoint(args.checkpoint_in)
    data = read_dataset(args)
    H = embed(ckpt.encoder, data.features.astype(ckpt.encoder.dtype))
    assignments = None
    if ckpt.centers is not None:
        assignments = assignment_q(H, ckpt.centers).argmax(axis=1)
    os.makedirs(args.out_dir, exist_ok=True)
    path = args.output or os.path.join(args.out_dir, "embeddings.csv")
    write_embeddings(path, data.sample_ids, H, assignments)
    return 0


def cmd_boundary_score(args) -> int:
    data = read_dataset(args)
    nbr, D = knn_distances(data, args.m)
    scores = boundary_scores(nbr, D)
    os.makedirs(args.out_dir, exist_ok=True)
    path = args.output or os.path.join(args.out_dir, "boundary_scores.csv")
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["id", "score"])
        for i, s in zip(data.sample_ids, scores):
            w.writerow([i, repr(float(s))])
    return 0


def cmd_export_plot(args) -> int:
    ids, H, assignments = read_embeddings(args.embeddings)
    if args.render and H.shape[1] != 2:
        raise DimensionError(f"can only render 2-D embeddings, got d={H.shape[1]}")
    os.makedirs(args.out_dir, exist_ok=True)
    if args.csv_only or not args.render:
        path = os.path.join(args.out_dir, "plot.csv")
        write_embeddings(path, ids, H, assignments)
    if args.render:
        import matplotlib
        matplotlib.use("Agg")
        import matplotlib.pyplot as plt

        fig, ax = plt.subplots(figsize=(6, 6), dpi=args.dpi)
        c = assignments if assignments is not None else "k"
        ax.scatter(H[:, 0], H[:, 1], c=c, s=4, cmap="tab10" if assignments is not None else None, linewidths=0)
        ax.set_xticks([])
        ax.set_yticks([])
        ax.set_aspect("equal", adjustable="datalim")
        fig.tight_layout()
        fig.savefig(args.image or os.path.join(args.out_dir, "embedding.png"))
        plt.close(fig)
    return 0


# -- parser ------------------------------------------------------------------

def _add_input(p, required=True):
    p.add_argument("--input", required=required, help="feature file (CSV or IDX images)")
    p.add_argument("--format", choices=("csv", "idx"), default="csv")
    p.add_argument("--labels", help="label file (IDX labels or one integer per line)")
    p.add_argument("--labels-in-last-column", action="store_true",
                   help="CSV input: last column holds integer labels")


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="flat JSON file with TrainConfig keys")
    common.add_argument("--seed", type=int)
    common.add_argument("--out-dir", default=".")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="vcc", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"vcc {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("fit", parents=[common], help="train and cluster")
    parser.fit_parser = p
    _add_input(p)
    p.add_argument("--k", type=int, help="number of clusters")
    p.add_argument("--m", type=int, help="nearest neighbours in the latent graph")
    p.add_argument("--latent-dim", type=int)
    p.add_argument("--hidden-dims", type=lambda s: [int(x) for x in s.split(",")],
                   help="comma-separated hidden layer widths, e.g. 500,500,2000")
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--momentum", type=float)
    p.add_argument("--weight-decay", type=float)
    p.add_argument("--gamma", type=float)
    p.add_argument("--n-neg", type=int)
    p.add_argument("--center-init-epoch", type=int)
    p.add_argument("--clamp-eps", type=float)
    p.add_argument("--multiplicity-cap", type=int)
    p.add_argument("--dtype", choices=("float32", "float64"))
    p.add_argument("--no-contraction", action="store_true")
    p.add_argument("--no-expansion", action="store_true")
    p.add_argument("--dump-graph", help="write latent graph edges as CSV (i,j,weight)")
    p.add_argument("--checkpoint-out")
    p.add_argument("--checkpoint-in", help="resume training from this checkpoint")
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("evaluate", parents=[common], help="score assignments against labels")
    p.add_argument("--embeddings", required=True, help="embeddings CSV with an assignment column")
    _add_input(p, required=False)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("embed", parents=[common], help="embed data with a trained checkpoint")
    _add_input(p)
    p.add_argument("--checkpoint-in", required=True)
    p.add_argument("--output")
    p.set_defaults(func=cmd_embed)

    p = sub.add_parser("boundary-score", parents=[common], help="neighbour-distance variance per sample")
    _add_input(p)
    p.add_argument("--m", type=int, default=10)
    p.add_argument("--output")
    p.set_defaults(func=cmd_boundary_score)

    p = sub.add_parser("export-plot", parents=[common], help="scatter image and/or plot-ready CSV")
    p.add_argument("--embeddings", required=True)
    p.add_argument("--render", action="store_true", help="render a PNG (2-D embeddings only)")
    p.add_argument("--csv-only", action="store_true")
    p.add_argument("--image", help="PNG path (default <out-dir>/embedding.png)")
    p.add_argument("--dpi", type=int, default=120)
    p.set_defaults(func=cmd_export_plot)
    return parser


def _thread_limit():
    n = os.environ.get("VCC_THREADS")
    if not n:
        return contextlib.nullcontext()
    from threadpoolctl import threadpool_limits
    return threadpool_limits(limits=int(n))


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command == "fit" and args.k is None:
        cfg_has_k = False
        if args.config:
            try:
                cfg_has_k = "k_clusters" in load_config(args.config)
            except (OSError, ValueError, VCCError):
                cfg_has_k = False
        if not cfg_has_k:
            parser.fit_parser.error("the number of clusters is required: pass --k or set k_clusters in --config")
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(levelname)s %(message)s")
    try:
        with _thread_limit():
            return args.func(args)
    except (VCCError, OSError, ValueError) as exc:
        print(f"vcc {args.command}: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
