"""Very compact clusters: graph-regularised deep embedding with self-trained centers."""

__version__ = "0.1.0"

from .dataset import Dataset, load_csv, load_idx, make_blobs, save_csv  # noqa: E402
from .graph import LatentGraph, boundary_scores, build_latent_graph  # noqa: E402
from .metrics import accuracy, evaluate, nmi  # noqa: E402
from .trainer import RunResult, TrainConfig, embed, fit, init_centers  # noqa: E402

__all__ = [
    "Dataset", "load_csv", "load_idx", "make_blobs", "save_csv",
    "LatentGraph", "boundary_scores", "build_latent_graph",
    "accuracy", "evaluate", "nmi",
    "RunResult", "TrainConfig", "embed", "fit", "init_centers",
]
