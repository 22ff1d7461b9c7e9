import csv
import json

import numpy as np
import pytest

from vcc.cli import main, read_embeddings
from vcc.dataset import make_blobs, save_csv

FAST = ["--hidden-dims", "16,16", "--epochs", "2", "--center-init-epoch", "1", "--batch-size", "64", "--m", "5"]


@pytest.fixture(scope="module")
def blob_csv(tmp_path_factory):
    path = tmp_path_factory.mktemp("data") / "blobs.csv"
    save_csv(make_blobs(30, 3, 4, 1.0, 10.0, 0), path)
    return path


@pytest.fixture(scope="module")
def fitted(blob_csv, tmp_path_factory):
    out = tmp_path_factory.mktemp("run")
    code = main(["fit", "--input", str(blob_csv), "--labels-in-last-column", "--k", "3", "--out-dir", str(out),
                 "--dump-graph", str(out / "graph.csv"), *FAST])
    assert code == 0
    return out


def _rows(path):
    with open(path, newline="") as fh:
        return list(csv.reader(fh))


def test_fit_outputs(fitted, capsys):
    rows = _rows(fitted / "embeddings.csv")
    assert rows[0] == ["id", "h1", "h2", "assignment"]
    assert len(rows) == 91
    log = [json.loads(line) for line in (fitted / "loss_log.jsonl").read_text().splitlines()]
    assert [r["epoch"] for r in log] == [1, 2]
    metrics = json.loads((fitted / "metrics.json").read_text())
    assert 0 <= metrics["acc"] <= 1 and metrics["N"] == 90
    assert (fitted / "checkpoint.npz").exists()
    assert _rows(fitted / "graph.csv")[0] == ["i", "j", "weight"]


def test_manifest(fitted, blob_csv):
    m = json.loads((fitted / "manifest.json").read_text())
    assert m["status"] == "complete" and m["command"] == "fit"
    assert m["config"]["k_clusters"] == 3 and m["config"]["epochs"] == 2
    assert list(m["inputs"]) == [str(blob_csv)] and len(m["inputs"][str(blob_csv)]) == 64


def test_missing_k_is_usage_error(blob_csv, tmp_path):
    with pytest.raises(SystemExit) as exc:
        main(["fit", "--input", str(blob_csv), "--out-dir", str(tmp_path)])
    assert exc.value.code == 2


def test_k_from_config(blob_csv, tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"k_clusters": 3, "epochs": 1, "hidden_dims": [8]}))
    assert main(["fit", "--input", str(blob_csv), "--labels-in-last-column", "--config", str(cfg),
                 "--out-dir", str(tmp_path / "o")]) == 0
    assert json.loads((tmp_path / "o" / "manifest.json").read_text())["config"]["hidden_dims"] == [8]


def test_nan_input_exits_one(tmp_path, capsys):
    bad = tmp_path / "bad.csv"
    bad.write_text("1,2\n3,nan\n4,5\n")
    assert main(["fit", "--input", str(bad), "--k", "2", "--out-dir", str(tmp_path)]) == 1
    assert "row 2" in capsys.readouterr().err


def test_missing_input_exits_one(tmp_path):
    assert main(["boundary-score", "--input", str(tmp_path / "nope.csv"), "--out-dir", str(tmp_path)]) == 1


def test_boundary_score(blob_csv, tmp_path):
    assert main(["boundary-score", "--input", str(blob_csv), "--labels-in-last-column", "--m", "4",
                 "--out-dir", str(tmp_path)]) == 0
    rows = _rows(tmp_path / "boundary_scores.csv")
    assert rows[0] == ["id", "score"] and len(rows) == 91
    assert all(float(r[1]) >= 0 for r in rows[1:])


def test_evaluate(fitted, blob_csv, tmp_path, capsys):
    assert main(["evaluate", "--embeddings", str(fitted / "embeddings.csv"), "--input", str(blob_csv),
                 "--labels-in-last-column", "--out-dir", str(tmp_path)]) == 0
    printed = json.loads(capsys.readouterr().out.strip().splitlines()[-1])
    assert printed == json.loads((tmp_path / "metrics.json").read_text())
    assert printed == json.loads((fitted / "metrics.json").read_text())


def test_evaluate_needs_truth(fitted, tmp_path):
    assert main(["evaluate", "--embeddings", str(fitted / "embeddings.csv"), "--out-dir", str(tmp_path)]) == 1


def test_embed_reproduces_fit(fitted, blob_csv, tmp_path):
    assert main(["embed", "--input", str(blob_csv), "--labels-in-last-column",
                 "--checkpoint-in", str(fitted / "checkpoint.npz"), "--out-dir", str(tmp_path)]) == 0
    _, H, a = read_embeddings(tmp_path / "embeddings.csv")
    _, H0, a0 = read_embeddings(fitted / "embeddings.csv")
    np.testing.assert_allclose(H, H0, rtol=1e-6, atol=1e-6)
    np.testing.assert_array_equal(a, a0)


def test_resume_extends_run(fitted, blob_csv, tmp_path):
    assert main(["fit", "--input", str(blob_csv), "--labels-in-last-column", "--k", "3", "--out-dir", str(tmp_path),
                 "--checkpoint-in", str(fitted / "checkpoint.npz"), *FAST, "--epochs", "3"]) == 0
    log = [json.loads(line) for line in (tmp_path / "loss_log.jsonl").read_text().splitlines()]
    assert [r["epoch"] for r in log] == [3]


def test_export_plot_render(fitted, tmp_path):
    assert main(["export-plot", "--embeddings", str(fitted / "embeddings.csv"), "--render",
                 "--out-dir", str(tmp_path)]) == 0
    assert (tmp_path / "embedding.png").read_bytes()[:8] == b"\x89PNG\r\n\x1a\n"


def test_export_plot_csv_only(fitted, tmp_path):
    assert main(["export-plot", "--embeddings", str(fitted / "embeddings.csv"), "--csv-only",
                 "--out-dir", str(tmp_path)]) == 0
    assert _rows(tmp_path / "plot.csv") == _rows(fitted / "embeddings.csv")


def test_export_plot_rejects_high_dimensional(tmp_path, capsys):
    path = tmp_path / "e.csv"
    rows = [["id"] + [f"h{c}" for c in range(1, 11)] + ["assignment"]] + [[str(i)] + ["0.5"] * 10 + ["0"]
                                                                          for i in range(5)]
    with open(path, "w", newline="") as fh:
        csv.writer(fh).writerows(rows)
    assert main(["export-plot", "--embeddings", str(path), "--render", "--out-dir", str(tmp_path)]) == 1
    assert "d=10" in capsys.readouterr().err
    assert main(["export-plot", "--embeddings", str(path), "--csv-only", "--out-dir", str(tmp_path)]) == 0
