import json

import pandas as pd

from cli import main
from services.bundle import LOCK_FILE, MANIFEST_FILE

SHORT_TRAINING = ["--max-epochs", "2", "--eval-every", "1", "--patience", "5", "--lr-schedule", "1e-3", "--batch-clouds", "4"]


def _manifest(directory):
    return json.loads((directory / MANIFEST_FILE).read_text())


def _checksums(directory):
    return {entry["path"]: entry["sha256"] for entry in _manifest(directory)["files"]}


def _generate(directory, *extra):
    return main(["generate", "mushroom", "--n", "20", "--m", "10", "--sigma", "0.05", "--seed", "1", "--out", str(directory), *extra])


def test_generate_is_reproducible(tmp_path):
    assert _generate(tmp_path / "a") == 0
    assert _generate(tmp_path / "b") == 0
    assert (tmp_path / "a" / "dataset.npz").exists()
    assert not (tmp_path / "a" / LOCK_FILE).exists()
    first, second = _checksums(tmp_path / "a"), _checksums(tmp_path / "b")
    assert first == second
    assert "dataset.npz" in first
    assert _manifest(tmp_path / "a")["arguments"]["n"] == 20


def test_usage_errors_exit_with_two(tmp_path, capsys):
    missing = tmp_path / "missing.npz"
    assert main(["train", "--dataset", str(missing), "--out", str(tmp_path / "model")]) == 2
    assert "missing.npz" in capsys.readouterr().out
    assert main(["no-such-command"]) == 2
    assert main(["generate", "mushroom", "--n", "0", "--out", str(tmp_path / "bad")]) == 2


def test_locked_output_fails(tmp_path):
    out = tmp_path / "locked"
    out.mkdir()
    (out / LOCK_FILE).write_text("0")
    assert _generate(out) == 1


def test_train_embed_decode_and_evaluate(tmp_path):
    data, model = tmp_path / "data", tmp_path / "model"
    assert _generate(data) == 0
    dataset = str(data / "dataset.npz")
    assert main(["train", "--dataset", dataset, "--out", str(model), *SHORT_TRAINING]) == 0
    for name in ("encoder.npz", "decoder.npz", "training.json", "loss_history.csv"):
        assert (model / name).exists()

    assert main(["embed", "--model", str(model), "--input", dataset, "--out", str(tmp_path / "codes")]) == 0
    codes = pd.read_csv(tmp_path / "codes" / "codes.csv")
    assert list(codes.columns) == ["index", "coord_1", "coord_2"]
    assert len(codes) == 20

    codes_csv = str(tmp_path / "codes" / "codes.csv")
    assert main(["decode", "--model", str(model), "--input", codes_csv, "--out", str(tmp_path / "points")]) == 0
    assert pd.read_csv(tmp_path / "points" / "points.csv").shape == (20, 3)

    evaluation = tmp_path / "evaluation"
    assert main(["evaluate", "--embedding", codes_csv, "--dataset", dataset, "--scaled", "--scatter-pairs", "50", "--out", str(evaluation)]) == 0
    report = json.loads((evaluation / "evaluation.json").read_text())
    assert report["stress"]["n_pairs_used"] == 400
    assert "calibration" in report
    assert len(pd.read_csv(evaluation / "scatter.csv")) == 50


def test_baselines(tmp_path):
    data = tmp_path / "data"
    assert _generate(data) == 0
    for kind in ("dm", "adm"):
        out = tmp_path / kind
        assert main(["baseline", kind, "--dataset", str(data / "dataset.npz"), "--out", str(out)]) == 0
        assert pd.read_csv(out / f"{kind}_embedding.csv").shape == (20, 3)
        spectrum = json.loads((out / f"{kind}_spectrum.json").read_text())
        assert spectrum["eigenvalues"][0] == 1.0


def test_lemma1_experiment_is_deterministic(tmp_path):
    assert main(["experiment", "lemma1", "--out", str(tmp_path / "a")]) == 0
    assert main(["experiment", "lemma1", "--out", str(tmp_path / "b")]) == 0
    first = (tmp_path / "a" / "results.json").read_bytes()
    assert first == (tmp_path / "b" / "results.json").read_bytes()
    results = json.loads(first)
    assert results["status"] == "ok"
    assert len(pd.read_csv(tmp_path / "a" / "lemma1.csv")) == 7


def test_small_mushroom_experiment(tmp_path):
    args = ["experiment", "mushroom", "--n", "30", "--m", "10", "--sigma", "0.05", *SHORT_TRAINING]
    assert main([*args, "--out", str(tmp_path / "a")]) == 0
    assert main([*args, "--out", str(tmp_path / "b")]) == 0
    first = json.loads((tmp_path / "a" / "results.json").read_text())
    assert first == json.loads((tmp_path / "b" / "results.json").read_text())
    assert set(first["results"]) == {"loca", "dm", "adm"}
    assert first["results"]["loca"]["scale_applied"] == 1.0
    assert first["results"]["dm"]["n_pairs_used"] == 900
    assert _checksums(tmp_path / "a") == _checksums(tmp_path / "b")


def test_failed_stage_is_recorded(tmp_path):
    """Two lattice points fall in the band: too few clouds for a minibatch"""
    out = tmp_path / "sphere"
    assert main(["experiment", "sphere", "--n-lattice", "3", "--m", "5", "--out", str(out)]) == 2
    results = json.loads((out / "results.json").read_text())
    assert results["status"] == "failed"
    assert results["failed_stage"] == "train"
    manifest = _manifest(out)
    assert manifest["status"] == "failed"
    assert manifest["failed_stage"] == "train"
    assert (out / "dataset.npz").exists()


def test_dim_sweep_on_a_dataset(tmp_path):
    data, out = tmp_path / "data", tmp_path / "sweep"
    assert _generate(data) == 0
    args = ["dim-sweep", "--dataset", str(data / "dataset.npz"), "--d-max", "2", "--out", str(out)]
    assert main([*args, *SHORT_TRAINING]) == 0
    report = json.loads((out / "dim_sweep.json").read_text())
    assert report["burst_rank"] == 2
    assert set(report["scores"]) == {"1", "2"}
    assert report["selected_dim"] in (1, 2)
    assert report["rule"] == "raw_loss"
    assert report["selected_dim"] == report["raw_loss_dim"]
    assert report["rank_score_dim"] in (1, 2)
    assert _manifest(out)["arguments"]["d_max"] == 2
