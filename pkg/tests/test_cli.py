import csv
import json
import xml.etree.ElementTree as ET

import numpy as np
import pytest

from spinegrade.cli import main
from spinegrade.classifier import ModelBundle
from spinegrade.pipeline import RunConfig
from spinegrade.errors import UsageError

SMALL = {
    "synth": {"n_samples": 60, "class_proportions": [0.5, 0.3, 0.2]},
    "refine": {"T": 5},
    "train": {"epochs": 6, "learning_rate": 0.01},
    "kfold": 3,
}


@pytest.fixture(scope="module")
def run_dir(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    cfg = root / "cfg.json"
    cfg.write_text(json.dumps({**SMALL, "out": str(root / "run")}))
    codes = {}
    for cmd in ("synth", "preprocess", "extract", "refine", "train", "evaluate", "report"):
        codes[cmd] = main([cmd, "--config", str(cfg)])
    return root / "run", cfg, codes


def test_stages_exit_zero(run_dir):
    _, _, codes = run_dir
    assert all(c == 0 for c in codes.values()), codes


def test_stage_outputs(run_dir):
    run, _, _ = run_dir
    for name in ("split.json", "features.csv", "feature_stats.json", "refine_report.json", "bundle.json",
                 "epochs.csv", "metrics.json", "per_class.csv", "roc.csv", "eval_timing.json"):
        assert (run / name).exists(), name
    metrics = json.loads((run / "metrics.json").read_text())
    assert 0.0 <= metrics["accuracy"] <= 1.0
    timing = json.loads((run / "eval_timing.json").read_text())
    assert timing["mean_inference_ns_per_image"] > 0 and "not comparable" in timing["note"]
    assert "timing" not in json.dumps(metrics)


def test_charts_parse_and_count_points(run_dir):
    run, _, _ = run_dir
    n_epochs = len(list(csv.DictReader(open(run / "epochs.csv"))))
    loss = ET.parse(run / "charts" / "loss.svg").getroot()
    lines = [e for e in loss.iter() if e.tag.endswith("polyline")]
    assert len(lines) == 2
    assert all(len(p.get("points").split()) == n_epochs for p in lines)
    for svg in (run / "charts").glob("roc_*.svg"):
        ET.parse(svg)


def test_evaluate_train_split_sanity(run_dir, capsys):
    run, cfg, _ = run_dir
    assert main(["evaluate", "--config", str(cfg), "--split", "train"]) == 0
    train_acc = json.loads((run / "metrics.json").read_text())["accuracy"]
    last = list(csv.DictReader(open(run / "epochs.csv")))[-1]
    assert train_acc >= float(last["val_accuracy"]) - 0.1


def test_stage_commands_are_idempotent(run_dir):
    run, cfg, _ = run_dir
    before = (run / "bundle.json").read_bytes()
    assert main(["train", "--config", str(cfg)]) == 0
    assert (run / "bundle.json").read_bytes() == before


def test_gridsearch_smoke(run_dir):
    run, cfg, _ = run_dir
    assert main(["gridsearch", "--config", str(cfg), "--smoke"]) == 0
    rows = list(csv.DictReader(open(run / "leaderboard.csv")))
    assert len(rows) == 1 and rows[0]["status"] == "ok"
    assert (run / "bundle_best.json").exists()


def test_crossval_and_ablation(run_dir):
    run, cfg, _ = run_dir
    assert main(["crossval", "--config", str(cfg)]) == 0
    cv = json.loads((run / "crossval.json").read_text())
    assert cv["k"] == 3 and sum(f["n"] for f in cv["folds"]) == 60
    assert main(["ablate-loss", "--config", str(cfg)]) == 0
    rows = list(csv.reader(open(run / "ablation.csv")))
    assert len(rows) == 3 and len(rows[0]) == 6


def test_missing_inputs_exit_code(tmp_path):
    assert main(["refine", "--out", str(tmp_path / "empty")]) == 2
    assert main(["evaluate", "--out", str(tmp_path / "empty2")]) == 2


def test_empty_curve_file(run_dir, tmp_path):
    run, _, _ = run_dir
    out = tmp_path / "r"
    out.mkdir()
    (out / "epochs.csv").write_text("epoch,train_loss,val_loss,val_accuracy,val_precision,val_recall,val_f1\n")
    (out / "roc.csv").write_text((run / "roc.csv").read_text())
    assert main(["report", "--out", str(out)]) == 2


def test_usage_errors(tmp_path, capsys):
    with pytest.raises(SystemExit) as exc:
        main(["no-such-command"])
    assert exc.value.code == 1
    assert main(["synth", "--config", str(tmp_path / "missing.json")]) == 1
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"mystery": 1}))
    assert main(["synth", "--config", str(bad)]) == 1


def test_version_mismatch_exit_code(run_dir, tmp_path):
    run, cfg, _ = run_dir
    obj = json.loads((run / "bundle.json").read_text())
    obj["version"] = 0
    bad = tmp_path / "old.json"
    bad.write_text(json.dumps(obj))
    assert main(["evaluate", "--config", str(cfg), "--bundle", str(bad)]) == 2


def test_seed_flag_overrides_config(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"synth": {"n_samples": 9}}))
    assert main(["synth", "--config", str(cfg), "--out", str(a), "--seed", "1"]) == 0
    assert main(["synth", "--config", str(cfg), "--out", str(b), "--seed", "2"]) == 0
    assert (a / "dataset" / "train.csv").read_bytes() != (b / "dataset" / "train.csv").read_bytes()


def test_config_rules():
    assert RunConfig().synth["n_samples"] == 300
    assert RunConfig().train.learning_rate == 0.001
    with pytest.raises(UsageError):
        RunConfig(dataset={"train_csv": "x"}, synth={"n_samples": 3})


def test_pipeline_bundle_predicts_from_raw_features(run_dir):
    run, _, _ = run_dir
    bundle = ModelBundle.load(run / "bundle.json")
    from spinegrade.features import load_features_csv
    _, X = load_features_csv(run / "features.csv")
    P = bundle.probabilities(X[:5])
    assert P.shape == (5, 3) and np.allclose(P.sum(axis=1), 1)


def test_default_pipeline_smoke(tmp_path):
    import time
    t0 = time.perf_counter()
    assert main(["pipeline", "--out", str(tmp_path / "p")]) == 0
    assert time.perf_counter() - t0 <= 60.0
    metrics = json.loads((tmp_path / "p" / "metrics.json").read_text())
    assert 0.0 <= metrics["accuracy"] <= 1.0
    manifest = json.loads((tmp_path / "p" / "run_manifest.json").read_text())
    assert all((tmp_path / "p" / f).exists() for f in manifest["files"])
    assert "bundle.json" in manifest["files"] and "finished" in manifest
