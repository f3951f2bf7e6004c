import json

import pytest

from attribmmf.cli import EXIT_DATA, EXIT_OK, EXIT_USAGE, main, split_overrides, UsageError

FAST = {
    "seed": 1,
    "synth": {"groups": 3, "reports_per_group": 8, "iocs_per_report": [5, 8]},
    "node2vec": {"walk_length": 10, "walks_per_node": 2, "epochs": 1},
    "model": {"heads": 2, "head_dim": 4, "semantic_dim": 8},
    "train": {"max_epochs": 5, "patience": 5},
}


@pytest.fixture
def cfg_path(tmp_path):
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps(FAST))
    return path


@pytest.fixture
def pipeline(tmp_path, cfg_path):
    """Run synth, ingest, encode and train once; return the artifact paths."""
    c = ["--config", str(cfg_path), "--deterministic"]
    d = tmp_path / "run"
    assert main(["synth", "--out", str(d), *c]) == EXIT_OK
    assert main(["ingest", "--reports", str(d / "reports.jsonl"), "--enrichment", str(d / "enrichment.json"),
                 "--out", str(d / "graph.json"), *c]) == EXIT_OK
    assert main(["encode", "--graph", str(d / "graph.json"), "--out", str(d / "features.bin"), *c]) == EXIT_OK
    assert main(["train", "--graph", str(d / "graph.json"), "--features", str(d / "features.bin"),
                 "--out", str(d / "model"), *c]) == EXIT_OK
    return d, c


def test_version(capsys):
    with pytest.raises(SystemExit) as info:
        main(["--version"])
    assert info.value.code == 0
    assert "graph.json v1" in capsys.readouterr().out


def test_full_chain(pipeline, capsys):
    d, c = pipeline
    assert (d / "features.index.json").exists()
    assert (d / "model" / "checkpoint.bin").exists()
    assert len((d / "model" / "metrics.jsonl").read_text().splitlines()) == 5
    split = json.loads((d / "model" / "split.json").read_text())
    assert set(split) == {"train", "val", "test"}
    common = ["--graph", str(d / "graph.json"), "--features", str(d / "features.bin"),
              "--checkpoint", str(d / "model" / "checkpoint.bin")]
    capsys.readouterr()
    assert main(["evaluate", *common, *c]) == EXIT_OK
    out = capsys.readouterr().out.split()
    assert out[0] == "micro_f1" and out[2] == "macro_f1"
    assert 0.0 <= float(out[1]) <= 1.0
    report = split["test"][0]
    assert main(["explain", *common, "--report", report, "--out", str(d / "ex.json"), *c]) == EXIT_OK
    record = json.loads((d / "ex.json").read_text())
    assert record["report"] == report
    assert abs(sum(record["semantic_weights"].values()) - 1) < 1e-6


def test_ablate_rows(pipeline):
    d, c = pipeline
    out = d / "abl.csv"
    assert main(["ablate", "--suite", "features", "--rows", "MAT", "--graph", str(d / "graph.json"),
                 "--features", str(d / "features.bin"), "--out", str(out), *c]) == EXIT_OK
    lines = out.read_text().splitlines()
    assert lines[0] == "config,micro_f1,macro_f1,epochs,seconds" and lines[1].startswith("MAT,")
    assert main(["ablate", "--suite", "features", "--rows", "NOPE", "--graph", str(d / "graph.json"),
                 "--features", str(d / "features.bin"), "--out", str(out), *c]) == EXIT_USAGE


def test_explain_unknown_report_is_data_error(pipeline):
    d, c = pipeline
    rc = main(["explain", "--graph", str(d / "graph.json"), "--features", str(d / "features.bin"),
               "--checkpoint", str(d / "model" / "checkpoint.bin"), "--report", "report:nope", *c])
    assert rc == EXIT_DATA


def test_override_changes_checkpoint_shape(pipeline):
    d, c = pipeline
    rc = main(["evaluate", "--graph", str(d / "graph.json"), "--features", str(d / "features.bin"),
               "--checkpoint", str(d / "model" / "checkpoint.bin"), *c, "--model.heads", "3"])
    assert rc == EXIT_DATA


def test_usage_errors(tmp_path, cfg_path):
    with pytest.raises(SystemExit) as info:
        main(["evaluate", "--graph", "g.json", "--features", "f.bin"])
    assert info.value.code == EXIT_USAGE
    with pytest.raises(SystemExit) as info:
        main(["frobnicate"])
    assert info.value.code == EXIT_USAGE
    assert main(["synth", "--out", str(tmp_path / "x"), "--model.nonsense", "1"]) == EXIT_USAGE
    assert main(["synth", "--out", str(tmp_path / "x"), "--threads", "0"]) == EXIT_USAGE


def test_missing_inputs_are_data_errors(tmp_path):
    assert main(["encode", "--graph", str(tmp_path / "missing.json"), "--out", str(tmp_path / "f.bin")]) == EXIT_DATA
    assert main(["synth", "--out", str(tmp_path), "--config", str(tmp_path / "nope.json")]) == EXIT_DATA
    bad = tmp_path / "graph.json"
    bad.write_text("{not json")
    assert main(["encode", "--graph", str(bad), "--out", str(tmp_path / "f.bin")]) == EXIT_DATA


def test_split_overrides():
    assert split_overrides(["--train.learning_rate", "0.1", "--model.dropout=0.5"]) == {
        "train.learning_rate": "0.1", "model.dropout": "0.5"}
    with pytest.raises(UsageError):
        split_overrides(["--train.learning_rate"])
    with pytest.raises(UsageError):
        split_overrides(["stray"])
    with pytest.raises(UsageError):
        split_overrides(["--train.nope", "1"])
