import csv
import hashlib
import subprocess
import sys

import pytest

from detscore.cli import SUBCOMMANDS, main

FAST = ["--trees", "5", "--quiet"]


def _digest(path):
    return hashlib.sha256(path.read_bytes()).hexdigest()


@pytest.fixture(scope="module")
def work(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli")
    (d / "synth.toml").write_text("n_images = 40\nlambda_fp = 2.0\np_fn = 0.3\n")
    assert main(["synth", "--config", str(d / "synth.toml"), "--seed", "3",
                 "--out", str(d / "data.json"), "--quiet"]) == 0
    assert main(["featurize", "--data", str(d / "data.json"), "--out", str(d / "feats.csv"),
                 "--with-targets", "--quiet"]) == 0
    return d


def test_help_lists_subcommands(capsys):
    assert main(["--help"]) == 0
    out = capsys.readouterr().out
    for name in SUBCOMMANDS:
        assert name in out


def test_module_entry_point():
    r = subprocess.run([sys.executable, "-m", "detscore", "--help"], capture_output=True, text=True)
    assert r.returncode == 0 and "pipeline" in r.stdout


def test_usage_errors(work, capsys):
    assert main(["train", "--features", str(work / "feats.csv"), "--bogus"]) == 1
    assert main(["frobnicate"]) == 1
    assert main([]) == 1
    assert main(["cv", "--features", str(work / "feats.csv"), "--out", str(work / "r"),
                 "--split", "random:k=1"]) == 1
    assert main(["train", "--features", str(work / "feats.csv"), "--out", str(work / "m"),
                 "--select", "avg_conf,nope"]) == 1
    assert "nope" in capsys.readouterr().err


def test_data_errors(work, tmp_path, capsys):
    assert main(["score", "--data", str(tmp_path / "missing.json"), "--out", str(tmp_path / "s")]) == 2
    bad = tmp_path / "bad.json"
    bad.write_text('{"images": [{"id": "a", "width": 10, "height": 10, '
                   '"detections": [{"bbox": [0, 0, 2, 2], "score": 1.3}]}]}')
    assert main(["score", "--data", str(bad), "--out", str(tmp_path / "s")]) == 2
    assert "score" in capsys.readouterr().err
    nolabels = tmp_path / "plain.csv"
    assert main(["featurize", "--data", str(work / "data.json"), "--out", str(nolabels), "--quiet"]) == 0
    assert main(["train", "--features", str(nolabels), "--out", str(tmp_path / "m")]) == 2


def test_grouped_single_group_exits_2(work, tmp_path, capsys):
    code = main(["cv", "--features", str(work / "feats.csv"), "--split", "grouped",
                 "--out", str(tmp_path / "r"), *FAST])
    assert code == 2
    assert "need >= 2 groups" in capsys.readouterr().err


def test_score_columns(work, tmp_path):
    assert main(["score", "--data", str(work / "data.json"), "--out", str(tmp_path / "s.csv"),
                 "--quiet"]) == 0
    rows = list(csv.DictReader(open(tmp_path / "s.csv")))
    assert len(rows) == 40
    assert list(rows[0]) == ["id", "tp", "fp", "fn", "precision", "recall", "f1"]


def test_train_predict_importance(work, tmp_path):
    model = tmp_path / "model.bin"
    assert main(["train", "--features", str(work / "feats.csv"), "--out", str(model), *FAST]) == 0
    preds = tmp_path / "p.csv"
    assert main(["predict", "--model", str(model), "--features", str(work / "feats.csv"),
                 "--out", str(preds), "--quiet"]) == 0
    lines = preds.read_text().splitlines()
    assert lines[0] == "id,predicted_f1"
    assert len(lines) == 41
    ids = [row["id"] for row in csv.DictReader(open(work / "feats.csv"))]
    assert [l.split(",")[0] for l in lines[1:]] == ids
    for method in ("mdi", "perm"):
        out = tmp_path / f"imp_{method}.csv"
        assert main(["importance", "--model", str(model), "--features", str(work / "feats.csv"),
                     "--method", method, "--repeats", "2", "--out", str(out), "--quiet"]) == 0
        assert len(out.read_text().splitlines()) == 19
    assert main(["importance", "--model", str(model), "--method", "perm",
                 "--out", str(tmp_path / "x.csv")]) == 1


def test_predict_with_selected_features(work, tmp_path):
    model = tmp_path / "model.bin"
    assert main(["train", "--features", str(work / "feats.csv"), "--out", str(model),
                 "--select", "avg_conf,counts_0.9,n_defects", "--target", "recall", *FAST]) == 0
    preds = tmp_path / "p.csv"
    assert main(["predict", "--model", str(model), "--features", str(work / "feats.csv"),
                 "--out", str(preds), "--quiet"]) == 0
    assert preds.read_text().splitlines()[0] == "id,predicted_recall"


def test_truncated_model_exits_2(work, tmp_path):
    model = tmp_path / "model.bin"
    main(["train", "--features", str(work / "feats.csv"), "--out", str(model), *FAST])
    model.write_bytes(model.read_bytes()[:50])
    assert main(["predict", "--model", str(model), "--features", str(work / "feats.csv"),
                 "--out", str(tmp_path / "p.csv")]) == 2


def test_config_file_overridden_by_flags(work, tmp_path):
    cfg = tmp_path / "run.toml"
    cfg.write_text('trees = 3\nseed = 11\nsplit = "random:k=4"\n')
    a, b, c = tmp_path / "a.bin", tmp_path / "b.bin", tmp_path / "c.bin"
    feats = str(work / "feats.csv")
    assert main(["train", "--features", feats, "--out", str(a), "--config", str(cfg), "--quiet"]) == 0
    assert main(["train", "--features", feats, "--out", str(b), "--trees", "3", "--seed", "11",
                 "--quiet"]) == 0
    assert a.read_bytes() == b.read_bytes()
    assert main(["train", "--features", feats, "--out", str(c), "--config", str(cfg),
                 "--trees", "4", "--quiet"]) == 0
    from detscore.forest import load_model
    assert len(load_model(c).trees) == 4 and load_model(c).seed == 11
    cfg.write_text("no_such_option = 1\n")
    assert main(["train", "--features", feats, "--out", str(a), "--config", str(cfg)]) == 1


def test_cv_report_and_rerun_identical(work, tmp_path):
    args = ["cv", "--features", str(work / "feats.csv"), "--split", "random:k=4,repeats=2", *FAST]
    assert main([*args, "--out", str(tmp_path / "r1")]) == 0
    assert main([*args, "--out", str(tmp_path / "r2"), "--threads", "3"]) == 0
    files = sorted(p.name for p in (tmp_path / "r1").iterdir())
    assert files == ["confusion.csv", "metrics.csv", "parity.csv", "pr_curve.csv", "sweep.csv"]
    for name in files:
        assert _digest(tmp_path / "r1" / name) == _digest(tmp_path / "r2" / name)


def test_sweep_command(work, tmp_path):
    out = tmp_path / "sweep.csv"
    assert main(["sweep", "--features", str(work / "feats.csv"), "--k-min", "5", "--k-max", "6",
                 "--split", "random:k=3", "--out", str(out), *FAST]) == 0
    rows = list(csv.DictReader(open(out)))
    assert [r["k"] for r in rows] == ["5", "6"]


def test_pipeline_deterministic_and_inputs_untouched(tmp_path):
    data = tmp_path / "bench.json"
    assert main(["synth", "--benchmark", "--shifted", "--seed", "2", "--out", str(data), "--quiet"]) == 0
    before = _digest(data)
    args = ["pipeline", "--data", str(data), "--split", "grouped", *FAST]
    assert main([*args, "--out", str(tmp_path / "o1")]) == 0
    assert main([*args, "--out", str(tmp_path / "o2")]) == 0
    assert _digest(data) == before
    for rel in ("scores.csv", "features.csv", "model.bin", "importance.csv", "report/metrics.csv",
                "report/parity.csv"):
        assert _digest(tmp_path / "o1" / rel) == _digest(tmp_path / "o2" / rel)
    subsets = [r["subset"] for r in csv.DictReader(open(tmp_path / "o1/report/metrics.csv"))]
    assert subsets == ["All data", "high", "mid", "low_shifted", "Average of grouped splits"]


def test_synth_bad_config(tmp_path):
    cfg = tmp_path / "s.toml"
    cfg.write_text("colour = 3\n")
    assert main(["synth", "--config", str(cfg), "--out", str(tmp_path / "x.json")]) == 1
