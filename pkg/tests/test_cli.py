import json

import pytest

from gtd_lab import experiment as ex
from gtd_lab.cli import main
from gtd_lab.graph import load_dataset

CFG = {
    "csbm": {"n": 80, "avg_degree": 8, "f": 20, "epsilon": 3},
    "model": "GCN",
    "regime": "GTD",
    "hyper": {"epochs": 10},
    "attack_hyper": {"epochs": 10},
    "repetitions": 1,
}


@pytest.fixture
def cfg_file(tmp_path):
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps({**CFG, "out": str(tmp_path / "runs")}))
    return path


def test_gen_csbm(tmp_path, capsys):
    out = tmp_path / "g"
    assert main(["gen-csbm", "--n", "100", "--avg-degree", "10", "--f", "12", "--phi", "0.5", "--eps", "3", "--seed", "2", "--out", str(out)]) == 0
    ds = load_dataset(out)
    assert ds.num_nodes == 100 and ds.num_features == 12
    prov = json.loads((out / "provenance.json").read_text())
    assert prov["config"]["seed"] == 2 and prov["lambda"] > 0


def test_gen_csbm_invalid_regime(tmp_path, capsys):
    code = main(["gen-csbm", "--avg-degree", "4", "--phi", "1", "--out", str(tmp_path / "x")])
    assert code == 1
    assert "invalid cSBM regime" in capsys.readouterr().err


def test_import_linqs(tmp_path):
    content = tmp_path / "toy.content"
    content.write_text("p1\t1\t0\tA\np2\t0\t1\tB\np3\t1\t1\tA\np4\t0\t0\tB\n")
    cites = tmp_path / "toy.cites"
    cites.write_text("p1\tp2\np2\tp1\np3\tp4\np3\tmissing\n")
    assert main(["import-linqs", "--content", str(content), "--cites", str(cites), "--out", str(tmp_path / "toy")]) == 0
    ds = load_dataset(tmp_path / "toy")
    assert ds.num_nodes == 4 and ds.graph.num_edges == 2
    assert ds.labels.tolist() == [0, 1, 0, 1] and ds.num_classes == 2


def test_experiment_and_overrides(cfg_file, tmp_path, capsys):
    assert main(["experiment", "--config", str(cfg_file), "--set", "attack_modes=[\"hard\",\"weak\"]", "--repetitions", "2"]) == 0
    res = json.loads((tmp_path / "runs" / "run-001" / "results.json").read_text())
    assert res["config"]["repetitions"] == 2
    assert res["attack_modes"] == ["hard", "weak"]
    assert "auroc" in capsys.readouterr().out


def test_config_errors_exit_one(cfg_file, tmp_path):
    assert main(["experiment", "--config", str(cfg_file), "--set", "bogus=1"]) == 1
    assert main(["experiment", "--config", str(cfg_file), "--repetitions", "0"]) == 1
    assert main(["experiment", "--config", str(cfg_file), "--set", "noequals"]) == 1
    bad = tmp_path / "bad.json"
    bad.write_text("[1, 2]")
    assert main(["experiment", "--config", str(bad)]) == 1
    assert main(["sweep", "--config", str(cfg_file), "--dataset", "data/cora", "--set", "csbm=null", "--phi", "0"]) == 1


def test_all_failed_exits_two(cfg_file, monkeypatch):
    def boom(*args, **kwargs):
        raise RuntimeError("synthetic failure")

    monkeypatch.setattr(ex, "train_regime", boom)
    assert main(["experiment", "--config", str(cfg_file)]) == 2


def test_runtime_error_exits_two(cfg_file, tmp_path):
    missing = tmp_path / "nope.ckpt"
    assert main(["attack", "--config", str(cfg_file), "--checkpoint", str(missing)]) == 2


def test_train_then_attack(cfg_file, tmp_path, capsys):
    assert main(["train", "--config", str(cfg_file), "--regime", "Normal"]) == 0
    summary = json.loads(capsys.readouterr().out)
    run = tmp_path / "runs" / "train-001"
    assert (run / "target.ckpt").is_file() and (run / "curve.tsv").is_file()
    assert summary["regime"] == "Normal" and 0 <= summary["classify_acc"] <= 1
    scores = tmp_path / "scores"
    assert main(["attack", "--config", str(cfg_file), "--regime", "Normal", "--checkpoint", str(run / "target.ckpt"), "--scores", str(scores)]) == 0
    out = json.loads(capsys.readouterr().out)
    assert 0 <= out["attack_auroc"]["hard"] <= 1
    assert (tmp_path / "scores.hard.tsv").is_file()


def test_attack_matches_experiment(cfg_file, tmp_path, capsys):
    """train + attack through the CLI reproduces the AUROC of the experiment pipeline."""
    assert main(["experiment", "--config", str(cfg_file)]) == 0
    res = json.loads((tmp_path / "runs" / "run-001" / "results.json").read_text())
    ckpt = tmp_path / "runs" / "run-001" / "artifacts" / "target_rep0.ckpt"
    capsys.readouterr()
    assert main(["attack", "--config", str(cfg_file), "--checkpoint", str(ckpt)]) == 0
    out = json.loads(capsys.readouterr().out)
    assert out["attack_auroc"]["hard"] == pytest.approx(res["records"][0]["attack_auroc"], abs=1e-12)


def test_sweep_and_ablation(cfg_file, tmp_path, capsys):
    assert main(["sweep", "--config", str(cfg_file), "--phi", "-1", "1", "--ratio", "1:1"]) == 0
    lines = capsys.readouterr().out.strip().splitlines()
    assert lines[0].startswith("phi") and len(lines) == 3
    assert main(["ablation", "--config", str(cfg_file)]) == 0
    assert (tmp_path / "runs" / "ablation-001" / "ablation.csv").is_file()


def test_help_lists_subcommands(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["--help"])
    assert exc.value.code == 0
    text = capsys.readouterr().out
    for cmd in ("gen-csbm", "train", "attack", "experiment", "sweep", "ablation"):
        assert cmd in text
