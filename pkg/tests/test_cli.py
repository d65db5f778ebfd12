import json

import numpy as np
import pytest

from ran import checkpoint as ck
from ran import cli
from ran import data
from ran import tensor as tn
from ran.data import LabeledSeries

SMALL = ["--d", "8", "--heads", "2", "--feature-maps", "4,4", "--epochs", "3", "--batch-size", "4"]


@pytest.fixture
def toy_files(tmp_path):
    r = np.random.default_rng(0)
    t = np.linspace(0, 1, 20)

    def rows(n):
        out = []
        for i in range(n):
            label = ("-1", "1")[i % 2]
            base = np.sin(6 * t) if label == "1" else np.cos(6 * t)
            out.append(LabeledSeries(base + 0.3 * r.standard_normal(20), label))
        return out

    train, test = tmp_path / "Toy_TRAIN.tsv", tmp_path / "Toy_TEST.tsv"
    data.write_ucr_file(train, rows(10))
    data.write_ucr_file(test, rows(8))
    return train, test


def run(argv, capsys):
    code = cli.main([str(a) for a in argv])
    out = capsys.readouterr()
    return code, out.out, out.err


def train(toy_files, out, capsys, *extra):
    tr, te = toy_files
    return run(["train", "--train-file", tr, "--test-file", te, "--out", out, *SMALL, *extra], capsys)


def test_train_writes_artifacts(toy_files, tmp_path, capsys):
    code, out, _ = train(toy_files, tmp_path / "run", capsys)
    assert code == 0
    assert "optimistic" in out
    run_dir = tmp_path / "run"
    for name in ("best.ckpt", "final.ckpt", "metrics.csv", "manifest.json"):
        assert (run_dir / name).is_file()
    lines = (run_dir / "metrics.csv").read_text().splitlines()
    assert lines[0] == "epoch,train_loss,test_accuracy"
    assert len(lines) == 4
    manifest = json.loads((run_dir / "manifest.json").read_text())
    assert manifest["ran_config"]["encoder"]["d"] == 8
    assert manifest["train_config"]["epochs"] == 3
    assert manifest["dataset"]["label_map"] == {"-1": 0, "1": 1}
    assert len(manifest["metrics"]) == 3


def test_train_is_byte_identical(toy_files, tmp_path, capsys):
    train(toy_files, tmp_path / "a", capsys)
    train(toy_files, tmp_path / "b", capsys)
    for name in ("metrics.csv", "best.ckpt", "final.ckpt"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_missing_train_file_flag_is_usage_error(toy_files, capsys):
    code, _, err = run(["train", "--test-file", toy_files[1]], capsys)
    assert code == 2
    assert "usage" in err


def test_invalid_model_flags_are_usage_errors(toy_files, tmp_path, capsys):
    code, _, err = train(toy_files, tmp_path / "x", capsys, "--d", "10", "--heads", "3")
    assert code == 2
    assert "divisible" in err


def test_bad_data_exits_3(tmp_path, capsys):
    bad = tmp_path / "Bad_TRAIN.tsv"
    bad.write_text("1\t0\t1\n1\t0\n")
    code, _, err = run(["train", "--train-file", bad, "--test-file", bad, *SMALL], capsys)
    assert code == 3
    assert "line 2" in err


def test_numeric_abort_exits_4(toy_files, tmp_path, capsys):
    code, _, err = train(toy_files, tmp_path / "x", capsys, "--lr", "1e308")
    assert code == 4
    assert "numerical" in err


def test_table_configuration_flags(toy_files, tmp_path, capsys):
    tr, te = toy_files
    run(["train", "--train-file", tr, "--test-file", te, "--out", tmp_path / "c", "--d", "8", "--heads", "2",
         "--epochs", "1", "--depth", "4", "--feature-maps", "64,64,128,128", "--fusion", "highway"], capsys)
    cfg = json.loads((tmp_path / "c" / "manifest.json").read_text())["ran_config"]
    assert cfg["encoder"]["T"] == 4
    assert cfg["branch"]["feature_maps"] == [64, 64, 128, 128]
    assert cfg["fusion"] == "gated_highway"


def test_config_file_precedence(toy_files, tmp_path, capsys):
    conf = tmp_path / "c.json"
    conf.write_text(json.dumps({"ran": {"encoder": {"d": 4, "k": 2, "T": 2}}, "train": {"epochs": 1, "seed": 9}}))
    tr, te = toy_files
    code, _, _ = run(["train", "--train-file", tr, "--test-file", te, "--out", tmp_path / "p", "--config", conf,
                      "--feature-maps", "2", "--seed", "5"], capsys)
    assert code == 0
    m = json.loads((tmp_path / "p" / "manifest.json").read_text())
    assert m["ran_config"]["encoder"] == {"d": 4, "k": 2, "T": 2, "ffn_hidden": None}
    assert m["train_config"]["epochs"] == 1
    assert m["seed"] == 5


def test_eval_reproduces_training_accuracy(toy_files, tmp_path, capsys):
    train(toy_files, tmp_path / "run", capsys)
    manifest = json.loads((tmp_path / "run" / "manifest.json").read_text())
    results = tmp_path / "results.csv"
    code, out, _ = run(["eval", "--checkpoint", tmp_path / "run" / "best.ckpt", "--test-file", toy_files[1],
                        "--results", results], capsys)
    assert code == 0
    assert out.strip() == f"{manifest['best_accuracy']:.6f}"
    assert len(out.strip().split(".")[1]) == 6
    code, out, _ = run(["eval", "--checkpoint", tmp_path / "run" / "final.ckpt", "--test-file", toy_files[1],
                        "--results", results], capsys)
    assert out.strip() == f"{manifest['final_accuracy']:.6f}"
    rows = results.read_text().splitlines()
    assert rows[0] == "dataset,config,accuracy"
    assert rows[1].startswith("Toy,T1-fm4-4-concat,")
    assert len(rows) == 3


def test_eval_missing_checkpoint_exits_3(toy_files, tmp_path, capsys):
    code, _, _ = run(["eval", "--checkpoint", tmp_path / "none.ckpt", "--test-file", toy_files[1]], capsys)
    assert code == 3


def test_eval_mismatched_checkpoint_exits_5(toy_files, tmp_path, capsys):
    train(toy_files, tmp_path / "run", capsys)
    path = tmp_path / "run" / "best.ckpt"
    saved = ck.read_checkpoint(path)
    params = dict(saved.params)
    params.pop("classifier.b")
    ck.save_checkpoint(params, tmp_path / "broken.ckpt", saved.config)
    code, _, err = run(["eval", "--checkpoint", tmp_path / "broken.ckpt", "--test-file", toy_files[1]], capsys)
    assert code == 5
    assert "classifier.b" in err


def test_eval_conflicting_config_exits_5(toy_files, tmp_path, capsys):
    train(toy_files, tmp_path / "run", capsys)
    conf = tmp_path / "c.json"
    conf.write_text(json.dumps({"ran": {"encoder": {"d": 16, "k": 2}}}))
    code, _, _ = run(["eval", "--checkpoint", tmp_path / "run" / "best.ckpt", "--test-file", toy_files[1],
                      "--config", conf], capsys)
    assert code == 5


def test_eval_unknown_label_exits_5(toy_files, tmp_path, capsys):
    train(toy_files, tmp_path / "run", capsys)
    other = tmp_path / "Other_TEST.tsv"
    data.write_ucr_file(other, [LabeledSeries(np.zeros(20), "7")])
    code, _, _ = run(["eval", "--checkpoint", tmp_path / "run" / "best.ckpt", "--test-file", other], capsys)
    assert code == 5


def test_compare_identical_columns(tmp_path, capsys):
    f = tmp_path / "r.csv"
    f.write_text("dataset,a,b\nx,0.5,0.5\ny,0.9,0.9\n")
    code, out, _ = run(["compare", "--results", f], capsys)
    assert code == 0
    assert out.splitlines() == [",a,b", "a,0,", "b,1,0"]


def test_compare_keeps_input_order_and_writes_file(tmp_path, capsys):
    f = tmp_path / "r.csv"
    f.write_text("dataset,zeta,alpha,mid\nx,0.5,0.6,0.7\ny,0.9,0.8,0.1\nz,0.3,0.2,0.4\n")
    out_file = tmp_path / "m.csv"
    code, out, _ = run(["compare", "--results", f, "--out", out_file], capsys)
    assert code == 0
    lines = out_file.read_text().splitlines()
    assert lines[0] == ",zeta,alpha,mid"
    assert [l.split(",")[0] for l in lines[1:]] == ["zeta", "alpha", "mid"]
    assert out.splitlines()[0] == "model,baseline,wins,ties,losses"
    assert "alpha,zeta,1,0,2" in out.splitlines()


def test_compare_malformed_exits_3(tmp_path, capsys):
    f = tmp_path / "r.csv"
    f.write_text("dataset,a,b\nx,0.5,0.5\ny,0.9\n")
    code, _, err = run(["compare", "--results", f], capsys)
    assert code == 3
    assert "line 3" in err


def test_compare_failure_leaves_no_partial_output(tmp_path, capsys):
    f = tmp_path / "r.csv"
    f.write_text("dataset,a,b\nx,0.5,oops\n")
    out_file = tmp_path / "m.csv"
    run(["compare", "--results", f, "--out", out_file], capsys)
    assert not out_file.exists()
    assert list(tmp_path.iterdir()) == [f]


def test_gradcheck_passes(capsys):
    code, out, _ = run(["gradcheck"], capsys)
    assert code == 0
    assert "ran_model[T=2,gated_highway]" in out


def test_gradcheck_names_corrupted_rule(monkeypatch, capsys):
    honest = tn.VJP_RULES["relu"]
    monkeypatch.setitem(tn.VJP_RULES, "relu", lambda g, needs, *saved: tuple(2.0 * x for x in honest(g, needs, *saved)))
    code, out, _ = run(["gradcheck"], capsys)
    assert code == 1
    assert "FAIL relu" in out
    assert out.splitlines()[-1].startswith("gradient check failed for: relu")


def test_run_suite(tmp_path, toy_files, capsys, monkeypatch):
    monkeypatch.setenv("RAN_THREADS", "1")
    code, out, _ = run(["run-suite", "--data-dir", toy_files[0].parent, "--datasets", "Toy",
                        "--out", tmp_path / "suite", *SMALL], capsys)
    assert code == 0
    assert out.startswith("Toy,T1-fm4-4-concat,")
    assert (tmp_path / "suite" / "Toy" / "manifest.json").is_file()
    assert (tmp_path / "suite" / "results.csv").read_text().startswith("dataset,config,accuracy\n")


def test_run_suite_missing_dataset(tmp_path, capsys):
    code, _, _ = run(["run-suite", "--data-dir", tmp_path, "--datasets", "Nope"], capsys)
    assert code == 3
