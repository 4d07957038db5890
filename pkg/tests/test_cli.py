import csv
import json
import subprocess
import sys

import pytest

from abcf.cli import main
from abcf.reftable import read_csv


def config_file(tmp_path, **extra):
    cfg = {
        "model": {"kind": "normal", "noise_dims": 4},
        "sizes": {"train": 400, "test": 5},
        "forest": {"trees": 15},
        "methods": [{"name": "rf"}, {"name": "reject", "tolerance": 0.05}],
        **extra,
    }
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps(cfg))
    return path


@pytest.fixture
def tables(tmp_path):
    out = tmp_path / "sim"
    assert main(["simulate", "--config", str(config_file(tmp_path)), "--out", str(out)]) == 0
    return out


def read_rows(path):
    with open(path) as fh:
        return list(csv.DictReader(fh))


def test_simulate_is_reproducible(tmp_path, tables):
    again = tmp_path / "again"
    assert main(["simulate", "--config", str(config_file(tmp_path)), "--out", str(again)]) == 0
    for name in ("train.csv", "test.csv"):
        assert (tables / name).read_bytes() == (again / name).read_bytes()
    a, b = (json.loads((d / "config.resolved.json").read_text()) for d in (tables, again))
    assert a.pop("output_dir") != b.pop("output_dir") and a == b
    assert len(read_csv(tables / "train.csv")) == 400


def test_train_then_predict(tmp_path, tables):
    model = tmp_path / "f.json"
    assert main(["train", "--table", str(tables / "train.csv"), "--response", "theta1",
                 "--out", str(model), "--trees", "10", "--seed", "4"]) == 0
    assert (tmp_path / "f.config.resolved.json").exists()
    out1, out2 = tmp_path / "p1.csv", tmp_path / "p2.csv"
    args = ["predict", "--forest", str(model), "--queries", str(tables / "test.csv")]
    assert main(args + ["--out", str(out1), "--export-weights", str(tmp_path / "w")]) == 0
    assert main(args + ["--out", str(out2)]) == 0
    assert out1.read_bytes() == out2.read_bytes()
    rows = read_rows(out1)
    assert len(rows) == 5
    assert list(rows[0]) == ["query", "expectation", "variance_oob", "q0.025", "q0.05", "q0.95", "q0.975"]
    for i in range(5):
        w = read_rows(tmp_path / "w" / f"weights_{i}.csv")
        assert sum(float(r["weight"]) for r in w) == pytest.approx(1.0, abs=1e-12)
        mean = sum(float(r["weight"]) * float(r["response"]) for r in w)
        assert mean == pytest.approx(float(rows[i]["expectation"]), abs=1e-9)


def test_predict_with_other_variance_methods(tmp_path, tables):
    model = tmp_path / "f.json"
    main(["train", "--table", str(tables / "train.csv"), "--response", "theta2", "--out", str(model), "--trees", "10"])
    for method in ("cdf", "residual-forest"):
        out = tmp_path / f"{method}.csv"
        assert main(["predict", "--forest", str(model), "--queries", str(tables / "test.csv"),
                     "--out", str(out), "--variance-method", method, "--quantiles", "0.5"]) == 0
        rows = read_rows(out)
        assert all(float(r[f"variance_{method}"]) >= 0 for r in rows)
        assert "q0.5" in rows[0]


def test_missing_response_is_a_usage_error(tmp_path, tables, capsys):
    code = main(["train", "--table", str(tables / "train.csv"), "--response", "theta9", "--out", str(tmp_path / "f.json")])
    assert code == 2
    assert "theta9" in capsys.readouterr().err


def test_mismatched_query_columns_are_a_data_error(tmp_path, tables, capsys):
    model = tmp_path / "f.json"
    main(["train", "--table", str(tables / "train.csv"), "--response", "theta1", "--out", str(model), "--trees", "3"])
    lines = (tables / "test.csv").read_text().splitlines()
    lines[0] = lines[0].replace("stat:mean", "stat:average")
    bad = tmp_path / "bad.csv"
    bad.write_text("\n".join(lines) + "\n")
    code = main(["predict", "--forest", str(model), "--queries", str(bad), "--out", str(tmp_path / "p.csv")])
    err = capsys.readouterr().err
    assert code == 3
    assert "mean" in err and "average" in err


def test_unreadable_inputs_are_data_errors(tmp_path):
    assert main(["train", "--table", str(tmp_path / "nope.csv"), "--response", "a", "--out", str(tmp_path / "f")]) == 3
    (tmp_path / "f.json").write_text("{}")
    assert main(["importance", "--forest", str(tmp_path / "f.json"), "--out", str(tmp_path / "i.csv")]) == 3


def test_invalid_config_is_a_usage_error(tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"methods": [{"name": "reject"}]}))
    assert main(["simulate", "--config", str(bad), "--out", str(tmp_path / "x")]) == 2


def test_importance_and_oob_curve(tmp_path, tables):
    base = ["--table", str(tables / "train.csv"), "--response", "theta1", "--trees", "12"]
    assert main(["importance", *base, "--out", str(tmp_path / "imp.csv")]) == 0
    rows = read_rows(tmp_path / "imp.csv")
    assert len(rows) == 15 and not rows[0]["statistic"].startswith("noise")
    assert main(["oob-curve", *base, "--checkpoints", "4,8,12", "--out", str(tmp_path / "oob.csv")]) == 0
    curve = read_rows(tmp_path / "oob.csv")
    assert [int(r["b"]) for r in curve] == [4, 8, 12]
    assert main(["oob-curve", *base, "--checkpoints", "20", "--out", str(tmp_path / "x.csv")]) == 2
    assert main(["oob-curve", "--out", str(tmp_path / "x.csv")]) == 2


@pytest.mark.filterwarnings("ignore::abcf.posterior.OobWarning")
def test_evaluate_and_sweep_write_reports(tmp_path):
    cfg = config_file(tmp_path)
    assert main(["evaluate", "--config", str(cfg), "--out", str(tmp_path / "ev"), "--seed", "2"]) == 0
    rows = read_rows(tmp_path / "ev" / "report.csv")
    assert {r["method"] for r in rows} == {"rf", "reject"}
    resolved = json.loads((tmp_path / "ev" / "config.resolved.json").read_text())
    assert resolved["seed"] == 2 and resolved["model"]["n"] == 10
    assert main(["sweep", "--config", str(cfg), "--out", str(tmp_path / "sw"), "--axis", "tree_count",
                 "--values", "5,15"]) == 0
    assert {r["tree_count"] for r in read_rows(tmp_path / "sw" / "sweep_tree_count.csv")} == {"5", "15"}


def test_thread_flag_does_not_change_output(tmp_path, tables):
    outs = []
    for threads in ("1", "3"):
        model = tmp_path / f"f{threads}.json"
        main(["--threads", threads, "train", "--table", str(tables / "train.csv"), "--response", "theta1",
              "--out", str(model), "--trees", "8"])
        outs.append(model.read_bytes())
    assert outs[0] == outs[1]


def test_module_entry_point_reports_usage_errors():
    proc = subprocess.run([sys.executable, "-m", "abcf.cli", "sweep", "--axis", "depth", "--values", "1"],
                          capture_output=True, text=True)
    assert proc.returncode == 2
    assert "invalid choice" in proc.stderr
