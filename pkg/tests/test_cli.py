import json

import numpy as np
import pytest

from lcp.harness import cli
from lcp.harness.io import InputError, load_config, read_calibration, read_csv


def _write(path, cols, arr):
    lines = [",".join(cols)] + [",".join(repr(float(v)) for v in row) for row in arr]
    path.write_text("\n".join(lines) + "\n")


@pytest.fixture
def files(tmp_path):
    rng = np.random.default_rng(0)
    X = rng.normal(size=(120, 2))
    y = np.sin(X[:, 0]) * rng.normal(size=120)
    _write(tmp_path / "train.csv", ["x1", "x2", "y"], np.c_[X, y])
    X = rng.normal(size=(80, 2))
    y = np.sin(X[:, 0]) * rng.normal(size=80)
    _write(tmp_path / "calib.csv", ["x1", "x2", "y"], np.c_[X, y])
    _write(tmp_path / "calib_v.csv", ["x1", "x2", "v"], np.c_[X, np.abs(y)])
    Xt = rng.normal(size=(6, 2))
    _write(tmp_path / "test.csv", ["x1", "x2"], Xt)
    _write(tmp_path / "test_mu.csv", ["x1", "x2", "mu"], np.c_[Xt, np.ones(6)])
    return tmp_path


def test_read_csv_reports_line_numbers(tmp_path):
    p = tmp_path / "bad.csv"
    p.write_text("x1,y\n1,2\n3\n")
    with pytest.raises(InputError, match=r"bad.csv:3: expected 2 fields"):
        read_csv(p)
    p.write_text("x1,y\n1,2\n\n3,oops\n")
    with pytest.raises(InputError, match=r":4: not a number"):
        read_csv(p)
    p.write_text("x1,x3,y\n1,2,3\n")
    with pytest.raises(InputError, match="x1..x2"):
        read_calibration(p)
    p.write_text("x1,y,v\n1,2,3\n")
    with pytest.raises(InputError, match="exactly one"):
        read_calibration(p)


def test_config_errors(tmp_path):
    p = tmp_path / "c.json"
    p.write_text('{\n  "family": "R",\n  "tuning": {"lamda": 2}\n}\n')
    with pytest.raises(InputError, match=r"c.json:3: unknown tuning key"):
        load_config(p)
    p.write_text('{\n  "family": "R",\n  "alpha": \n}\n')
    with pytest.raises(InputError, match=r"c.json:4: Expecting value"):
        load_config(p)
    p.write_text('{"family": "QR", "tuning": {"lambda": 0.5, "B": 5}, "localizer": {"h": 0.4}}')
    cfg = load_config(p)
    assert cfg.tuning == {"lam": 0.5, "B": 5} and cfg.localizer == {"h": 0.4}


def test_predict_prescored_with_mean(files, capsys):
    out = files / "bands.csv"
    code = cli.main(["predict", "--calib", str(files / "calib_v.csv"), "--test", str(files / "test_mu.csv"), "--h", "0.8", "--out", str(out)])
    assert code == 0
    lines = out.read_text().splitlines()
    assert lines[0] == "id,lower,upper,infinite,threshold,k_star,alpha_tilde"
    assert len(lines) == 7
    first = lines[1].split(",")
    thr = float(first[4])
    assert float(first[1]) == pytest.approx(1 - thr) and float(first[2]) == pytest.approx(1 + thr)


def test_predict_with_training_and_rules(files):
    for rule in ("lcp", "randomized", "naive", "cp"):
        out = files / f"{rule}.csv"
        args = ["predict", "--calib", str(files / "calib.csv"), "--test", str(files / "test.csv"), "--train", str(files / "train.csv"), "--h", "1.0", "--rule", rule, "--out", str(out)]
        assert cli.main(args) == 0
        assert len(out.read_text().splitlines()) == 7


def test_predict_errors(files, capsys):
    assert cli.main(["predict", "--calib", str(files / "calib.csv"), "--test", str(files / "test.csv"), "--h", "1"]) == 2
    assert "--train" in capsys.readouterr().err
    (files / "bad.csv").write_text("x1,x2,v\n1,2,3\n4,five,6\n")
    assert cli.main(["predict", "--calib", str(files / "bad.csv"), "--test", str(files / "test.csv"), "--h", "1"]) == 2
    assert "bad.csv:3:" in capsys.readouterr().err


def test_tune_writes_report(files):
    cfg = files / "cfg.json"
    cfg.write_text(json.dumps({"family": "R", "alpha": 0.9, "localizer": {"dissimilarity": "euclidean"}, "tuning": {"B": 3, "grid_size": 4}}))
    out = files / "tune.csv"
    assert cli.main(["tune", "--train", str(files / "train.csv"), "--n-calib", "80", "--config", str(cfg), "--out", str(out)]) == 0
    assert len(out.read_text().splitlines()) == 5


def test_simulate_is_byte_identical(tmp_path, monkeypatch):
    monkeypatch.setenv("LCP_SEED", "7")
    args = ["simulate", "ex2A", "--alpha", "0.95", "--n-train", "150", "--n-calib", "150", "--n-test", "200", "--methods", "CR,LCR,LCLQR", "--dissimilarity", "euclidean", "--h", "0.5"]
    assert cli.main(args + ["--out", str(tmp_path / "a")]) == 0
    assert cli.main(args + ["--out", str(tmp_path / "b"), "--seed", "7"]) == 0
    for name in ("report.json", "table.csv", "bands.csv"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    assert json.loads((tmp_path / "a" / "report.json").read_text())["spec"]["seed"] == 7


def test_seed_env_validation(monkeypatch, capsys):
    monkeypatch.setenv("LCP_SEED", "abc")
    assert cli.main(["oracle-check", "--instances", "2"]) == 2


def test_oracle_check_and_bench(tmp_path, capsys):
    assert cli.main(["oracle-check", "--instances", "30", "--max-n", "12", "--randomized"]) == 0
    assert "0 deterministic mismatches" in capsys.readouterr().out
    out = tmp_path / "bench.csv"
    assert cli.main(["bench", "--n", "200,400", "--n-test", "2", "--out", str(out)]) == 0
    assert out.read_text().splitlines()[0].startswith("n,weights_seconds")
