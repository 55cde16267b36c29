import json

import pytest

from dsaeem.cli import main

from .conftest import DATA

TINY = {
    "dataset": str(DATA / "heart.csv"), "schema": str(DATA / "heart.schema.json"),
    "k": 3, "hidden": [8, 6, 4], "pretrain_iterations": 20, "softmax_iterations": 5,
    "fine_tune_iterations": 5, "T": 3, "l": 1, "alpha_grid": [0.1, 1.0], "reference": "heart",
}


def write_config(tmp_path, **changes):
    p = tmp_path / "tiny.json"
    p.write_text(json.dumps({**TINY, **changes}))
    return p


def test_validate_config_echo(tmp_path, capsys):
    assert main(["validate-config", str(write_config(tmp_path))]) == 0
    echo = json.loads(capsys.readouterr().out)
    assert echo["values"]["rho"] == 0.05 and "rho" in echo["defaulted"]


def test_validate_config_keys(capsys):
    assert main(["validate-config", "--keys"]) == 0
    assert "eps_scale" in capsys.readouterr().out


def test_config_error_exit_code(tmp_path, capsys):
    assert main(["validate-config", str(write_config(tmp_path, rho=1.5))]) == 1
    assert "rho" in capsys.readouterr().err


def test_data_error_exit_code(tmp_path, capsys):
    cfg = write_config(tmp_path, dataset=str(tmp_path / "none.csv"))
    assert main(["run", str(cfg), "-o", str(tmp_path / "out")]) == 2
    assert "not found" in capsys.readouterr().err


def test_run_writes_reports(tmp_path, capsys):
    out = tmp_path / "out"
    assert main(["run", str(write_config(tmp_path)), "-o", str(out)]) == 0
    report = json.loads((out / "report.json").read_text())
    assert report["variants"]["full"]["metrics"]["summary"]["acc"]["mean"] > 0.5
    assert report["reference"]["acc"] == 96.67
    assert set(report["config"]["values"]) >= {"gamma", "T", "delta_s", "eps_scale"}
    table = (out / "metrics.txt").read_text()
    assert "F1_score" in table and "96.67" in table
    assert sorted(p.name for p in (out / "models" / "full").iterdir()) == \
        ["fold_0.json", "fold_1.json", "fold_2.json"]
    assert "finished in" in (out / "run.log").read_text()
    assert "timing" not in json.dumps(report)


def test_run_is_byte_identical(tmp_path):
    cfg = write_config(tmp_path)
    main(["run", str(cfg), "-o", str(tmp_path / "a")])
    main(["run", str(cfg), "-o", str(tmp_path / "b")])
    for name in ("report.json", "metrics.txt", "config_echo.json", "models/full/fold_0.json"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_holdout_layout(tmp_path):
    cfg = write_config(tmp_path, cv_mode="holdout")
    out = tmp_path / "h"
    assert main(["run", str(cfg), "-o", str(out)]) == 0
    text = (out / "metrics.txt").read_text()
    rows = [line.split()[0] for line in text.splitlines()[3:8]]
    assert rows == ["Acc", "Sens", "Spec", "Prec", "F1_score"]
    assert "95.83" in text


def test_baseline_shares_plan(tmp_path):
    out = tmp_path / "base"
    cfg = write_config(tmp_path)
    assert main(["baseline", str(cfg), "--baselines", "svm_raw,l1_only", "-o", str(out)]) == 0
    report = json.loads((out / "report.json").read_text())
    assert list(report["variants"]) == ["full", "svm_raw", "l1_only"]
    header = [l for l in (out / "metrics.txt").read_text().splitlines() if l.startswith("metric")]
    assert header[-1].split() == ["metric", "full", "svm_raw", "l1_only", "reference"]


def test_baseline_unknown_name(tmp_path):
    assert main(["baseline", str(write_config(tmp_path)), "--baselines", "knn"]) == 1


def test_sweep_rho_series(tmp_path):
    out = tmp_path / "sw"
    cfg = write_config(tmp_path, variant="fssae_only")
    assert main(["sweep", str(cfg), "--rho", "0.02,0.1", "-o", str(out)]) == 0
    lines = (out / "sweep_rho.csv").read_text().splitlines()
    assert lines[0].startswith("rho,acc_mean")
    assert len(lines) == 3 and lines[1].startswith("0.02,")


def test_single_point_sweep_matches_run(tmp_path):
    cfg = write_config(tmp_path, rho=0.05)
    main(["sweep", str(cfg), "--rho", "0.05", "-o", str(tmp_path / "s")])
    main(["run", str(cfg), "-o", str(tmp_path / "r")])
    row = (tmp_path / "s" / "sweep_rho.csv").read_text().splitlines()[1].split(",")
    report = json.loads((tmp_path / "r" / "report.json").read_text())
    assert float(row[1]) == report["variants"]["full"]["metrics"]["summary"]["acc"]["mean"]


@pytest.mark.parametrize("args", [[], ["--rho", ""], ["--lam", "1e-5"], ["--rho", "0.05", "--beta", "1"],
                                  ["--rho", "abc"], ["--rho", "2.0"]])
def test_sweep_axis_errors(tmp_path, args):
    assert main(["sweep", str(write_config(tmp_path))] + args) == 1


def test_predict_from_bundle(tmp_path, capsys):
    out = tmp_path / "out"
    main(["run", str(write_config(tmp_path)), "-o", str(out)])
    capsys.readouterr()
    preds = tmp_path / "pred.csv"
    code = main(["predict", str(out / "models/full/fold_0.json"), TINY["dataset"],
                 "--schema", TINY["schema"], "-o", str(preds)])
    assert code == 0
    lines = preds.read_text().splitlines()
    assert lines[0] == "row,predicted" and len(lines) == 271
    assert "Acc" in capsys.readouterr().err


def test_predict_bad_bundle(tmp_path):
    bad = tmp_path / "b.json"
    bad.write_text("{}")
    assert main(["predict", str(bad), TINY["dataset"], "--schema", TINY["schema"]]) == 2
