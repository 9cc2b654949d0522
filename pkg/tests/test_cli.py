import csv
import json
import os
import subprocess
import sys

import numpy as np
import pytest

from poetcov import __version__
from poetcov.cli import main
from poetcov.io import read_matrix_csv
from poetcov.panel import ReturnPanel, demean, load_csv, sample_covariance, save_csv

from conftest import DATA

DESIGN2 = os.path.join(DATA, "design2_p50_T200.csv")
NOISE = os.path.join(DATA, "noise_p30_T120.csv")


def run(*argv):
    return main([str(a) for a in argv])


def _err(capsys):
    return json.loads(capsys.readouterr().err.strip().splitlines()[-1])


def _meta(out):
    return json.loads((out / "meta.json").read_text())


@pytest.fixture
def tiny(tmp_path, rng):
    f = tmp_path / "tiny.csv"
    save_csv(ReturnPanel(rng.standard_normal((3, 10))), f)
    return f


def test_estimate_zero_threshold_is_sample_covariance(tiny, tmp_path):
    out = tmp_path / "est"
    assert run("estimate", tiny, "--K", 1, "--C", 0, "--out", out, "--threads", 1) == 0
    S = sample_covariance(demean(load_csv(tiny)).Y)
    got = read_matrix_csv(out / "Sigma_hat.csv")
    np.testing.assert_array_equal(got, S)
    for name in ("Sigma_hat.csv", "Sigma_u_hat.csv", "loadings.csv", "factors.csv", "meta.json"):
        assert (out / name).exists()
    # unthresholded residual covariance of rank p - K has no inverse
    assert not (out / "precision.csv").exists()
    meta = _meta(out)
    assert meta["result"]["precision"].startswith("unavailable")
    assert meta["version"] == __version__ and meta["seed"] == 0
    assert meta["config"]["C"] == 0 and meta["config"]["K"] == 1
    assert meta["timestamp"]["wall_time_s"] >= 0


def test_estimate_rerun_is_identical_modulo_timestamp(tmp_path):
    out = tmp_path / "est"
    metas, mats = [], []
    for _ in range(2):
        assert run("estimate", DESIGN2, "--out", out) == 0
        m = _meta(out)
        m.pop("timestamp")
        metas.append(json.dumps(m, sort_keys=True))
        mats.append((out / "Sigma_hat.csv").read_bytes())
    assert metas[0] == metas[1] and mats[0] == mats[1]
    P = read_matrix_csv(out / "precision.csv")
    np.testing.assert_allclose(P @ read_matrix_csv(out / "Sigma_hat.csv"), np.eye(50), atol=1e-6)


def test_missing_file_exits_2(tmp_path, capsys):
    missing = tmp_path / "nope.csv"
    assert run("estimate", missing, "--out", tmp_path / "o") == 2
    err = _err(capsys)
    assert str(missing) in err["message"] and err["exit_code"] == 2


def test_bad_panel_reports_location(tmp_path, capsys):
    f = tmp_path / "bad.csv"
    f.write_text("a,b\n1,2\n3,nan\n")
    assert run("estimate", f, "--out", tmp_path / "o") == 2
    err = _err(capsys)
    assert err["row"] == 3 and err["col"] == 2


def test_usage_errors(tmp_path, capsys):
    assert run("estimate") == 2
    assert run("frobnicate") == 2
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"not_a_flag": 1}))
    assert run("select-k", NOISE, "--config", cfg, "--out", tmp_path / "o") == 2
    assert "not_a_flag" in _err(capsys)["message"]


def test_numeric_failure_exits_3(tmp_path, capsys, rng):
    f = tmp_path / "wide.csv"
    save_csv(ReturnPanel(rng.standard_normal((30, 12))), f)
    code = run("estimate", f, "--K", 1, "--C", 0, "--require-precision", "--out", tmp_path / "o")
    assert code == 3
    assert _err(capsys)["error"] == "SingularIdiosyncraticError"


def test_select_k_on_fixtures(tmp_path, capsys):
    for path, expected in ((DESIGN2, 3), (NOISE, 0)):
        out = tmp_path / os.path.basename(path)
        assert run("select-k", path, "--out", out) == 0
        assert _meta(out)["result"]["K_hat"] == expected
        rows = list(csv.reader(open(out / "ic_curve.csv")))
        assert len(rows) == 10
    assert run("select-k", DESIGN2, "--M", 0, "--out", tmp_path / "m0") == 0
    assert _meta(tmp_path / "m0")["result"]["K_hat"] == 0


def test_config_file_overrides_flags(tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"M": 2, "ic": "IC2"}))
    out = tmp_path / "o"
    assert run("select-k", DESIGN2, "--M", 8, "--config", cfg, "--out", out) == 0
    meta = _meta(out)
    assert meta["config"]["M"] == 2 and meta["result"]["variant"] == "IC2"
    assert meta["result"]["K_hat"] <= 2


def test_output_dir_from_environment(tmp_path, monkeypatch):
    monkeypatch.setenv("POETCOV_OUTPUT_DIR", str(tmp_path / "envout"))
    assert run("select-k", NOISE) == 0
    assert (tmp_path / "envout" / "meta.json").exists()


def test_cv_command(tmp_path):
    out = tmp_path / "cv"
    assert run("cv", DESIGN2, "--K", 3, "--n-grid", 10, "--H", 3, "--out", out) == 0
    res = _meta(out)["result"]
    assert res["K"] == 3 and res["C_star"] >= res["C_min"] + 0.05 - 1e-12
    assert (out / "cv_curve.csv").exists() and (out / "min_eigenvalue_curve.csv").exists()
    assert run("cv", DESIGN2, "--grid", "2,1", "--out", out) == 2
    assert run("cv", DESIGN2, "--grid", "a,b", "--out", out) == 2


def test_estimate_with_cv_records_c(tmp_path):
    out = tmp_path / "o"
    assert run("estimate", DESIGN2, "--K", 3, "--cv", "--out", out) == 0
    meta = _meta(out)
    assert meta["result"]["C_star"] == meta["result"]["estimate"]["C"]


def test_simulate_command(tmp_path):
    out = tmp_path / "sim"
    args = ("simulate", "--design", "design2", "--p", 20, "--T", 60, "--reps", 2, "--seed", 4,
            "--out", out)
    assert run(*args, "--threads", 1) == 0
    first = (out / "per_rep.csv").read_bytes()
    assert run(*args, "--threads", 2) == 0
    assert (out / "per_rep.csv").read_bytes() == first
    rows = list(csv.DictReader(open(out / "per_rep.csv")))
    assert {r["estimator"] for r in rows} == {"poet", "sample"} and len(rows) == 4
    assert run("simulate", "--reps", 0, "--out", out) == 2


def test_simulate_then_calibrate(tmp_path):
    panel = tmp_path / "cal.csv"
    out = tmp_path / "sim"
    assert run("simulate", "--p", 30, "--T", 100, "--reps", 1, "--save-panel", panel,
               "--out", out) == 0
    assert run("calibrate", panel, "--out", tmp_path / "cal") == 0
    params = json.loads((tmp_path / "cal" / "calibration.json").read_text())
    assert len(params["Phi"]) == 3


def test_backtest_command(tmp_path):
    ests = tmp_path / "e.json"
    cfg = {"name": "p", "kind": "poet", "K": 3, "rule": "soft"}
    ests.write_text(json.dumps([cfg, dict(cfg, name="q")]))
    out = tmp_path / "bt"
    assert run("backtest", DESIGN2, "--window", 100, "--rebalance", 20, "--estimators", ests,
               "--out", out) == 0
    summary = json.loads((out / "summary.json").read_text())
    assert summary["comparisons"]["q"]["win_fraction"] == 0.5
    assert run("backtest", DESIGN2, "--window", 500, "--out", out) == 2


def test_console_script_help():
    res = subprocess.run([sys.executable, "-m", "poetcov.cli", "--help"], capture_output=True,
                         text=True)
    assert res.returncode == 0
    for cmd in ("estimate", "select-k", "cv", "simulate", "backtest", "calibrate"):
        assert cmd in res.stdout
