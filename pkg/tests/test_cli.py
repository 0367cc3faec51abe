import csv
import json

import numpy as np
import pytest

from lhvi.cli import main


def run(argv, capsys):
    code = main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


def gen(tmp_path, capsys, *extra, sub="m"):
    d = tmp_path / sub
    code, out, _ = run(["gen", *extra, "--out", d], capsys)
    assert code == 0
    return d, json.loads(out)


@pytest.fixture
def rgm(tmp_path, capsys):
    d, _ = gen(tmp_path, capsys, "--family", "rgm", "--nMarkets", 4, "--nBanks", 2, "--evidence-fraction", 0.2)
    return d


def fit(d, capsys, *extra, out="fit"):
    o = d / out
    code, text, err = run(["fit", "--model", d / "model.json", "--evidence", d / "evidence.json",
                           "--out", o, *extra], capsys)
    return code, o, text, err


def test_gen_counts_and_files(tmp_path, capsys):
    d, counts = gen(tmp_path, capsys, "--family", "toy-hmln", "--nA", 2, "--nB", 3, "--nBox", 2)
    assert counts["discrete"] == 16
    doc = json.loads((d / "model.json").read_text())
    assert doc["meta"]["family"] == "toy-hmln"
    assert json.loads((d / "evidence.json").read_text()) == {}


def test_gen_is_byte_identical(tmp_path, capsys):
    args = ("--family", "rkf", "--nWells", 3, "--nSteps", 5, "--structure", "cycle", "--seed", 9)
    a, _ = gen(tmp_path, capsys, *args, sub="a")
    b, _ = gen(tmp_path, capsys, *args, sub="b")
    for name in ("model.json", "evidence.json"):
        assert (a / name).read_bytes() == (b / name).read_bytes()


def test_fit_query_eval_pipeline(rgm, capsys):
    code, o, text, _ = fit(rgm, capsys, "--max-iters", 300)
    assert code == 0
    summary = json.loads(text)
    fitted = json.loads((o / "fitted.json").read_text())
    assert fitted["objective"] == pytest.approx(summary["objective"])
    rows = list(csv.reader((o / "trace.csv").open()))
    assert rows[0] == ["iteration", "time_ms", "objective", "grad_norm", "event"]
    assert len(rows) - 1 == summary["iterations"]
    assert json.loads((o / "lift_report.json").read_text())["ground_variables"] > 0

    code, text, _ = run(["query", "--fitted", o / "fitted.json", "--marginal", "Recession", "--map"], capsys)
    assert code == 0
    res = json.loads(text)
    assert "Recession" in res["marginals"]
    assert np.isfinite(res["map_energy"])

    code, text, _ = run(["eval", "--fitted", o / "fitted.json"], capsys)
    assert code == 0
    metrics = json.loads((o / "metrics.json").read_text())
    assert metrics == json.loads(text)
    assert metrics["avg_kl"] >= 0 and metrics["avg_l1"] < 0.05


def test_query_curve_rows(rgm, capsys):
    _, o, _, _ = fit(rgm, capsys, "--max-iters", 50)
    out = o / "curve.csv"
    code, _, _ = run(["query", "--fitted", o / "fitted.json", "--curve", "Recession", "--curve-out", out], capsys)
    assert code == 0
    lines = out.read_text().splitlines()
    assert lines[0] == "x,density" and len(lines) == 4097


def test_unknown_query_variable_exit_4(rgm, capsys):
    _, o, _, _ = fit(rgm, capsys, "--max-iters", 20)
    code, _, err = run(["query", "--fitted", o / "fitted.json", "--marginal", "Nope"], capsys)
    assert code == 4
    assert json.loads(err.strip())["error"] == "UnknownVariable"


def test_invalid_model_exit_2(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text("{\"variables\": [")
    code, _, err = run(["fit", "--model", bad, "--out", tmp_path], capsys)
    assert code == 2
    assert json.loads(err.strip().splitlines()[-1])["error"] == "InvalidModel"
    code, _, _ = run(["gen", "--family", "rgm", "--nMarkets", 0, "--out", tmp_path], capsys)
    assert code == 2
    code, _, _ = run(["fit", "--model", bad, "--K", 0, "--out", tmp_path], capsys)
    assert code == 2


def test_divergence_exit_3_keeps_trace(rgm, capsys):
    # the first step moves the means by ~1e300, so the energy overflows
    code, o, _, err = fit(rgm, capsys, "--lr", 1e300, "--max-iters", 100)
    assert code == 3
    assert json.loads(err.strip().splitlines()[-1])["error"] in ("DivergenceDetected", "NonFiniteGradient")
    assert len((o / "trace.csv").read_text().splitlines()) > 1
    assert not (o / "fitted.json").exists()


def test_oracle_precondition_exit_5(tmp_path, capsys):
    d, _ = gen(tmp_path, capsys, "--family", "toy-hmln", "--nA", 1, "--nB", 1, "--nBox", 1)
    _, o, _, _ = fit(d, capsys, "--max-iters", 20)
    code, _, err = run(["eval", "--fitted", o / "fitted.json", "--oracle", "gaussian"], capsys)
    assert code == 5
    assert json.loads(err.strip())["error"] == "NotGaussian"


def test_config_file_flags_take_precedence(rgm, capsys, tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"max-iters": 7, "K": 2, "obj_tol": 0.0, "grad_tol": 0.0}))
    code, o, text, _ = fit(rgm, capsys, "--config", cfg)
    assert code == 0 and json.loads(text)["iterations"] == 8
    assert json.loads((o / "fitted.json").read_text())["config"]["K"] == 2
    code, o, text, _ = fit(rgm, capsys, "--config", cfg, "--max-iters", 3, out="fit2")
    assert code == 0 and json.loads(text)["iterations"] == 4
    cfg.write_text(json.dumps({"bogus": 1}))
    code, _, _, _ = fit(rgm, capsys, "--config", cfg, out="fit3")
    assert code == 2


def test_lifted_has_fewer_parameters(tmp_path, capsys):
    d, _ = gen(tmp_path, capsys, "--family", "rgm", "--nMarkets", 10, "--nBanks", 3)
    _, _, ground, _ = fit(d, capsys, "--max-iters", 5, out="g")
    _, _, lifted, _ = fit(d, capsys, "--max-iters", 5, "--mode", "lifted", out="l")
    assert json.loads(lifted)["n_params"] < json.loads(ground)["n_params"]
    code, text, _ = run(["lift-report", "--model", d / "model.json"], capsys)
    assert code == 0 and json.loads(text)["super_variables"] == 4


def test_tree_gaussian_recovers_exact_means(tmp_path, capsys):
    # mean-field on a Gaussian tree has the exact means; the objective is only an upper bound on -log Z
    d, _ = gen(tmp_path, capsys, "--family", "rkf", "--nWells", 2, "--nSteps", 4)
    _, o, _, _ = fit(d, capsys, "--max-iters", 5000, "--obj-tol", 1e-13, "--grad-tol", 1e-7, "--lr", 0.05)
    run(["eval", "--fitted", o / "fitted.json"], capsys)
    metrics = json.loads((o / "metrics.json").read_text())
    assert metrics["avg_l1"] < 1e-4
    assert metrics["objective"] >= -metrics["log_z"] - 1e-9


def test_threads_flag(rgm, capsys, monkeypatch):
    monkeypatch.setenv("LHVI_THREADS", "1")
    code, _, _, _ = fit(rgm, capsys, "--threads", 1, "--max-iters", 5)
    assert code == 0
    code, _, _, _ = fit(rgm, capsys, "--threads", 0, "--max-iters", 5, out="x")
    assert code == 0  # environment override wins
    monkeypatch.delenv("LHVI_THREADS")
    code, _, _, _ = fit(rgm, capsys, "--threads", 0, "--max-iters", 5, out="y")
    assert code == 2
