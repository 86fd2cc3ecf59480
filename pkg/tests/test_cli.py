import json
from pathlib import Path

import numpy as np
import pytest

from panelcause import ArmScheme, load_panel, load_preset, run_estimators, simulate
from panelcause.cli import main
from panelcause.panel import write_panel

from _util import dataset


def run(*argv):
    return main([str(a) for a in argv])


def files(d: Path):
    return {p.name: p.read_bytes() for p in sorted(d.iterdir())}


@pytest.fixture(scope="module")
def sim_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("sim")
    assert run("simulate", "--config", "contemporaneous_invariant", "--set", "n_units=600", "--out", out) == 0
    return out


def test_simulate_outputs(sim_dir, tmp_path, capsys):
    assert sorted(p.name for p in sim_dir.iterdir()) == ["baseline.csv", "config.json", "panel.csv", "truth.json"]
    assert json.loads((sim_dir / "truth.json").read_text()) == {"tau": 5}
    again = tmp_path / "again"
    assert run("simulate", "--config", "contemporaneous_invariant", "--set", "n_units=600", "--out", again) == 0
    assert files(again) == files(sim_dir)
    assert "N=600 T=8" in capsys.readouterr().out


def test_simulate_from_written_config(sim_dir, tmp_path):
    out = tmp_path / "from_file"
    assert run("simulate", "--config", sim_dir / "config.json", "--out", out) == 0
    assert files(out) == files(sim_dir)


def test_simulate_spillover_writes_edges(tmp_path):
    assert run("simulate", "--config", "private_invariant", "--set", "n_units=200", "--out", tmp_path) == 0
    assert (tmp_path / "edges.csv").read_text().startswith("src,dst\n")
    assert json.loads((tmp_path / "truth.json").read_text())["tau_peer"] == 10


def test_simulate_invalid_sigma(tmp_path, caplog):
    doc = load_preset("contemporaneous_invariant").to_dict()
    doc["sigma"] = 0
    cfg = tmp_path / "bad.json"
    cfg.write_text(json.dumps(doc))
    assert run("simulate", "--config", cfg, "--out", tmp_path / "o") == 1
    assert "sigma" in caplog.text
    assert not (tmp_path / "o").exists()


def test_usage_errors(tmp_path):
    assert run("frobnicate") == 1
    assert run("simulate") == 1
    assert run("estimate", "--panel", tmp_path / "missing.csv") == 1


def test_estimate_golden(sim_dir, tmp_path):
    out = tmp_path / "est"
    assert run("estimate", "--panel", sim_dir / "panel.csv", "--baseline", sim_dir / "baseline.csv",
               "--out", out, "--threads", 3) == 0
    lines = (out / "results.csv").read_text().splitlines()
    assert lines[0] == "method,estimand,subgroup,estimate,std_error,n_used"
    assert [l.split(",")[0] for l in lines[1:]] == \
        ["Correlation", "IPW", "Regression", "DoublyRobust", "FE", "WeightedFE"]
    # the same library call on the in-memory simulated data gives identical rows
    study = simulate(load_preset("contemporaneous_invariant", n_units=600))
    expected = run_estimators(study.dataset, ["Correlation", "IPW", "Regression", "DoublyRobust", "FE",
                                              "WeightedFE"])
    assert lines[1:] == [e.csv_row() for e in expected.estimates()]
    side = json.loads((out / "fe_fit.json").read_text())
    assert set(side) == {"FE", "WeightedFE"} and side["FE"]["converged"]
    assert "## All units" in (out / "report.md").read_text()


def test_estimate_reproducible_across_threads(sim_dir, tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    base = ("estimate", "--panel", sim_dir / "panel.csv", "--baseline", sim_dir / "baseline.csv")
    assert run(*base, "--out", a, "--threads", 1) == 0
    assert run(*base, "--out", b, "--threads", 4) == 0
    assert files(a) == files(b)


def test_estimate_unconfounded_all_close(tmp_path):
    sim = tmp_path / "sim"
    assert run("simulate", "--config", "unconfounded", "--out", sim) == 0
    assert run("estimate", "--panel", sim / "panel.csv", "--baseline", sim / "baseline.csv", "--out", tmp_path / "e") == 0
    rows = (tmp_path / "e" / "results.csv").read_text().splitlines()[1:]
    assert len(rows) == 6
    for row in rows:
        assert abs(float(row.split(",")[3]) - 5) < 0.3, row


def test_estimate_subgroups(sim_dir, tmp_path):
    out = tmp_path / "sub"
    assert run("estimate", "--panel", sim_dir / "panel.csv", "--baseline", sim_dir / "baseline.csv",
               "--subgroup", "segment", "--estimators", "Regression,FE", "--out", out) == 0
    rows = [l.split(",") for l in (out / "results.csv").read_text().splitlines()[1:]]
    for method in ("Regression", "FE"):
        assert sorted(r[2] for r in rows if r[0] == method) == ["daily", "monthly", "onboarding", "weekly"]
    report = (out / "report.md").read_text()
    assert report.count("## segment = ") == 4
    assert run("estimate", "--panel", sim_dir / "panel.csv", "--baseline", sim_dir / "baseline.csv",
               "--subgroup", "nope", "--out", out) == 1


def single_period(tmp_path):
    rng = np.random.default_rng(0)
    x = rng.normal(size=(300, 1, 2))
    w = (rng.random((300, 1)) < 0.5).astype(int)
    ds = dataset(x[:, :, 0] + 2 * w + rng.normal(size=(300, 1)), w, x)
    write_panel(ds, tmp_path / "t1.csv")
    return tmp_path / "t1.csv"


def test_estimate_fe_on_single_period(tmp_path):
    panel = single_period(tmp_path)
    assert run("estimate", "--panel", panel, "--out", tmp_path / "o") == 0
    methods = [l.split(",")[0] for l in (tmp_path / "o" / "results.csv").read_text().splitlines()[1:]]
    assert methods == ["Correlation", "IPW", "Regression", "DoublyRobust"]
    assert "FE: NoWithinVariation" in (tmp_path / "o" / "report.md").read_text()
    # exit nonzero once every requested estimator fails
    assert run("estimate", "--panel", panel, "--estimators", "FE", "--out", tmp_path / "p") == 2


def test_estimate_three_arm(tmp_path):
    rng = np.random.default_rng(1)
    w = rng.integers(1, 4, size=(400, 4))
    y = rng.normal(size=(400, 1)) + 1.0 * (w == 2) + 3.0 * (w == 3) + 0.1 * rng.normal(size=(400, 4))
    write_panel(dataset(y, w, scheme=ArmScheme.three_arm()), tmp_path / "p.csv")
    assert run("estimate", "--panel", tmp_path / "p.csv", "--contrast", "3,2", "--estimators", "FE,Correlation",
               "--out", tmp_path / "o") == 0
    rows = {l.split(",")[0]: float(l.split(",")[3])
            for l in (tmp_path / "o" / "results.csv").read_text().splitlines()[1:]}
    assert rows["FE"] == pytest.approx(2.0, abs=0.05)
    assert rows["Correlation"] == pytest.approx(2.0, abs=0.3)


def test_estimate_spillover(tmp_path):
    sim = tmp_path / "sim"
    assert run("simulate", "--config", "private_invariant", "--set", "n_units=800", "--out", sim) == 0
    assert run("estimate", "--panel", sim / "panel.csv", "--baseline", sim / "baseline.csv", "--edges",
               sim / "edges.csv", "--spillover", "Private", "--estimators", "FE,Correlation",
               "--out", tmp_path / "o") == 0
    rows = [l.split(",") for l in (tmp_path / "o" / "results.csv").read_text().splitlines()[1:]]
    fe = next(r for r in rows if r[0] == "SpilloverFE")
    assert fe[1] == "Spillover" and abs(float(fe[3]) - 10) < 0.5
    # spillover needs the edge file
    assert run("estimate", "--panel", sim / "panel.csv", "--spillover", "Private", "--out", tmp_path / "x") == 1


def test_config_file_with_overrides(sim_dir, tmp_path):
    cfg = tmp_path / "run.json"
    cfg.write_text(json.dumps({"panel": str(sim_dir / "panel.csv"), "baseline": str(sim_dir / "baseline.csv"),
                               "estimators": ["Correlation", "FE"], "out": "from_config"}))
    assert run("estimate", "--config", cfg, "--estimators", "FE") == 0
    rows = (tmp_path / "from_config" / "results.csv").read_text().splitlines()[1:]
    assert [r.split(",")[0] for r in rows] == ["FE"]
    cfg.write_text(json.dumps({"panel": str(sim_dir / "panel.csv"), "estimators": []}))
    assert run("estimate", "--config", cfg) == 1
    cfg.write_text(json.dumps({"panel": str(sim_dir / "panel.csv"), "clip": [0.6, 0.4]}))
    assert run("estimate", "--config", cfg) == 1


@pytest.fixture(scope="module")
def randomized_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("rnd")
    assert run("simulate", "--config", "unconfounded", "--set", "tau=0", "--set", "n_units=3000", "--out", out) == 0
    return out


def test_diagnose_randomized_passes(randomized_dir, tmp_path):
    for design in ("weighting", "cem", "stratify"):
        out = tmp_path / design
        assert run("diagnose", "--panel", randomized_dir / "panel.csv", "--baseline",
                   randomized_dir / "baseline.csv", "--design", design, "--out", out) == 0, design
        lines = (out / "diagnostics.csv").read_text().splitlines()
        assert lines[0] == "kind,statistic,std_error,threshold,pass"
        assert [l.split(",")[0] for l in lines[1:]] == ["BackwardCausality", "AATest", "Balance"]
        assert (out / "balance.csv").read_text().startswith("covariate,smd_before,smd_after")


def test_diagnose_planted_violation(randomized_dir, tmp_path):
    ds = load_panel(randomized_dir / "panel.csv", randomized_dir / "baseline.csv")
    w = ds.treatment.copy()
    y = ds.outcome[:, -1]
    w[:, -1] = (y > np.median(y)).astype(int)
    planted = dataset(ds.outcome, w, ds.covariates, baseline=ds.baseline, baseline_names=ds.baseline_names)
    write_panel(planted, tmp_path / "p.csv", tmp_path / "b.csv")
    assert run("diagnose", "--panel", tmp_path / "p.csv", "--baseline", tmp_path / "b.csv",
               "--out", tmp_path / "o") == 3
    assert "FAIL" in (tmp_path / "o" / "diagnostics.md").read_text()


def test_diagnose_missing_pre_period(randomized_dir, tmp_path):
    assert run("diagnose", "--panel", randomized_dir / "panel.csv", "--out", tmp_path / "o") == 1
    assert run("diagnose", "--panel", randomized_dir / "panel.csv", "--baseline", randomized_dir / "baseline.csv",
               "--pre-period", "nope", "--out", tmp_path / "o") == 1
    # without the A/A check the missing column is fine
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"panel": str(randomized_dir / "panel.csv"),
                               "diagnostics": ["balance", "backward_causality"]}))
    assert run("diagnose", "--config", cfg, "--out", tmp_path / "q") == 0


def test_benchmark_single_scenario(tmp_path):
    suite = tmp_path / "suite.json"
    suite.write_text(json.dumps({"scenarios": ["contemporaneous_invariant"], "overrides": {"n_units": 500},
                                 "replications": 1, "seed": 2,
                                 "assertions": [{"order": ["FE", "Correlation"]}]}))
    assert run("benchmark", "--config", suite, "--out", tmp_path / "a") == 0
    assert run("benchmark", "--config", suite, "--out", tmp_path / "b", "--threads", 2) == 0
    assert files(tmp_path / "a") == files(tmp_path / "b")
    md = (tmp_path / "a" / "table1.md").read_text()
    assert md.count("| Contemporaneous |") == 1
    assert "holds" in md
    suite.write_text(json.dumps({"scenarios": ["contemporaneous_invariant"], "overrides": {"n_units": 500},
                                 "replications": 1, "assertions": [{"order": ["Correlation", "FE"]}]}))
    assert run("benchmark", "--config", suite, "--out", tmp_path / "c") == 3


def test_benchmark_default_suite(tmp_path):
    assert run("benchmark", "--replications", 2, "--out", tmp_path) == 0
    csv = (tmp_path / "table1.csv").read_text().splitlines()
    scenarios = {l.split(",")[0] for l in csv[1:]}
    assert len(scenarios) == 6
    md = (tmp_path / "table1.md").read_text()
    rows = [l for l in md.splitlines() if l.startswith("| ") and "Scenario" not in l]
    assert len(rows) == 6
    assert "FAILS" not in md
