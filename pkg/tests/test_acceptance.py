"""Acceptance gate: one test per criterion, each recording a PASS/FAIL line."""

import time
import tracemalloc

import numpy as np

from panelcause import (
    FixedEffectsSpec,
    aa_test,
    backward_causality_check,
    balance_report,
    fit_fe,
    fit_logistic,
    load_preset,
    predict_propensity,
    run_benchmark,
    simulate,
)
from panelcause.cli import main

from _util import random_panel
from test_design import logistic_draw, newton_oracle
from test_fixed_effects import dummy_ols

ALL = ["Correlation", "IPW", "Regression", "DoublyRobust", "FE", "WeightedFE"]


def test_c1_fe_oracle(criterion):
    t0 = time.perf_counter()
    worst = 0.0
    rng = np.random.default_rng(2024)
    for _ in range(10):
        ds = random_panel(rng, int(rng.integers(3, 26)), int(rng.integers(2, 7)), k=int(rng.integers(1, 4)))
        for two_way in (False, True):
            fit = fit_fe(ds, FixedEffectsSpec(time_effects=two_way))
            worst = max(worst, float(np.max(np.abs(fit.coef - dummy_ols(ds, two_way)))))
    dt = time.perf_counter() - t0
    ok = worst < 1e-8 and dt < 5
    criterion(1, ok, f"max |FE - dummy OLS| = {worst:.2e} (< 1e-8), {dt:.2f}s (< 5s)")
    assert ok


def test_c2_unconfounded_recovery(criterion):
    t0 = time.perf_counter()
    cfg = load_preset("unconfounded", estimators=ALL)
    table = run_benchmark([cfg], 10, seed=11)
    dt = time.perf_counter() - t0
    row = table.row("unconfounded")
    means = {e: row.cells[e].mean for e in ALL}
    ok = all(abs(m - 5) < 0.3 for m in means.values()) and dt < 60
    detail = ", ".join(f"{e} {m:.3f}" for e, m in means.items())
    criterion(2, ok, f"means over 10 seeds (truth 5, tol 0.3): {detail}; {dt:.1f}s (< 60s)")
    assert ok


def test_c3_time_invariant_pattern(criterion):
    cfg = load_preset("contemporaneous_invariant", estimators=["Correlation", "FE", "WeightedFE"])
    row = run_benchmark([cfg], 20, seed=3).row("contemporaneous_invariant")
    b = {e: abs(row.cells[e].bias) for e in ("Correlation", "FE", "WeightedFE")}
    ok = b["FE"] < 0.15 and b["WeightedFE"] < 0.15 and b["Correlation"] > 2.5
    criterion(3, ok, f"|bias| FE {b['FE']:.3f}, WeightedFE {b['WeightedFE']:.3f} (< 0.15); "
                     f"Correlation {b['Correlation']:.2f} (> 2.5)")
    assert ok


def test_c4_time_varying_pattern(criterion):
    cfg = load_preset("contemporaneous_varying", estimators=["Correlation", "DoublyRobust", "FE"])
    row = run_benchmark([cfg], 20, seed=4).row("contemporaneous_varying")
    b = {e: abs(row.cells[e].bias) for e in ("Correlation", "DoublyRobust", "FE")}
    ok = b["FE"] < b["DoublyRobust"] < b["Correlation"]
    criterion(4, ok, f"|bias| FE {b['FE']:.3f} < DR {b['DoublyRobust']:.3f} < Correlation {b['Correlation']:.2f}")
    assert ok


def test_c5_spillover_recovery(criterion):
    t0 = time.perf_counter()
    private = load_preset("private_invariant", estimators=["FE"])
    public = load_preset("public_invariant", estimators=["FE"])
    assert (private.n_units, private.n_times, private.network["mean_degree"]) == (3000, 6, 10)
    assert (public.n_units, public.n_times, public.network["mean_degree"]) == (3000, 6, 10)
    table = run_benchmark([private, public], 20, seed=5)
    dt = time.perf_counter() - t0
    priv = table.row("private_invariant").cells["FE"].mean
    pub = table.row("public_invariant").cells["FE"].mean
    ok = abs(priv - 10) < 0.5 and abs(pub - 1) < 0.1 and dt < 120
    criterion(5, ok, f"private FE {priv:.3f} (10 +/- 0.5), public FE {pub:.3f} (1 +/- 0.1), {dt:.1f}s (< 120s)")
    assert ok


def test_c6_balance(criterion):
    passed, worst = 0, []
    for seed in range(10):
        # gamma = 0: assignment is logistic in X alone, so the propensity model is correctly specified
        st = simulate(load_preset("contemporaneous_invariant", n_units=5000, n_times=2, gamma=0.0, seed=seed))
        x, w = st.dataset.covariates[:, -1, :], st.dataset.treatment[:, -1]
        e = predict_propensity(fit_logistic(x, w), x)
        rep = balance_report(x, w, None, np.where(w == 1, 1 / e, 1 / (1 - e)))
        worst.append(rep.worst_smd)
        passed += bool(np.all(np.abs(rep.smd_after) < 0.1))
    ok = passed >= 9
    criterion(6, ok, f"every SMD < 0.1 after IPW in {passed}/10 seeds (need >= 9); worst {max(worst):.3f}")
    assert ok


def test_c7_diagnostics_calibration(criterion):
    aa_pass = 0
    for seed in range(100):
        st = simulate(load_preset("unconfounded", n_units=2000, n_times=2, seed=seed))
        ds = st.dataset
        aa_pass += aa_test(ds.baseline_column("pre_outcome"), ds.treatment[:, -1]).passed
    bc_fail = 0
    for seed in range(20):
        st = simulate(load_preset("unconfounded", n_units=2000, n_times=2, seed=1000 + seed))
        y, x = st.dataset.outcome[:, -1], st.dataset.covariates[:, -1, :]
        planted = (y > np.median(y)).astype(float)
        bc_fail += not backward_causality_check(y, planted, x).passed
    ok = 88 <= aa_pass <= 100 and bc_fail == 20
    criterion(7, ok, f"A/A pass rate {aa_pass}/100 (95 +/- 7); backward causality flags planted "
                     f"violation in {bc_fail}/20")
    assert ok


def test_c8_logistic_recovery(criterion):
    truth = np.array([0.0, 1.0, -0.5, 0.25])
    x, y = logistic_draw(np.random.default_rng(8), 50_000, truth)
    m = fit_logistic(x, y)
    got = np.concatenate([[m.intercept], m.coef])
    vs_truth = float(np.max(np.abs(got - truth)))
    vs_oracle = float(np.max(np.abs(got - newton_oracle(x, y))))
    ok = vs_truth < 0.05 and vs_oracle < 1e-6
    criterion(8, ok, f"max |coef - truth| = {vs_truth:.4f} (< 0.05); vs Newton oracle {vs_oracle:.1e}")
    assert ok


def _pipeline(root):
    sim, est, diag = root / "sim", root / "est", root / "diag"
    codes = [
        main(["simulate", "--config", "contemporaneous_invariant", "--seed", "99", "--set", "n_units=1500",
              "--out", str(sim)]),
        main(["estimate", "--panel", str(sim / "panel.csv"), "--baseline", str(sim / "baseline.csv"),
              "--subgroup", "segment", "--out", str(est)]),
        main(["diagnose", "--panel", str(sim / "panel.csv"), "--baseline", str(sim / "baseline.csv"),
              "--out", str(diag)]),
    ]
    blobs = {str(p.relative_to(root)): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}
    return codes, blobs


def test_c9_reproducibility(criterion, tmp_path):
    codes_a, a = _pipeline(tmp_path / "a")
    codes_b, b = _pipeline(tmp_path / "b")
    ok = codes_a == codes_b and codes_a[:2] == [0, 0] and a == b and len(a) >= 8
    criterion(9, ok, f"{len(a)} output files byte-identical across two runs: {a == b}; exit codes {codes_a}")
    assert ok


def test_c10_scale(criterion):
    k = 10
    cfg = load_preset("contemporaneous_invariant", n_units=100_000, n_times=10, covariate_dim=k,
                      beta=[0.3] * k, delta=[1.0] * k, segments=[])
    st = simulate(cfg)
    tracemalloc.start()
    t0 = time.perf_counter()
    fit = fit_fe(st.dataset)
    dt = time.perf_counter() - t0
    _, peak = tracemalloc.get_traced_memory()
    tracemalloc.stop()
    gb = peak / 1e9
    ok = dt < 60 and gb < 4 and abs(fit.tau[0].estimate - 5) < 0.1
    criterion(10, ok, f"FE at N=100000, T=10, k=10: {dt:.1f}s (< 60s), peak {gb:.2f} GB (< 4 GB), "
                      f"tau {fit.tau[0].estimate:.3f}")
    assert ok
