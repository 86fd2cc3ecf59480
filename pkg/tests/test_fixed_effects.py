import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from panelcause import ArmScheme, FixedEffectsSpec, Network, fit_fe, fit_spillover_fe, fit_weighted_fe, \
    within_transform
from panelcause.errors import EmptyAfterIsolationFilter, NoWithinVariation
from panelcause.fixed_effects import fit_weighted_spillover_fe

from _util import dataset, random_panel


def dummy_ols(ds, time_effects, weights=None):
    """Dense least squares with explicit unit (and time) dummies."""
    n, t = ds.n_units, ds.n_times
    w = ds.treated_indicator().reshape(-1)
    x = ds.covariates.reshape(n * t, -1)
    cols = [w[:, None], x, np.kron(np.eye(n), np.ones((t, 1)))]
    if time_effects:
        cols.append(np.kron(np.ones((n, 1)), np.eye(t))[:, 1:])
    a = np.hstack(cols)
    y = ds.outcome.reshape(-1)
    if weights is not None:
        s = np.sqrt(weights.reshape(-1))
        a, y = a * s[:, None], y * s
    coef, *_ = np.linalg.lstsq(a, y, rcond=None)
    return coef[: 1 + x.shape[1]]


@pytest.mark.parametrize("seed", range(10))
def test_oracle_equivalence(seed):
    rng = np.random.default_rng(seed)
    ds = random_panel(rng, int(rng.integers(5, 26)), int(rng.integers(2, 7)), k=2)
    for two_way in (False, True):
        fit = fit_fe(ds, FixedEffectsSpec(time_effects=two_way))
        np.testing.assert_allclose(fit.coef, dummy_ols(ds, two_way), atol=1e-8)
        w = rng.uniform(0.2, 3.0, size=(ds.n_units, ds.n_times))
        fitw = fit_fe(ds, FixedEffectsSpec(time_effects=two_way, weights=w))
        np.testing.assert_allclose(fitw.coef, dummy_ols(ds, two_way, w), atol=1e-8)


def test_within_examples():
    two = FixedEffectsSpec(time_effects=True)
    np.testing.assert_allclose(within_transform(np.array([[1.0, 2], [3, 4]]), two), 0, atol=1e-12)
    np.testing.assert_allclose(within_transform(np.array([[1.0, 2], [3, 5]]), two),
                               [[0.25, -0.25], [-0.25, 0.25]], atol=1e-12)
    assert np.all(within_transform(np.full((3, 4), 7.0)) == 0)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1), st.booleans())
def test_within_idempotent(seed, two_way):
    rng = np.random.default_rng(seed)
    m = rng.normal(size=(int(rng.integers(2, 12)), int(rng.integers(2, 8))))
    spec = FixedEffectsSpec(time_effects=two_way)
    once = within_transform(m, spec)
    twice = within_transform(once, spec)
    if two_way:
        np.testing.assert_allclose(twice, once, atol=1e-9)
    else:
        # exact up to rounding in the recomputed unit means
        np.testing.assert_allclose(twice, once, atol=1e-14)


def exact_panel(rng, n=40, t=5, tau=5.0):
    u = rng.normal(size=n) * 3
    # assignment depends on U, so comparisons across units are confounded
    w = (rng.random((n, t)) < 1 / (1 + np.exp(-u[:, None]))).astype(int)
    w[:, 0], w[:, 1] = 0, 1
    return dataset(tau * w + u[:, None], w), u


def test_exact_model():
    ds, _ = exact_panel(np.random.default_rng(0))
    assert fit_fe(ds).tau[0].estimate == pytest.approx(5.0, abs=1e-8)


def test_constant_treatment_rejected():
    ds = dataset(np.random.default_rng(1).normal(size=(4, 3)), [[1, 1, 1], [0, 0, 0], [1, 1, 1], [0, 0, 0]])
    with pytest.raises(NoWithinVariation):
        fit_fe(ds)
    with pytest.raises(NoWithinVariation):
        fit_fe(dataset(np.zeros((4, 1)), [[1], [0], [1], [0]]))


def test_shift_invariance():
    rng = np.random.default_rng(2)
    ds = random_panel(rng, 20, 5)
    base = fit_fe(ds).tau[0].estimate
    shifted = dataset(ds.outcome + 123.0, ds.treatment, ds.covariates)
    assert fit_fe(shifted).tau[0].estimate == pytest.approx(base, abs=1e-12)
    u = rng.normal(size=(20, 1)) * 100
    for two_way in (False, True):
        spec = FixedEffectsSpec(time_effects=two_way)
        b = fit_fe(ds, spec).tau[0].estimate
        assert fit_fe(dataset(ds.outcome + u, ds.treatment, ds.covariates), spec).tau[0].estimate == \
            pytest.approx(b, abs=1e-8)


def test_uniform_weights_match_unweighted():
    rng = np.random.default_rng(3)
    ds = random_panel(rng, 30, 4)
    plain = fit_fe(ds)
    half = fit_weighted_fe(ds, None, np.full((30, 4), 0.5))
    ones = fit_fe(ds, FixedEffectsSpec(weights=np.ones((30, 4))))
    np.testing.assert_array_equal(ones.coef, plain.coef)
    assert half.tau[0].estimate == pytest.approx(plain.tau[0].estimate, abs=1e-12)
    with pytest.raises(ValueError):
        fit_weighted_fe(ds, None, np.zeros((30, 4)))


def test_residual_orthogonality():
    rng = np.random.default_rng(4)
    ds = random_panel(rng, 50, 6, k=3)
    for spec in (FixedEffectsSpec(), FixedEffectsSpec(time_effects=True)):
        fit = fit_fe(ds, spec)
        r = fit.residuals.reshape(-1)
        assert np.max(np.abs(fit.design.T @ r)) / r.size < 1e-6


def test_three_arm_contrast():
    rng = np.random.default_rng(5)
    n, t = 200, 6
    u = rng.normal(size=n)
    w = rng.integers(1, 4, size=(n, t))
    y = u[:, None] + 1.0 * (w == 2) + 4.0 * (w == 3) + 0.01 * rng.normal(size=(n, t))
    ds = dataset(y, w, scheme=ArmScheme.three_arm(contrast=(3, 2)))
    fit = fit_fe(ds)
    assert fit.tau[0].estimate == pytest.approx(3.0, abs=0.01)
    vs_noshow = fit_fe(dataset(y, w, scheme=ArmScheme.three_arm(contrast=(3, 1))))
    assert vs_noshow.tau[0].estimate == pytest.approx(4.0, abs=0.01)


def test_subgroup_interactions():
    rng = np.random.default_rng(6)
    n, t = 120, 5
    labels = np.array(["a", "b", "c"] * 40)
    eff = {"a": 1.0, "b": 2.0, "c": 3.0}
    w = rng.integers(0, 2, size=(n, t))
    w[:, 0], w[:, 1] = 0, 1
    y = rng.normal(size=(n, 1)) + w * np.array([eff[g] for g in labels])[:, None]
    fit = fit_fe(dataset(y, w), FixedEffectsSpec(subgroups=labels))
    assert [e.subgroup for e in fit.tau] == ["a", "b", "c"]
    for e in fit.tau:
        assert e.estimate == pytest.approx(eff[e.subgroup], abs=1e-8)
        assert e.n_used == 40


def test_spillover_exact():
    rng = np.random.default_rng(7)
    n, t = 60, 5
    ids = tuple(f"u{i}" for i in range(n))
    src = rng.integers(0, n, 150)
    dst = rng.integers(0, n, 150)
    ok = src != dst
    net = Network.from_edges(ids, src[ok], dst[ok])
    w = (rng.random((n, t)) < 0.2).astype(int)
    s = net.matrix @ w
    u = rng.normal(size=(n, 1))
    z_priv = (s >= 1).astype(float)
    ds = dataset(10 * z_priv + u, w)
    fit = fit_spillover_fe(ds, net, FixedEffectsSpec(neighbor_columns=[]), "Private")
    assert fit.tau[0].estimate == pytest.approx(10.0, abs=1e-8)
    assert fit.tau[0].method == "SpilloverFE" and fit.tau[0].estimand == "Spillover"
    pub = dataset(np.log2(1 + s) + u, w)
    assert fit_spillover_fe(pub, net, FixedEffectsSpec(neighbor_columns=[]), "Public").tau[0].estimate == \
        pytest.approx(1.0, abs=1e-8)
    wf = fit_weighted_spillover_fe(ds, net, FixedEffectsSpec(neighbor_columns=[]), "Private")
    assert wf.tau[0].estimate == pytest.approx(10.0, abs=1e-8)
    with pytest.raises(ValueError):
        fit_weighted_spillover_fe(pub, net, FixedEffectsSpec(neighbor_columns=[]), "Public")


def test_spillover_all_isolated():
    ds = dataset(np.zeros((3, 2)), [[0, 1], [1, 0], [0, 1]])
    net = Network.from_edges(("u0", "u1", "u2"), [], [])
    with pytest.raises(EmptyAfterIsolationFilter):
        fit_spillover_fe(ds, net)


def test_sidecar_json():
    ds = random_panel(np.random.default_rng(8), 10, 3)
    fit = fit_fe(ds, FixedEffectsSpec(time_effects=True))
    doc = fit.sidecar()
    assert doc["converged"] and doc["n_units"] == 10
    assert doc["estimates"][0]["method"] == "FE"
    assert fit.to_json().startswith("{")
