"""Two-way fixed-effects estimation of contemporaneous and spillover effects.

The model is ``Y[i,t] = beta'X[i,t] + tau * W[i,t] + U_i (+ V_t) + e[i,t]``.
Fixed effects are swept out by (weighted) demeaning, then least squares runs
on the transformed data with standard errors clustered by unit.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from typing import Mapping, Sequence

import numpy as np

from ._ols import ols
from .design import DEFAULT_CLIP, fit_propensity_per_time
from .errors import EmptyAfterIsolationFilter, NoConvergence, NoWithinVariation
from .estimators import EffectEstimate
from .panel import Network, PanelDataset, neighborhood_covariate_summary, neighborhood_treatment

DEFAULT_TOL = 1e-10
DEFAULT_MAX_SWEEPS = 500
# relative norm below which a demeaned column counts as having no within variation
WITHIN_TOL = 1e-9


@dataclass(frozen=True, eq=False)
class FixedEffectsSpec:
    """What goes into a fixed-effects regression.

    ``treatment`` overrides the arm indicators with a real ``N x T`` column
    (the neighborhood treatment for spillover fits). ``covariates`` selects
    dataset covariate columns (``None`` for all); ``extra_columns`` adds
    ``N x T`` regressors. ``subgroups`` holds one label per unit; the effect
    is then estimated separately for each label.
    """

    time_effects: bool = False
    weights: np.ndarray | None = None
    treatment: np.ndarray | None = None
    covariates: Sequence[str] | None = None
    extra_columns: Mapping[str, np.ndarray] = field(default_factory=dict)
    subgroups: np.ndarray | None = None
    neighbor_columns: Sequence[str] | None = None
    neighbor_stats: Sequence[str] = ("mean", "sum")
    tol: float = DEFAULT_TOL
    max_sweeps: int = DEFAULT_MAX_SWEEPS

    def __post_init__(self):
        if self.weights is not None:
            w = np.asarray(self.weights, dtype=float)
            if np.any(w < 0) or not np.any(w > 0):
                raise ValueError("weights must be nonnegative and not all zero")
        if self.tol <= 0:
            raise ValueError("tol must be positive")


@dataclass(eq=False)
class FixedEffectsFit:
    tau: list[EffectEstimate]
    beta: dict[str, float]
    coef_names: list[str]
    coef: np.ndarray
    cov: np.ndarray
    n_units: int
    n_times: int
    demeaning_iterations: int
    converged: bool
    residuals: np.ndarray  # N x T, within-transformed scale
    dropped: list[str] = field(default_factory=list)
    design: np.ndarray | None = field(default=None, repr=False)
    weights: np.ndarray | None = field(default=None, repr=False)

    def estimate(self, subgroup=None) -> EffectEstimate:
        for e in self.tau:
            if e.subgroup == subgroup:
                return e
        raise KeyError(f"no estimate for subgroup {subgroup!r}")

    def sidecar(self) -> dict:
        return {
            "n_units": self.n_units,
            "n_times": self.n_times,
            "demeaning_iterations": self.demeaning_iterations,
            "converged": self.converged,
            "dropped_columns": list(self.dropped),
            "coefficients": {k: float(v) for k, v in zip(self.coef_names, self.coef)},
            "estimates": [
                {"method": e.method, "estimand": e.estimand, "subgroup": e.subgroup,
                 "estimate": e.estimate, "std_error": e.std_error, "n_used": e.n_used}
                for e in self.tau
            ],
        }

    def to_json(self) -> str:
        return json.dumps(self.sidecar(), indent=2, sort_keys=True)


def _weighted_mean(m, w, axis):
    if w is None:
        return m.mean(axis=axis, keepdims=True)
    ww = w if m.ndim == 2 else w[..., None]
    den = ww.sum(axis=axis, keepdims=True)
    num = (m * ww).sum(axis=axis, keepdims=True)
    return np.divide(num, den, out=np.zeros_like(num), where=den > 0)


def _demean(m, weights, two_way, tol, max_sweeps):
    out = np.array(m, dtype=float, copy=True)
    w = None if weights is None else np.asarray(weights, dtype=float)
    if not two_way:
        out -= _weighted_mean(out, w, 1)
        return out, 1, True
    for sweep in range(1, max_sweeps + 1):
        a = _weighted_mean(out, w, 1)
        out -= a
        b = _weighted_mean(out, w, 0)
        out -= b
        change = max(np.max(np.abs(a), initial=0.0), np.max(np.abs(b), initial=0.0))
        if change < tol:
            return out, sweep, True
    return out, max_sweeps, False


def within_transform(m, spec: FixedEffectsSpec | None = None, tol: float | None = None) -> np.ndarray:
    """Sweep unit (and optionally time) fixed effects out of an ``N x T`` array.

    Extra trailing dimensions are treated as separate columns. Two-way mode
    alternates unit and time demeaning until the largest correction in a
    sweep drops below ``tol``.
    """
    spec = spec or FixedEffectsSpec()
    tol = spec.tol if tol is None else tol
    out, _, ok = _demean(m, spec.weights, spec.time_effects, tol, spec.max_sweeps)
    if not ok:
        raise NoConvergence(f"alternating projections did not converge in {spec.max_sweeps} sweeps")
    return out


def _treatment_columns(dataset: PanelDataset, spec: FixedEffectsSpec):
    """Return (names, N x T x p array, contrast coefficients by column)."""
    if spec.treatment is not None:
        z = np.asarray(spec.treatment, dtype=float)
        if z.shape != (dataset.n_units, dataset.n_times):
            raise ValueError("treatment override must be N x T")
        return ["treatment"], z[:, :, None], {"treatment": 1.0}
    scheme = dataset.scheme
    others = [c for c in scheme.codes if c != scheme.baseline_code]
    names = [f"arm{c}" for c in others]
    cols = np.stack([(dataset.treatment == c).astype(float) for c in others], axis=2)
    a, b = scheme.contrast
    contrast = {}
    if a != scheme.baseline_code:
        contrast[f"arm{a}"] = 1.0
    if b != scheme.baseline_code:
        contrast[f"arm{b}"] = contrast.get(f"arm{b}", 0.0) - 1.0
    return names, cols, contrast


def fit_fe(dataset: PanelDataset, spec: FixedEffectsSpec | None = None, method: str = "FE",
           estimand: str = "Main") -> FixedEffectsFit:
    """Fixed-effects least squares for the arm contrast of ``dataset.scheme``.

    Arm indicators are coded against the lowest arm code, so a contrast
    between two non-reference arms is the difference of their coefficients.
    Covariates with no within-unit variation are dropped; a treatment
    without within-unit variation raises :class:`NoWithinVariation`.
    """
    spec = spec or FixedEffectsSpec()
    n, t = dataset.n_units, dataset.n_times
    t_names, t_cols, contrast = _treatment_columns(dataset, spec)

    groups = None
    if spec.subgroups is not None:
        groups = np.asarray(spec.subgroups, dtype=object)
        if groups.shape != (n,):
            raise ValueError("subgroups must hold one label per unit")
        levels = sorted(set(groups.tolist()), key=str)
        inter_names, inter_cols = [], []
        for g in levels:
            mask = (groups == g).astype(float)[:, None]
            for j, nm in enumerate(t_names):
                inter_names.append(f"{nm}:{g}")
                inter_cols.append(t_cols[:, :, j] * mask)
        t_names, t_cols = inter_names, np.stack(inter_cols, axis=2)
    else:
        levels = [None]

    cov_names = list(dataset.covariate_names if spec.covariates is None else spec.covariates)
    cov_idx = [dataset.covariate_names.index(c) for c in cov_names]
    pieces = [t_cols, dataset.covariates[:, :, cov_idx]]
    extra_names = list(spec.extra_columns)
    if extra_names:
        pieces.append(np.stack([np.asarray(spec.extra_columns[k], dtype=float) for k in extra_names], axis=2))
    x = np.concatenate(pieces, axis=2)
    names = t_names + cov_names + extra_names

    w = None if spec.weights is None else np.asarray(spec.weights, dtype=float)
    if w is not None and w.shape != (n, t):
        raise ValueError("weights must be N x T")
    stacked = np.concatenate([dataset.outcome[:, :, None], x], axis=2)
    demeaned, sweeps, ok = _demean(stacked, w, spec.time_effects, spec.tol, spec.max_sweeps)
    if not ok:
        raise NoConvergence(f"alternating projections did not converge in {spec.max_sweeps} sweeps")
    y_t = demeaned[:, :, 0].reshape(-1)
    x_t = demeaned[:, :, 1:].reshape(n * t, -1)

    ww = None if w is None else w.reshape(-1)
    norm = lambda v: np.sqrt(np.sum(v * v * (1.0 if ww is None else ww[:, None]), axis=0))
    before = norm(x.reshape(n * t, -1))
    after = norm(x_t)
    flat = after <= WITHIN_TOL * np.maximum(before, 1e-300)
    n_treat = len(t_names)
    if np.any(flat[:n_treat]):
        bad = [t_names[j] for j in np.flatnonzero(flat[:n_treat])]
        raise NoWithinVariation(f"treatment column(s) {bad} do not vary within units")
    keep = ~flat
    dropped = [nm for nm, f in zip(names, flat) if f]
    names = [nm for nm, k in zip(names, keep) if k]
    x_t = x_t[:, keep]

    used = np.ones(n * t, dtype=bool) if ww is None else ww > 0
    res = ols(x_t[used], y_t[used], weights=None if ww is None else ww[used], names=names)
    unit = np.repeat(np.arange(n), t)[used]
    cov = res.cluster(unit)

    taus = []
    for g in levels:
        vec = np.zeros(len(names))
        for nm, c in contrast.items():
            key = nm if g is None else f"{nm}:{g}"
            vec[names.index(key)] += c
        est = float(vec @ res.coef)
        se = float(np.sqrt(max(vec @ cov @ vec, 0.0)))
        n_g = n if g is None else int(np.sum(groups == g))
        taus.append(EffectEstimate(est, se, method, estimand, None if g is None else str(g), n_g))

    resid = np.zeros(n * t)
    resid[used] = res.resid
    beta = {nm: float(b) for nm, b in zip(names, res.coef) if nm not in t_names}
    return FixedEffectsFit(
        tau=taus, beta=beta, coef_names=names, coef=res.coef, cov=cov,
        n_units=n, n_times=t, demeaning_iterations=sweeps, converged=ok,
        residuals=resid.reshape(n, t), dropped=dropped, design=x_t,
        weights=None if ww is None else ww,
    )


def ipw_cell_weights(treated: np.ndarray, propensity: np.ndarray) -> np.ndarray:
    """``1/e`` for treated cells and ``1/(1-e)`` for the rest."""
    e = np.asarray(propensity, dtype=float)
    if np.any(~np.isfinite(e)) or np.any(e <= 0) or np.any(e >= 1):
        raise ValueError("propensities must lie strictly inside (0, 1) for every used cell")
    d = np.asarray(treated, dtype=float)
    return np.where(d == 1, 1.0 / e, 1.0 / (1.0 - e))


def fit_weighted_fe(dataset: PanelDataset, spec: FixedEffectsSpec | None, propensity_per_cell) -> FixedEffectsFit:
    """Fixed effects with per-cell inverse-propensity weights."""
    spec = spec or FixedEffectsSpec()
    w = ipw_cell_weights(dataset.treated_indicator(), propensity_per_cell)
    return fit_fe(dataset, replace(spec, weights=w), method="WeightedFE")


def propensity_per_cell(dataset: PanelDataset, columns: Sequence[str] | None = None,
                        clip_bounds=DEFAULT_CLIP, treated: np.ndarray | None = None) -> np.ndarray:
    """Per-time-slice logistic propensities of the treated indicator."""
    columns = list(dataset.covariate_names if columns is None else columns)
    idx = [dataset.covariate_names.index(c) for c in columns]
    d = dataset.treated_indicator() if treated is None else treated
    return fit_propensity_per_time(dataset.covariates[:, :, idx], d, clip_bounds, names=columns)


@dataclass(frozen=True, eq=False)
class SpilloverDesign:
    """Spillover regression inputs restricted to connected units."""

    dataset: PanelDataset
    z: np.ndarray
    kept: np.ndarray
    extra: dict


def spillover_design(dataset: PanelDataset, network: Network, spec: FixedEffectsSpec, kind: str) -> SpilloverDesign:
    """Neighborhood treatment and neighbor covariate summaries, isolated units removed."""
    z = neighborhood_treatment(dataset, network, None, kind)
    names, summ = neighborhood_covariate_summary(
        dataset, network, None, spec.neighbor_stats, spec.neighbor_columns)
    kept = ~network.isolated
    if not kept.any():
        raise EmptyAfterIsolationFilter("every unit is isolated")
    sub = dataset.subset_units(kept)
    extra = {nm: summ[kept, :, j] for j, nm in enumerate(names)}
    for k, v in spec.extra_columns.items():
        v = np.asarray(v, dtype=float)
        extra[k] = v[kept] if v.shape[0] == dataset.n_units else v
    return SpilloverDesign(dataset=sub, z=z[kept], kept=kept, extra=extra)


def fit_spillover_fe(dataset: PanelDataset, network: Network, spec: FixedEffectsSpec | None = None,
                     kind: str = "Public") -> FixedEffectsFit:
    """Fixed-effects estimate of the effect of the neighborhood treatment.

    The regressors are the neighborhood treatment (``log2(1 + s)`` for
    ``Public``, ``1[s >= 1]`` for ``Private``), the dataset covariates (which
    should include the unit's own-contribution indicator) and summaries of the
    neighbors' covariates. With ``spec.weights`` the fit is the weighted
    variant.
    """
    spec = spec or FixedEffectsSpec()
    sd = spillover_design(dataset, network, spec, kind)
    weights = spec.weights
    if weights is not None:
        weights = np.asarray(weights, dtype=float)
        if weights.shape[0] == dataset.n_units:
            weights = weights[sd.kept]
    subgroups = spec.subgroups
    if subgroups is not None and len(subgroups) == dataset.n_units:
        subgroups = np.asarray(subgroups, dtype=object)[sd.kept]
    inner = replace(spec, treatment=sd.z, extra_columns=sd.extra, weights=weights, subgroups=subgroups)
    method = "SpilloverFE" if weights is None else "WeightedFE"
    return fit_fe(sd.dataset, inner, method=method, estimand="Spillover")


def fit_weighted_spillover_fe(dataset: PanelDataset, network: Network, spec: FixedEffectsSpec | None = None,
                              kind: str = "Private", clip_bounds=DEFAULT_CLIP) -> FixedEffectsFit:
    """Weighted spillover FE with per-time propensities of a binary neighborhood treatment."""
    if kind != "Private":
        raise ValueError("inverse-propensity weights need a binary (Private) neighborhood treatment")
    spec = spec or FixedEffectsSpec()
    sd = spillover_design(dataset, network, spec, kind)
    cov_names = list(dataset.covariate_names if spec.covariates is None else spec.covariates)
    feats = np.concatenate(
        [sd.dataset.covariates[:, :, [dataset.covariate_names.index(c) for c in cov_names]],
         np.stack(list(sd.extra.values()), axis=2)] if sd.extra else
        [sd.dataset.covariates[:, :, [dataset.covariate_names.index(c) for c in cov_names]]], axis=2)
    e = fit_propensity_per_time(feats, sd.z, clip_bounds)
    w = np.ones((dataset.n_units, dataset.n_times))
    w[sd.kept] = ipw_cell_weights(sd.z, e)
    return fit_spillover_fe(dataset, network, replace(spec, weights=w), kind)
