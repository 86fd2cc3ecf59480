"""Runs a list of estimators on one dataset; shared by the CLI and the benchmark."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .design import DEFAULT_CLIP, fit_logistic, predict_propensity
from .errors import CausalError
from .estimators import EffectEstimate, doubly_robust, ipw_estimate, naive_diff, regression_adjust
from .fixed_effects import (
    FixedEffectsFit,
    FixedEffectsSpec,
    fit_fe,
    fit_spillover_fe,
    fit_weighted_fe,
    fit_weighted_spillover_fe,
    propensity_per_cell,
)
from .panel import Network, PanelDataset, neighborhood_covariate_summary, neighborhood_treatment

CROSS_SECTIONAL = ("Correlation", "IPW", "Regression", "DoublyRobust")
PANEL = ("FE", "WeightedFE")
OWN_CONTRIBUTION = "own_contribution"


@dataclass
class Outcome:
    method: str
    subgroup: str | None
    estimate: EffectEstimate | None = None
    error: Exception | None = None

    @property
    def ok(self) -> bool:
        return self.error is None


@dataclass
class EstimationResult:
    outcomes: list[Outcome]
    fits: dict[str, FixedEffectsFit] = field(default_factory=dict)

    def get(self, method: str, subgroup: str | None = None) -> Outcome:
        for o in self.outcomes:
            if o.method == method and o.subgroup == subgroup:
                return o
        raise KeyError((method, subgroup))

    def estimates(self) -> list[EffectEstimate]:
        return [o.estimate for o in self.outcomes if o.ok]


@dataclass
class CrossSection:
    y: np.ndarray
    d: np.ndarray
    x: np.ndarray
    units: np.ndarray  # positions in the dataset
    continuous: bool
    names: tuple[str, ...] = ()


def cross_section(dataset: PanelDataset, time: int | None = None, network: Network | None = None,
                  spillover: str | None = None, own_column: str = OWN_CONTRIBUTION,
                  outcome: np.ndarray | None = None) -> CrossSection:
    """Outcome, treatment and covariates at one period (the last by default).

    Main effects keep the units in the two contrasted arms. Spillover effects
    use the neighborhood treatment, add neighbor covariate summaries, and drop
    isolated units.
    """
    j = dataset.n_times - 1 if time is None else dataset.time_index(time)
    y_all = dataset.outcome[:, j] if outcome is None else np.asarray(outcome, dtype=float)
    if spillover is None:
        codes = dataset.treatment[:, j]
        keep = np.isin(codes, dataset.scheme.contrast)
        units = np.flatnonzero(keep)
        d = (codes[units] == dataset.scheme.treated_code).astype(float)
        return CrossSection(y_all[units], d, dataset.covariates[units, j, :], units, False,
                            dataset.covariate_names)
    if network is None:
        raise ValueError("spillover estimation needs a network")
    t = dataset.times[j]
    z = neighborhood_treatment(dataset, network, t, spillover)
    cols = [c for c in dataset.covariate_names if c != own_column]
    snames, summ = neighborhood_covariate_summary(dataset, network, t, columns=cols)
    units = np.flatnonzero(~network.isolated)
    x = np.column_stack([dataset.covariates[units, j, :], summ[units]])
    return CrossSection(y_all[units], z[units], x, units, spillover == "Public",
                        tuple(dataset.covariate_names) + tuple(snames))


def cross_sectional_estimate(method: str, cs: CrossSection, clip_bounds=DEFAULT_CLIP, e=None) -> EffectEstimate:
    y, d, x = cs.y, cs.d, cs.x
    if method == "Correlation":
        return regression_adjust(y, d, None, method="Correlation") if cs.continuous else naive_diff(y, d)
    if method == "Regression":
        return regression_adjust(y, d, x)
    if method in ("IPW", "DoublyRobust"):
        if cs.continuous:
            raise ValueError(f"{method} needs a binary treatment")
        if e is None:
            e = predict_propensity(fit_logistic(x, d, clip_bounds=clip_bounds), x)
        return ipw_estimate(y, d, e) if method == "IPW" else doubly_robust(y, d, x, e)
    raise ValueError(f"{method!r} is not a cross-sectional estimator")


def run_estimators(
    dataset: PanelDataset,
    estimators: Sequence[str],
    network: Network | None = None,
    spillover: str | None = None,
    time: int | None = None,
    subgroup: str | None = None,
    clip_bounds=DEFAULT_CLIP,
    time_effects: bool = False,
    own_column: str = OWN_CONTRIBUTION,
) -> EstimationResult:
    """Run each estimator; errors are captured per estimator rather than raised.

    With ``subgroup`` (a baseline or label column) cross-sectional estimators
    run on each subgroup separately and the fixed-effects fits interact the
    treatment with subgroup indicators.
    """
    estimand = "Main" if spillover is None else "Spillover"
    labels = None if subgroup is None else dataset.unit_labels(subgroup)
    levels = [None] if labels is None else sorted(set(labels.tolist()), key=str)
    result = EstimationResult([])
    cs = None
    cs_error = None
    if any(m in CROSS_SECTIONAL for m in estimators):
        try:
            cs = cross_section(dataset, time, network, spillover, own_column)
        except (CausalError, ValueError, KeyError) as exc:
            cs_error = exc

    for method in estimators:
        if method in CROSS_SECTIONAL:
            for g in levels:
                if cs_error is not None:
                    result.outcomes.append(Outcome(method, g, error=cs_error))
                    continue
                sub = cs
                if g is not None:
                    mask = labels[cs.units] == g
                    sub = CrossSection(cs.y[mask], cs.d[mask], cs.x[mask], cs.units[mask], cs.continuous, cs.names)
                try:
                    est = cross_sectional_estimate(method, sub, clip_bounds)
                    result.outcomes.append(Outcome(method, g, est.with_tags(estimand=estimand, subgroup=g)))
                except (CausalError, ValueError, np.linalg.LinAlgError) as exc:
                    result.outcomes.append(Outcome(method, g, error=exc))
        elif method in PANEL:
            try:
                fit = _panel_fit(method, dataset, network, spillover, labels, clip_bounds, time_effects, own_column)
                result.fits[method] = fit
                for g in levels:
                    est = fit.estimate(None if g is None else str(g))
                    result.outcomes.append(Outcome(method, g, est.with_tags(estimand=estimand)))
            except (CausalError, ValueError, KeyError, np.linalg.LinAlgError) as exc:
                for g in levels:
                    result.outcomes.append(Outcome(method, g, error=exc))
        else:
            for g in levels:
                result.outcomes.append(Outcome(method, g, error=ValueError(f"unknown estimator {method!r}")))
    return result


def _panel_fit(method, dataset, network, spillover, labels, clip_bounds, time_effects, own_column):
    if spillover is None:
        spec = FixedEffectsSpec(time_effects=time_effects, subgroups=labels)
        if method == "FE":
            return fit_fe(dataset, spec)
        return fit_weighted_fe(dataset, spec, propensity_per_cell(dataset, clip_bounds=clip_bounds))
    if network is None:
        raise ValueError("spillover estimation needs a network")
    cols = [c for c in dataset.covariate_names if c != own_column]
    spec = FixedEffectsSpec(time_effects=time_effects, subgroups=labels, neighbor_columns=cols)
    if method == "FE":
        return fit_spillover_fe(dataset, network, spec, spillover)
    return fit_weighted_spillover_fe(dataset, network, spec, spillover, clip_bounds)
