"""Single-time-point estimators: correlation, IPW, regression and AIPW."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ._ols import ols
from .errors import AllWeightsZero, RankDeficient, SingleArm

METHODS = ("Correlation", "IPW", "Regression", "DoublyRobust", "FE", "WeightedFE", "SpilloverFE")
ESTIMANDS = ("Main", "Spillover")
CSV_HEADER = "method,estimand,subgroup,estimate,std_error,n_used"


@dataclass(frozen=True)
class EffectEstimate:
    estimate: float
    std_error: float
    method: str
    estimand: str = "Main"
    subgroup: str | None = None
    n_used: int = 0

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"unknown method tag {self.method!r}")
        if self.estimand not in ESTIMANDS:
            raise ValueError(f"unknown estimand tag {self.estimand!r}")
        if not self.std_error >= 0:
            raise ValueError("std_error must be nonnegative")

    def with_tags(self, **kw) -> "EffectEstimate":
        return EffectEstimate(**{**self.__dict__, **kw})

    def csv_row(self) -> str:
        sub = "" if self.subgroup is None else self.subgroup
        return f"{self.method},{self.estimand},{sub},{self.estimate!r},{self.std_error!r},{self.n_used}"

    def within(self, k: float = 2.0, value: float = 0.0) -> bool:
        return abs(self.estimate - value) <= k * self.std_error


def _binary(w_arm):
    w = np.asarray(w_arm, dtype=float).ravel()
    if not np.all((w == 0) | (w == 1)):
        raise ValueError("treatment must be a 0/1 vector")
    if w.min() == w.max():
        raise SingleArm("treatment vector contains a single arm")
    return w


def _xmat(x, n):
    if x is None:
        return np.zeros((n, 0))
    x = np.asarray(x, dtype=float)
    return x.reshape(n, -1) if x.ndim != 2 else x


def naive_diff(y, w_arm, weights=None, method: str = "Correlation") -> EffectEstimate:
    """Difference in (weighted) arm means with the unpooled two-sample SE."""
    y = np.asarray(y, dtype=float).ravel()
    w = _binary(w_arm)
    t, c = w == 1, w == 0
    if weights is None:
        m1, m0 = y[t].mean(), y[c].mean()
        v1 = y[t].var(ddof=1) if t.sum() > 1 else 0.0
        v0 = y[c].var(ddof=1) if c.sum() > 1 else 0.0
        se = np.sqrt(v1 / t.sum() + v0 / c.sum())
    else:
        a = np.asarray(weights, dtype=float).ravel()
        if a[t].sum() <= 0 or a[c].sum() <= 0:
            raise AllWeightsZero("an arm has zero total weight")
        m1 = np.sum(a[t] * y[t]) / a[t].sum()
        m0 = np.sum(a[c] * y[c]) / a[c].sum()
        # linearization variance of each weighted mean
        se = np.sqrt(np.sum((a[t] * (y[t] - m1)) ** 2) / a[t].sum() ** 2
                     + np.sum((a[c] * (y[c] - m0)) ** 2) / a[c].sum() ** 2)
    return EffectEstimate(float(m1 - m0), float(se), method, n_used=int(y.size))


def ipw_estimate(y, w_arm, e) -> EffectEstimate:
    """Self-normalized (Hajek) inverse-propensity-weighted difference.

    The SE comes from the influence function with the propensity treated
    as known.
    """
    y = np.asarray(y, dtype=float).ravel()
    w = _binary(w_arm)
    e = np.asarray(e, dtype=float).ravel()
    if y.shape != w.shape or e.shape != w.shape:
        raise ValueError("y, w_arm and e must have equal length")
    if np.any(e <= 0) or np.any(e >= 1):
        raise ValueError("propensities must lie strictly inside (0, 1); clip upstream")
    a1 = w / e
    a0 = (1 - w) / (1 - e)
    s1, s0 = a1.sum(), a0.sum()
    if s1 <= 0 or s0 <= 0:
        raise AllWeightsZero("an arm has zero total weight")
    mu1 = np.sum(a1 * y) / s1
    mu0 = np.sum(a0 * y) / s0
    n = y.size
    psi = n * (a1 * (y - mu1) / s1 - a0 * (y - mu0) / s0)
    se = np.sqrt(np.sum(psi ** 2)) / n
    return EffectEstimate(float(mu1 - mu0), float(se), "IPW", n_used=n)


def regression_adjust(y, w_arm, x=None, weights=None, method: str = "Regression") -> EffectEstimate:
    """OLS of ``y`` on ``[1, w, x]``; the effect is the coefficient on ``w``.

    ``w_arm`` may be continuous (a dose such as a neighborhood treatment).
    Standard errors are HC2.
    """
    y = np.asarray(y, dtype=float).ravel()
    w = np.asarray(w_arm, dtype=float).ravel()
    if w.min() == w.max():
        raise SingleArm("treatment does not vary")
    x = _xmat(x, y.size)
    design = np.column_stack([np.ones(y.size), w, x])
    fit = ols(design, y, weights=weights)
    cov = fit.hc2()
    return EffectEstimate(float(fit.coef[1]), float(np.sqrt(max(cov[1, 1], 0.0))), method, n_used=int(y.size))


def _outcome_model(y, x, mask):
    design = np.column_stack([np.ones(y.size), x])
    if mask.sum() < design.shape[1]:
        raise RankDeficient("too few units in an arm for the outcome model")
    fit = ols(design[mask], y[mask])
    return design @ fit.coef


def doubly_robust(y, w_arm, x, e) -> EffectEstimate:
    """Augmented IPW with separate per-arm OLS outcome models."""
    y = np.asarray(y, dtype=float).ravel()
    w = _binary(w_arm)
    e = np.asarray(e, dtype=float).ravel()
    if np.any(e <= 0) or np.any(e >= 1):
        raise ValueError("propensities must lie strictly inside (0, 1); clip upstream")
    x = _xmat(x, y.size)
    m1 = _outcome_model(y, x, w == 1)
    m0 = _outcome_model(y, x, w == 0)
    phi = m1 - m0 + w * (y - m1) / e - (1 - w) * (y - m0) / (1 - e)
    n = y.size
    return EffectEstimate(float(phi.mean()), float(phi.std(ddof=1) / np.sqrt(n)), "DoublyRobust", n_used=n)
