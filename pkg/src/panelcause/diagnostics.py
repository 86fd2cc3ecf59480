"""Robustness checks run after estimation: backward causality, A/A, balance."""

from __future__ import annotations

import io
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .design import (
    DEFAULT_CLIP,
    SEPARATION_BOUND,
    BalanceReport,
    effective_sample_size,
    fit_logistic,
    predict_propensity,
    standardized_mean_diff,
)
from .estimators import doubly_robust, ipw_estimate, naive_diff, regression_adjust

KINDS = ("BackwardCausality", "AATest", "Balance")


@dataclass(frozen=True)
class DiagnosticReport:
    kind: str
    statistic: float
    std_error: float
    threshold: float
    detail: str = ""

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown diagnostic kind {self.kind!r}")

    @property
    def passed(self) -> bool:
        if self.kind == "Balance":
            return bool(self.statistic < self.threshold)
        # not distinguishable from zero at threshold standard errors
        return bool(abs(self.statistic) <= self.threshold * self.std_error)

    @property
    def z(self) -> float:
        return self.statistic / self.std_error if self.std_error > 0 else float("nan")

    def csv_row(self) -> str:
        return f"{self.kind},{self.statistic!r},{self.std_error!r},{self.threshold!r},{int(self.passed)}"


CSV_HEADER = "kind,statistic,std_error,threshold,pass"


def reports_to_csv(reports: Sequence[DiagnosticReport]) -> str:
    return CSV_HEADER + "\n" + "".join(r.csv_row() + "\n" for r in reports)


def reports_to_markdown(reports: Sequence[DiagnosticReport]) -> str:
    buf = io.StringIO()
    buf.write("| diagnostic | statistic | std. error | threshold | result |\n|---|---:|---:|---:|---|\n")
    for r in reports:
        buf.write(f"| {r.kind} | {r.statistic:.4g} | {r.std_error:.4g} | {r.threshold:g} | "
                  f"{'pass' if r.passed else 'FAIL'} |\n")
    for r in reports:
        if r.detail:
            buf.write(f"\n- {r.kind}: {r.detail}")
    return buf.getvalue() + "\n"


def backward_causality_check(y, w_arm, x=None, weights=None, threshold: float = 2.0) -> DiagnosticReport:
    """Logistic regression of the arm on the outcome and covariates.

    The statistic is the outcome coefficient; the check passes when it is
    within ``threshold`` standard errors of zero. When the outcome alone
    separates the arms the coefficient diverges and is reported as infinite.
    """
    y = np.asarray(y, dtype=float).ravel()
    x = np.zeros((y.size, 0)) if x is None else np.asarray(x, dtype=float).reshape(y.size, -1)
    feats = np.column_stack([y, x])
    names = ("outcome",) + tuple(f"x{j}" for j in range(x.shape[1]))
    model = fit_logistic(feats, w_arm, weights=weights, names=names)
    stat, se = model.coefficient("outcome"), model.std_error("outcome")
    detail = ""
    std_y = model.standardized_coef[0]
    if model.separated and abs(std_y) >= SEPARATION_BOUND * (1 - 1e-9):
        stat, se = float(np.copysign(np.inf, std_y)), float("nan")
        detail = "outcome separates the arms; coefficient diverges"
    elif model.separated:
        detail = "a covariate separates the arms"
    elif not model.converged:
        detail = f"logistic fit did not converge in {model.iterations} iterations"
    return DiagnosticReport("BackwardCausality", float(stat), float(se), threshold, detail)


def aa_test(pre_period_outcome, w_arm, x=None, estimator: str = "Correlation", e=None,
            threshold: float = 2.0, clip_bounds=DEFAULT_CLIP) -> DiagnosticReport:
    """Apply an estimator to a pre-treatment outcome; a valid analysis finds no effect."""
    y = np.asarray(pre_period_outcome, dtype=float).ravel()
    xm = None if x is None else np.asarray(x, dtype=float).reshape(y.size, -1)
    if estimator in ("IPW", "DoublyRobust") and e is None:
        if xm is None or xm.shape[1] == 0:
            e = np.full(y.size, np.clip(np.mean(w_arm), *clip_bounds))
        else:
            e = predict_propensity(fit_logistic(xm, w_arm, clip_bounds=clip_bounds), xm)
    if estimator == "Correlation":
        est = naive_diff(y, w_arm)
    elif estimator == "IPW":
        est = ipw_estimate(y, w_arm, e)
    elif estimator == "Regression":
        est = regression_adjust(y, w_arm, xm)
    elif estimator == "DoublyRobust":
        est = doubly_robust(y, w_arm, xm, e)
    else:
        raise ValueError(f"A/A test supports cross-sectional estimators, not {estimator!r}")
    return DiagnosticReport("AATest", est.estimate, est.std_error, threshold, f"estimator {estimator}")


def balance_report(features, w_arm, weights_before=None, weights_after=None,
                   names: Sequence[str] | None = None, threshold: float = 0.1) -> BalanceReport:
    """Per-covariate SMD before and after adjustment."""
    x = np.asarray(features, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    d = np.asarray(w_arm).ravel().astype(bool)
    names = tuple(names) if names is not None else tuple(f"x{j}" for j in range(x.shape[1]))
    before = np.array([standardized_mean_diff(x[:, j], d, weights_before) for j in range(x.shape[1])])
    after = np.array([standardized_mean_diff(x[:, j], d, weights_after) for j in range(x.shape[1])])
    wa = np.ones(d.size) if weights_after is None else np.asarray(weights_after, dtype=float)
    return BalanceReport(names, before, after, effective_sample_size(wa[d]),
                         effective_sample_size(wa[~d]), threshold)


def balance_diagnostic(report: BalanceReport) -> DiagnosticReport:
    return DiagnosticReport("Balance", report.worst_smd, 0.0, report.threshold,
                            f"worst |SMD| before {report.worst_smd_before:.4f}")
