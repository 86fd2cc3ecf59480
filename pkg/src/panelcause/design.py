"""Design stage: propensity scores, matching, stratification and balance."""

from __future__ import annotations

import io
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.special import expit

from .errors import CannotStratify, DegenerateVariance, EmptyResult, SchemaMismatch, SingleArm, SingleClass

RIDGE = 1e-8
SEPARATION_BOUND = 30.0
DEFAULT_CLIP = (0.01, 0.99)


@dataclass(frozen=True, eq=False)
class PropensityModel:
    """Fitted logistic model ``Pr(W = 1 | X)`` on the original feature scale."""

    names: tuple[str, ...]
    intercept: float
    coef: np.ndarray
    std_errors: np.ndarray  # slopes only, same order as coef
    intercept_se: float
    cov: np.ndarray  # (1 + k) x (1 + k), intercept first
    converged: bool
    separated: bool
    iterations: int
    log_likelihood: float
    clip_bounds: tuple[float, float] = DEFAULT_CLIP
    standardized_coef: np.ndarray | None = None

    def __post_init__(self):
        lo, hi = self.clip_bounds
        if not 0 < lo < hi < 1:
            raise ValueError(f"clip bounds must satisfy 0 < lo < hi < 1, got {self.clip_bounds}")

    def coefficient(self, name: str) -> float:
        return float(self.coef[self.names.index(name)])

    def std_error(self, name: str) -> float:
        return float(self.std_errors[self.names.index(name)])

    def linear_predictor(self, features) -> np.ndarray:
        x = np.asarray(features, dtype=float)
        if x.ndim == 1:
            x = x[:, None]
        if x.shape[1] != len(self.names):
            raise SchemaMismatch(f"model expects {len(self.names)} features, got {x.shape[1]}")
        return self.intercept + x @ self.coef


def _as_matrix(features) -> np.ndarray:
    x = np.asarray(features, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    return x


def _loglik(eta, y, sw):
    # log(mu) = -log(1 + e^-eta), log(1 - mu) = -log(1 + e^eta)
    return float(-np.sum(sw * (y * np.logaddexp(0.0, -eta) + (1.0 - y) * np.logaddexp(0.0, eta))))


def fit_logistic(
    features,
    labels,
    tol: float = 1e-8,
    max_iter: int = 100,
    weights=None,
    names: Sequence[str] | None = None,
    clip_bounds: tuple[float, float] = DEFAULT_CLIP,
) -> PropensityModel:
    """Maximum-likelihood logistic regression by IRLS.

    Features are standardized internally; constant columns are dropped and
    get a zero coefficient. If any standardized coefficient exceeds
    ``SEPARATION_BOUND`` in magnitude the fit stops with ``separated=True``
    and ``converged=False`` and the coefficients clipped to the bound.
    With ``weights`` the covariance is the sandwich form.
    """
    x = _as_matrix(features)
    y = np.asarray(labels, dtype=float).ravel()
    n, k = x.shape
    if y.shape[0] != n:
        raise ValueError("features and labels differ in length")
    if not np.all((y == 0) | (y == 1)):
        raise ValueError("labels must be binary")
    sw = np.ones(n) if weights is None else np.asarray(weights, dtype=float)
    pos = sw > 0
    if not (np.any(y[pos] == 1) and np.any(y[pos] == 0)):
        raise SingleClass("labels contain a single class")
    names = tuple(names) if names is not None else tuple(f"x{j}" for j in range(k))
    if len(names) != k:
        raise SchemaMismatch("one name per feature column required")

    center = np.average(x, axis=0, weights=sw) if k else np.zeros(0)
    scale = np.sqrt(np.average((x - center) ** 2, axis=0, weights=sw)) if k else np.zeros(0)
    keep = scale > 1e-12 * np.maximum(1.0, np.abs(center))
    z = (x[:, keep] - center[keep]) / scale[keep]
    a = np.column_stack([np.ones(n), z])
    p = a.shape[1]

    ybar = np.average(y, weights=sw)
    beta = np.zeros(p)
    beta[0] = np.log(ybar / (1.0 - ybar))
    converged = separated = False
    it = 0
    for it in range(1, max_iter + 1):
        mu = expit(a @ beta)
        wt = sw * mu * (1.0 - mu)
        h = (a * wt[:, None]).T @ a + RIDGE * np.eye(p)
        step = np.linalg.solve(h, a.T @ (sw * (y - mu)))
        beta = beta + step
        if np.any(np.abs(beta) > SEPARATION_BOUND):
            np.clip(beta, -SEPARATION_BOUND, SEPARATION_BOUND, out=beta)
            separated = True
            break
        if np.max(np.abs(step)) < tol:
            converged = True
            break

    eta = a @ beta
    mu = expit(eta)
    h = (a * (sw * mu * (1.0 - mu))[:, None]).T @ a + RIDGE * np.eye(p)
    hinv = np.linalg.inv(h)
    if weights is None:
        cov_std = hinv
    else:
        s = a * (sw * (y - mu))[:, None]
        cov_std = hinv @ (s.T @ s) @ hinv

    # back to the original scale: slopes / scale, intercept shifted by centers
    m = np.eye(p)
    m[1:, 1:] = np.diag(1.0 / scale[keep])
    m[0, 1:] = -center[keep] / scale[keep]
    b = m @ beta
    cov_k = m @ cov_std @ m.T
    full = np.zeros(k + 1, dtype=bool)
    full[0] = True
    full[1:] = keep
    cov = np.zeros((k + 1, k + 1))
    cov[np.ix_(full, full)] = cov_k
    coef = np.zeros(k)
    coef[keep] = b[1:]
    se = np.sqrt(np.clip(np.diag(cov), 0, None))
    std_coef = np.zeros(k)
    std_coef[keep] = beta[1:]
    return PropensityModel(
        names=names,
        intercept=float(b[0]),
        coef=coef,
        std_errors=se[1:],
        intercept_se=float(se[0]),
        cov=cov,
        converged=converged,
        separated=separated,
        iterations=it,
        log_likelihood=_loglik(eta, y, sw),
        clip_bounds=tuple(clip_bounds),
        standardized_coef=std_coef,
    )


def predict_propensity(model: PropensityModel, features) -> np.ndarray:
    """Fitted probabilities clipped to ``model.clip_bounds``."""
    lo, hi = model.clip_bounds
    return np.clip(expit(model.linear_predictor(features)), lo, hi)


def fit_propensity_per_time(
    features: np.ndarray,
    treated: np.ndarray,
    clip_bounds: tuple[float, float] = DEFAULT_CLIP,
    names: Sequence[str] | None = None,
) -> np.ndarray:
    """Fit one logistic model per time slice of an ``N x T x k`` tensor.

    Returns the ``N x T`` matrix of clipped propensities. A slice where one
    arm is absent gets the constant proportion, clipped.
    """
    features = np.asarray(features, dtype=float)
    treated = np.asarray(treated, dtype=float)
    n, t = treated.shape
    out = np.empty((n, t))
    lo, hi = clip_bounds
    for j in range(t):
        try:
            model = fit_logistic(features[:, j, :], treated[:, j], names=names, clip_bounds=clip_bounds)
            out[:, j] = predict_propensity(model, features[:, j, :])
        except SingleClass:
            out[:, j] = np.clip(treated[:, j].mean(), lo, hi)
    return out


# -- balance ---------------------------------------------------------------------

def _wstats(x, w):
    sw = w.sum()
    m = np.sum(w * x) / sw
    denom = sw - np.sum(w * w) / sw
    v = np.sum(w * (x - m) ** 2) / denom if denom > 0 else 0.0
    return m, v


def standardized_mean_diff(x, w_arm, weights=None) -> float:
    """Difference in arm means over the root mean of the two arm variances.

    Variances use reliability weights, so unit weights give the usual
    ``ddof=1`` sample variances.
    """
    x = np.asarray(x, dtype=float).ravel()
    d = np.asarray(w_arm).ravel().astype(bool)
    if x.shape != d.shape:
        raise ValueError("x and w_arm differ in length")
    w = np.ones_like(x) if weights is None else np.asarray(weights, dtype=float).ravel()
    if np.any(w < 0):
        raise ValueError("weights must be nonnegative")
    t_w, c_w = w[d], w[~d]
    if t_w.sum() <= 0 or c_w.sum() <= 0:
        raise SingleArm("both arms need positive total weight")
    m1, v1 = _wstats(x[d], t_w)
    m0, v0 = _wstats(x[~d], c_w)
    pooled = np.sqrt((v1 + v0) / 2.0)
    scale = max(1.0, abs(m1), abs(m0))
    if pooled <= 1e-12 * scale:
        if abs(m1 - m0) <= 1e-12 * scale:
            return 0.0
        raise DegenerateVariance("zero variance in both arms with unequal means")
    return float((m1 - m0) / pooled)


def effective_sample_size(weights) -> float:
    w = np.asarray(weights, dtype=float)
    s2 = np.sum(w * w)
    return float(w.sum() ** 2 / s2) if s2 > 0 else 0.0


@dataclass
class BalanceReport:
    covariates: tuple[str, ...]
    smd_before: np.ndarray
    smd_after: np.ndarray
    n_treated: float
    n_control: float
    threshold: float = 0.1

    @property
    def worst_smd(self) -> float:
        return float(np.max(np.abs(self.smd_after))) if len(self.smd_after) else 0.0

    @property
    def worst_smd_before(self) -> float:
        return float(np.max(np.abs(self.smd_before))) if len(self.smd_before) else 0.0

    @property
    def passed(self) -> bool:
        return self.worst_smd < self.threshold

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write("covariate,smd_before,smd_after\n")
        for name, b, a in zip(self.covariates, self.smd_before, self.smd_after):
            buf.write(f"{name},{b!r},{a!r}\n")
        return buf.getvalue()

    def to_markdown(self) -> str:
        lines = ["| covariate | SMD before | SMD after |", "|---|---:|---:|"]
        for name, b, a in zip(self.covariates, self.smd_before, self.smd_after):
            lines.append(f"| {name} | {b:.4f} | {a:.4f} |")
        lines.append("")
        lines.append(
            f"worst |SMD| after: {self.worst_smd:.4f} (threshold {self.threshold}); "
            f"effective n treated {self.n_treated:.1f}, control {self.n_control:.1f}"
        )
        return "\n".join(lines) + "\n"


# -- matching and stratification --------------------------------------------------

@dataclass
class MatchResult:
    retained: np.ndarray  # unit positions kept
    weights: np.ndarray  # one weight per retained unit
    buckets: np.ndarray  # bucket id per retained unit
    n_buckets: int
    n_dropped_buckets: int

    def full_weights(self, n: int) -> np.ndarray:
        """Weights over all ``n`` units, zero for dropped ones."""
        w = np.zeros(n)
        w[self.retained] = self.weights
        return w


def cem_match(features, w_arm, coarsening: Sequence[np.ndarray | None]) -> MatchResult:
    """Coarsened exact matching.

    ``coarsening[j]`` is a strictly increasing array of bin edges for column
    ``j``, or ``None`` to match that column exactly (categorical). Buckets
    without both arms are dropped. Treated units get weight 1 and controls
    ``n_treated / n_control`` of their bucket.
    """
    x = _as_matrix(features)
    d = np.asarray(w_arm).ravel().astype(bool)
    if len(coarsening) != x.shape[1]:
        raise ValueError("one coarsening entry per feature column required")
    codes = np.empty(x.shape, dtype=np.int64)
    for j, edges in enumerate(coarsening):
        if edges is None:
            _, codes[:, j] = np.unique(x[:, j], return_inverse=True)
        else:
            edges = np.asarray(edges, dtype=float)
            if np.any(np.diff(edges) <= 0):
                raise ValueError(f"bin edges for column {j} must be strictly increasing")
            codes[:, j] = np.searchsorted(edges, x[:, j], side="right")
    _, bucket = np.unique(codes, axis=0, return_inverse=True)
    bucket = bucket.ravel()
    nb = int(bucket.max()) + 1 if bucket.size else 0
    n_t = np.bincount(bucket, weights=d.astype(float), minlength=nb)
    n_c = np.bincount(bucket, weights=(~d).astype(float), minlength=nb)
    ok = (n_t > 0) & (n_c > 0)
    retained = np.flatnonzero(ok[bucket])
    if retained.size == 0:
        raise EmptyResult("no bucket contains both arms")
    b = bucket[retained]
    w = np.where(d[retained], 1.0, n_t[b] / np.where(n_c[b] > 0, n_c[b], 1.0))
    _, b_dense = np.unique(b, return_inverse=True)
    return MatchResult(retained=retained, weights=w, buckets=b_dense.ravel(),
                       n_buckets=int(ok.sum()), n_dropped_buckets=int((~ok).sum()))


@dataclass
class Strata:
    edges: np.ndarray  # K + 1 strictly increasing boundaries
    members: list[np.ndarray]
    notes: list[str] = field(default_factory=list)

    @property
    def n_strata(self) -> int:
        return len(self.members)

    def labels(self, n: int) -> np.ndarray:
        out = np.full(n, -1, dtype=np.int64)
        for k, m in enumerate(self.members):
            out[m] = k
        return out

    def weights(self, w_arm) -> np.ndarray:
        """ATE weights: ``n_s / n_s,arm`` for each unit of stratum ``s``."""
        d = np.asarray(w_arm).astype(bool)
        out = np.zeros(d.size)
        for m in self.members:
            nt = d[m].sum()
            nc = m.size - nt
            out[m] = np.where(d[m], m.size / nt, m.size / nc)
        return out


def stratify(scores, w_arm, k: int = 5) -> Strata:
    """Quantile bins of the propensity score, merged until each has both arms.

    A bin missing an arm is merged into the next bin (or the previous one
    for the last bin); each merge is recorded in ``notes``.
    """
    s = np.asarray(scores, dtype=float).ravel()
    d = np.asarray(w_arm).ravel().astype(bool)
    if k < 1:
        raise ValueError("k must be at least 1")
    if not d.any() or d.all():
        raise CannotStratify("sample lacks one of the arms")
    notes = []
    edges = np.unique(np.quantile(s, np.linspace(0.0, 1.0, k + 1)))
    if edges.size == 1:
        edges = np.array([edges[0], edges[0]])
        notes.append("all scores equal: single stratum")
    elif edges.size < k + 1:
        notes.append(f"tied quantiles: {edges.size - 1} strata instead of {k}")

    def assign(e):
        return np.clip(np.searchsorted(e, s, side="right") - 1, 0, max(e.size - 2, 0))

    while True:
        lab = assign(edges)
        nbin = max(edges.size - 1, 1)
        nt = np.bincount(lab, weights=d.astype(float), minlength=nbin)
        nc = np.bincount(lab, weights=(~d).astype(float), minlength=nbin)
        bad = np.flatnonzero((nt == 0) | (nc == 0))
        if bad.size == 0:
            break
        if nbin == 1:
            raise CannotStratify("even a single stratum lacks both arms")
        b = int(bad[0])
        drop = b + 1 if b + 1 < nbin else b
        notes.append(f"merged stratum {b} with {'next' if drop == b + 1 else 'previous'} (single-armed)")
        edges = np.delete(edges, drop)
    members = [np.flatnonzero(lab == j) for j in range(max(edges.size - 1, 1))]
    return Strata(edges=edges, members=members, notes=notes)
