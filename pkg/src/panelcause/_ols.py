"""Least squares with rank checks and sandwich covariances."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .errors import RankDeficient

RANK_TOL = 1e-10


@dataclass
class OLSResult:
    coef: np.ndarray
    resid: np.ndarray
    bread: np.ndarray  # (X'WX)^-1
    q: np.ndarray  # thin Q of sqrt(w) X, columns in original order of R solve
    design: np.ndarray
    weights: np.ndarray | None

    @property
    def n(self) -> int:
        return self.design.shape[0]

    @property
    def k(self) -> int:
        return self.design.shape[1]

    def leverage(self) -> np.ndarray:
        return np.einsum("ij,ij->i", self.q, self.q)

    def scores(self) -> np.ndarray:
        w = 1.0 if self.weights is None else self.weights[:, None]
        return self.design * (w * self.resid[:, None])

    def hc2(self) -> np.ndarray:
        """Heteroskedasticity-robust covariance with leverage correction."""
        h = np.clip(self.leverage(), 0.0, 1.0 - 1e-12)
        s = self.scores() / np.sqrt(1.0 - h)[:, None]
        return self.bread @ (s.T @ s) @ self.bread

    def cluster(self, groups: np.ndarray) -> np.ndarray:
        """Cluster-robust covariance with the usual small-sample factor."""
        s = self.scores()
        _, inv = np.unique(groups, return_inverse=True)
        g = int(inv.max()) + 1
        summed = np.zeros((g, s.shape[1]))
        np.add.at(summed, inv, s)
        meat = summed.T @ summed
        n, k = self.n, self.k
        c = (g / (g - 1.0)) * ((n - 1.0) / max(n - k, 1)) if g > 1 else 1.0
        return c * (self.bread @ meat @ self.bread)


def ols(x: np.ndarray, y: np.ndarray, weights: np.ndarray | None = None, names=None) -> OLSResult:
    """(Weighted) least squares through a column-pivoted QR decomposition.

    Raises :class:`RankDeficient` when a pivot falls below ``RANK_TOL`` relative
    to the largest one.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.ndim != 2 or x.shape[0] != y.shape[0]:
        raise ValueError("design matrix and response disagree in length")
    if x.shape[1] == 0:
        raise RankDeficient("empty design matrix")
    if weights is not None:
        weights = np.asarray(weights, dtype=float)
        sw = np.sqrt(weights)
        xs, ys = x * sw[:, None], y * sw
    else:
        xs, ys = x, y
    if x.shape[0] < x.shape[1]:
        raise RankDeficient(f"{x.shape[0]} rows for {x.shape[1]} columns")
    q, r, piv = scipy.linalg.qr(xs, mode="economic", pivoting=True)
    d = np.abs(np.diag(r))
    if d[0] == 0 or d[-1] < RANK_TOL * d[0]:
        bad = piv[d < RANK_TOL * max(d[0], 1e-300)]
        label = [names[i] for i in bad] if names is not None else bad.tolist()
        raise RankDeficient(f"design matrix is rank deficient (columns {label})")
    beta_p = scipy.linalg.solve_triangular(r, q.T @ ys)
    coef = np.empty_like(beta_p)
    coef[piv] = beta_p
    rinv = scipy.linalg.solve_triangular(r, np.eye(r.shape[0]))
    bread_p = rinv @ rinv.T
    bread = np.empty_like(bread_p)
    bread[np.ix_(piv, piv)] = bread_p
    resid = y - x @ coef
    return OLSResult(coef=coef, resid=resid, bread=bread, q=q, design=x, weights=weights)
