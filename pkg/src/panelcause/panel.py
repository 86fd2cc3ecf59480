"""Panel and network data model: ingestion, arm schemes and neighborhood features.

A :class:`PanelDataset` stores a balanced panel densely as ``N x T`` matrices.
Units that were not observed during a treatment window carry an explicit arm
code (the no-show arm of the three-arm scheme) instead of a missing row.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field, replace
from typing import Mapping, Sequence

import numpy as np
import pandas as pd
import scipy.sparse as sp

from .errors import (
    DuplicateRow,
    MissingCell,
    PartialMapping,
    SchemaMismatch,
    SelfLoop,
    UnknownArmCode,
    UnknownUnit,
)

PANEL_COLUMNS = ("unit_id", "time", "outcome", "treatment")

_KINDS = ("Binary", "ThreeArm", "Custom")


def _frozen(a, dtype=float):
    a = np.array(a, dtype=dtype)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class ArmScheme:
    """Treatment arm coding.

    ``Binary`` uses 0 = control, 1 = treated. ``ThreeArm`` uses 1 = no-show,
    2 = visit without contributing, 3 = visit and contribute. ``contrast`` is
    the ordered pair ``(treated_code, control_code)`` being estimated.
    """

    kind: str
    codes: tuple[int, ...]
    contrast: tuple[int, int]

    def __post_init__(self):
        if self.kind not in _KINDS:
            raise ValueError(f"unknown arm scheme kind {self.kind!r}")
        a, b = self.contrast
        if a == b or a not in self.codes or b not in self.codes:
            raise ValueError(f"contrast {self.contrast} must be two distinct codes of {self.codes}")

    @classmethod
    def binary(cls) -> "ArmScheme":
        return cls("Binary", (0, 1), (1, 0))

    @classmethod
    def three_arm(cls, contrast=(3, 2)) -> "ArmScheme":
        return cls("ThreeArm", (1, 2, 3), tuple(contrast))

    @property
    def treated_code(self) -> int:
        return self.contrast[0]

    @property
    def control_code(self) -> int:
        return self.contrast[1]

    @property
    def baseline_code(self) -> int:
        """Reference arm for indicator coding in regressions (lowest code)."""
        return min(self.codes)

    def indicator(self, treatment: np.ndarray) -> np.ndarray:
        """Binary treated indicator ``1[W == treated_code]`` as float."""
        return (np.asarray(treatment) == self.treated_code).astype(float)

    def validate(self, treatment: np.ndarray) -> None:
        bad = np.setdiff1d(np.unique(treatment), self.codes)
        if bad.size:
            raise UnknownArmCode(f"codes {bad.tolist()} not in {self.kind} scheme {list(self.codes)}")


@dataclass(frozen=True)
class WindowConfig:
    """Measurement-window metadata (durations in days). Never used in computation."""

    lambda_w: float = 1.0
    lambda_y: float = 7.0
    gap: float = 0.0


@dataclass(frozen=True, eq=False)
class PanelDataset:
    unit_ids: tuple[str, ...]
    times: tuple[int, ...]
    outcome: np.ndarray
    treatment: np.ndarray
    covariates: np.ndarray
    covariate_names: tuple[str, ...]
    baseline: np.ndarray
    baseline_names: tuple[str, ...]
    scheme: ArmScheme = field(default_factory=ArmScheme.binary)
    labels: Mapping[str, tuple[str, ...]] = field(default_factory=dict)
    window: WindowConfig = field(default_factory=WindowConfig)

    def __post_init__(self):
        n, t = len(self.unit_ids), len(self.times)
        set_ = object.__setattr__
        set_(self, "unit_ids", tuple(str(u) for u in self.unit_ids))
        set_(self, "times", tuple(int(x) for x in self.times))
        set_(self, "covariate_names", tuple(self.covariate_names))
        set_(self, "baseline_names", tuple(self.baseline_names))
        set_(self, "outcome", _frozen(self.outcome))
        set_(self, "treatment", _frozen(self.treatment, dtype=np.int64))
        cov = np.asarray(self.covariates, dtype=float)
        if cov.size == 0:
            cov = cov.reshape(n, t, 0)
        set_(self, "covariates", _frozen(cov))
        base = np.asarray(self.baseline, dtype=float)
        if base.size == 0:
            base = base.reshape(n, 0)
        set_(self, "baseline", _frozen(base))
        set_(self, "labels", {k: tuple(str(x) for x in v) for k, v in dict(self.labels).items()})

        if len(set(self.unit_ids)) != n:
            raise SchemaMismatch("unit ids must be unique")
        if t < 1 or list(self.times) != sorted(set(self.times)):
            raise SchemaMismatch("times must be strictly increasing integers")
        if self.outcome.shape != (n, t) or self.treatment.shape != (n, t):
            raise SchemaMismatch(f"outcome/treatment must be {n} x {t}")
        if self.covariates.shape[:2] != (n, t) or self.covariates.shape[2] != len(self.covariate_names):
            raise SchemaMismatch("covariates must be N x T x k with one name per column")
        if self.baseline.shape != (n, len(self.baseline_names)):
            raise SchemaMismatch("baseline must be N x k0 with one name per column")
        for names in (self.covariate_names, self.baseline_names):
            if len(set(names)) != len(names):
                raise SchemaMismatch(f"duplicate column names in {names}")
        for k, v in self.labels.items():
            if len(v) != n:
                raise SchemaMismatch(f"label column {k!r} must have one entry per unit")
        self.scheme.validate(self.treatment)

    @property
    def n_units(self) -> int:
        return len(self.unit_ids)

    @property
    def n_times(self) -> int:
        return len(self.times)

    def time_index(self, t: int) -> int:
        try:
            return self.times.index(int(t))
        except ValueError:
            raise KeyError(f"time {t} not in panel") from None

    def covariate(self, name: str) -> np.ndarray:
        """``N x T`` slice of one time-varying covariate."""
        return self.covariates[:, :, self.covariate_names.index(name)]

    def baseline_column(self, name: str) -> np.ndarray:
        return self.baseline[:, self.baseline_names.index(name)]

    def unit_labels(self, name: str) -> np.ndarray:
        """Per-unit labels from a label column or a numeric baseline column."""
        if name in self.labels:
            return np.asarray(self.labels[name], dtype=object)
        if name in self.baseline_names:
            return np.array([f"{v:g}" for v in self.baseline_column(name)], dtype=object)
        raise KeyError(f"no baseline column {name!r}")

    def treated_indicator(self) -> np.ndarray:
        return self.scheme.indicator(self.treatment)

    def subset_units(self, mask: np.ndarray) -> "PanelDataset":
        mask = np.asarray(mask, dtype=bool)
        idx = np.flatnonzero(mask)
        return replace(
            self,
            unit_ids=tuple(self.unit_ids[i] for i in idx),
            outcome=self.outcome[idx],
            treatment=self.treatment[idx],
            covariates=self.covariates[idx],
            baseline=self.baseline[idx],
            labels={k: tuple(v[i] for i in idx) for k, v in self.labels.items()},
        )

    def subset_times(self, times: Sequence[int]) -> "PanelDataset":
        idx = [self.time_index(t) for t in times]
        return replace(
            self,
            times=tuple(self.times[i] for i in idx),
            outcome=self.outcome[:, idx],
            treatment=self.treatment[:, idx],
            covariates=self.covariates[:, idx],
        )

    def with_covariates(self, names: Sequence[str], values: np.ndarray) -> "PanelDataset":
        """Return a copy with extra ``N x T x m`` covariate columns appended."""
        values = np.asarray(values, dtype=float)
        if values.ndim == 2:
            values = values[:, :, None]
        return replace(
            self,
            covariates=np.concatenate([self.covariates, values], axis=2),
            covariate_names=self.covariate_names + tuple(names),
        )


@dataclass(frozen=True, eq=False)
class Network:
    """Undirected simple graph over the units of a panel (by position)."""

    unit_ids: tuple[str, ...]
    adjacency: tuple[np.ndarray, ...]

    def __post_init__(self):
        adj = tuple(_frozen(a, dtype=np.int64) for a in self.adjacency)
        object.__setattr__(self, "adjacency", adj)
        object.__setattr__(self, "unit_ids", tuple(self.unit_ids))
        n = len(adj)
        if n != len(self.unit_ids):
            raise ValueError("adjacency must have one list per unit")
        for i, nb in enumerate(adj):
            if nb.size and (np.any(np.diff(nb) <= 0) or nb[0] < 0 or nb[-1] >= n):
                raise ValueError(f"neighbor list of unit {i} must be sorted, unique and in range")
            if np.any(nb == i):
                raise SelfLoop(f"self-loop at unit {self.unit_ids[i]!r}")
        m = self.matrix
        if (m != m.T).nnz:
            raise ValueError("adjacency is not symmetric")

    @classmethod
    def from_edges(cls, unit_ids: Sequence[str], src: np.ndarray, dst: np.ndarray) -> "Network":
        """Build from integer endpoint arrays; symmetrizes and deduplicates."""
        n = len(unit_ids)
        src = np.asarray(src, dtype=np.int64)
        dst = np.asarray(dst, dtype=np.int64)
        if np.any(src == dst):
            k = int(src[np.flatnonzero(src == dst)[0]])
            raise SelfLoop(f"self-loop at unit {unit_ids[k]!r}")
        rows = np.concatenate([src, dst])
        cols = np.concatenate([dst, src])
        m = sp.coo_matrix((np.ones(rows.size), (rows, cols)), shape=(n, n)).tocsr()
        m.sum_duplicates()
        m.sort_indices()
        adj = tuple(m.indices[m.indptr[i]:m.indptr[i + 1]].copy() for i in range(n))
        return cls(tuple(unit_ids), adj)

    @property
    def n_units(self) -> int:
        return len(self.adjacency)

    @property
    def degree(self) -> np.ndarray:
        return np.array([a.size for a in self.adjacency], dtype=np.int64)

    @property
    def isolated(self) -> np.ndarray:
        """Units with no connections; these are dropped from spillover analysis."""
        return self.degree == 0

    @property
    def matrix(self) -> sp.csr_matrix:
        deg = np.array([a.size for a in self.adjacency], dtype=np.int64)
        indptr = np.concatenate([[0], np.cumsum(deg)])
        indices = np.concatenate(self.adjacency) if deg.sum() else np.zeros(0, dtype=np.int64)
        return sp.csr_matrix((np.ones(indices.size), indices, indptr), shape=(len(deg), len(deg)))

    def edges(self) -> np.ndarray:
        """Undirected edge list as an ``m x 2`` array with ``src < dst``."""
        pairs = [(i, j) for i, nb in enumerate(self.adjacency) for j in nb if i < j]
        return np.array(pairs, dtype=np.int64).reshape(-1, 2)

    def is_symmetric(self) -> bool:
        return all(i in set(self.adjacency[j].tolist()) for i, nb in enumerate(self.adjacency) for j in nb)


# -- ingestion -----------------------------------------------------------------

def _read_csv(path, what):
    try:
        return pd.read_csv(path, dtype={"unit_id": str}, keep_default_na=False, na_values=[""],
                           float_precision="round_trip")
    except FileNotFoundError:
        raise
    except Exception as exc:
        raise SchemaMismatch(f"cannot parse {what} file {path}: {exc}") from exc


def load_panel(
    panel_file,
    baseline_file=None,
    schema: Mapping[str, str] | None = None,
    scheme: ArmScheme | None = None,
    window: WindowConfig | None = None,
) -> PanelDataset:
    """Read a long-format panel CSV and a baseline CSV into a dense dataset.

    ``schema`` maps canonical names (``unit_id``, ``time``, ``outcome``,
    ``treatment``) to the column names used in the files. Every covariate
    column not named in the schema becomes a time-varying covariate.
    """
    scheme = scheme or ArmScheme.binary()
    rename = {v: k for k, v in (schema or {}).items()}
    df = _read_csv(panel_file, "panel").rename(columns=rename)
    missing = [c for c in PANEL_COLUMNS if c not in df.columns]
    if missing:
        raise SchemaMismatch(f"panel file lacks columns {missing}")
    df["unit_id"] = df["unit_id"].astype(str)
    try:
        times_col = df["time"].astype(np.int64)
    except (TypeError, ValueError) as exc:
        raise SchemaMismatch(f"time column must be integer: {exc}") from exc
    treat = pd.to_numeric(df["treatment"], errors="coerce")
    if treat.isna().any() or np.any(treat != np.round(treat)):
        raise UnknownArmCode("treatment column must hold integer arm codes")
    df = df.assign(time=times_col, treatment=treat.astype(np.int64))
    cov_names = [c for c in df.columns if c not in PANEL_COLUMNS]
    for c in ["outcome", *cov_names]:
        if not pd.api.types.is_numeric_dtype(df[c]):
            raise SchemaMismatch(f"column {c!r} must be numeric")

    dup = df.duplicated(["unit_id", "time"])
    if dup.any():
        row = df[dup].iloc[0]
        raise DuplicateRow(row["unit_id"], int(row["time"]))

    units = list(pd.unique(df["unit_id"]))
    times = sorted(pd.unique(df["time"]).tolist())
    n, t = len(units), len(times)
    ui = pd.Index(units).get_indexer(df["unit_id"])
    ti = pd.Index(times).get_indexer(df["time"])
    present = np.zeros((n, t), dtype=bool)
    present[ui, ti] = True
    if not present.all():
        i, j = np.argwhere(~present)[0]
        raise MissingCell(units[i], times[j])

    outcome = np.empty((n, t))
    outcome[ui, ti] = df["outcome"].to_numpy(float)
    treatment = np.empty((n, t), dtype=np.int64)
    treatment[ui, ti] = df["treatment"].to_numpy()
    scheme.validate(treatment)
    cov = np.empty((n, t, len(cov_names)))
    if cov_names:
        cov[ui, ti, :] = df[cov_names].to_numpy(float)

    base_names: list[str] = []
    base = np.zeros((n, 0))
    labels: dict[str, tuple[str, ...]] = {}
    if baseline_file is not None:
        bdf = _read_csv(baseline_file, "baseline").rename(columns=rename)
        if "unit_id" not in bdf.columns:
            raise SchemaMismatch("baseline file lacks a unit_id column")
        bdf["unit_id"] = bdf["unit_id"].astype(str)
        if bdf["unit_id"].duplicated().any():
            raise DuplicateRow(bdf.loc[bdf["unit_id"].duplicated(), "unit_id"].iloc[0], None)
        bdf = bdf.set_index("unit_id")
        absent = [u for u in units if u not in bdf.index]
        if absent:
            raise UnknownUnit(f"units missing from baseline file: {absent[:5]}")
        bdf = bdf.loc[units]
        for c in bdf.columns:
            if pd.api.types.is_numeric_dtype(bdf[c]):
                base_names.append(c)
            else:
                labels[c] = tuple(bdf[c].astype(str))
        base = bdf[base_names].to_numpy(float) if base_names else np.zeros((n, 0))

    return PanelDataset(
        unit_ids=tuple(units),
        times=tuple(times),
        outcome=outcome,
        treatment=treatment,
        covariates=cov,
        covariate_names=tuple(cov_names),
        baseline=base,
        baseline_names=tuple(base_names),
        scheme=scheme,
        labels=labels,
        window=window or WindowConfig(),
    )


def _fmt(x: float) -> str:
    return repr(float(x))


def write_panel(dataset: PanelDataset, panel_file, baseline_file=None) -> None:
    """Write the dataset back in the CSV layout accepted by :func:`load_panel`."""
    with open(panel_file, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([*PANEL_COLUMNS, *dataset.covariate_names])
        for i, u in enumerate(dataset.unit_ids):
            for j, t in enumerate(dataset.times):
                w.writerow([u, t, _fmt(dataset.outcome[i, j]), int(dataset.treatment[i, j]),
                            *map(_fmt, dataset.covariates[i, j])])
    if baseline_file is not None:
        label_names = list(dataset.labels)
        with open(baseline_file, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["unit_id", *dataset.baseline_names, *label_names])
            for i, u in enumerate(dataset.unit_ids):
                w.writerow([u, *map(_fmt, dataset.baseline[i]), *(dataset.labels[k][i] for k in label_names)])


def load_network(edge_file, unit_ids: Sequence[str]) -> Network:
    """Read a ``src,dst`` edge list over known unit ids."""
    df = pd.read_csv(edge_file, dtype=str, keep_default_na=False)
    if list(df.columns[:2]) != ["src", "dst"]:
        raise SchemaMismatch("edge file must have header src,dst")
    index = {u: k for k, u in enumerate(unit_ids)}
    unknown = sorted(set(df["src"]).union(df["dst"]) - index.keys())
    if unknown:
        raise UnknownUnit(f"edges reference unknown units {unknown[:5]}")
    if (df["src"] == df["dst"]).any():
        raise SelfLoop(f"self-loop at unit {df.loc[df['src'] == df['dst'], 'src'].iloc[0]!r}")
    src = np.array([index[u] for u in df["src"]], dtype=np.int64)
    dst = np.array([index[u] for u in df["dst"]], dtype=np.int64)
    return Network.from_edges(tuple(unit_ids), src, dst)


def write_network(network: Network, edge_file) -> None:
    with open(edge_file, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["src", "dst"])
        for i, j in network.edges():
            w.writerow([network.unit_ids[i], network.unit_ids[j]])


# -- neighborhood features -------------------------------------------------------

def _check_cover(dataset: PanelDataset, network: Network):
    if network.unit_ids != dataset.unit_ids:
        raise UnknownUnit("network units do not match dataset units")


def _time_slice(dataset, t):
    return slice(None) if t is None else dataset.time_index(t)


def neighbor_treated_counts(dataset: PanelDataset, network: Network, t: int | None = None) -> np.ndarray:
    _check_cover(dataset, network)
    treated = dataset.treated_indicator()[:, _time_slice(dataset, t)]
    return network.matrix @ treated


def neighborhood_treatment(dataset: PanelDataset, network: Network, t: int | None, kind: str) -> np.ndarray:
    """Neighborhood treatment from the treated status of each unit's neighbors.

    ``Public``: ``log2(1 + s)`` where ``s`` counts treated neighbors.
    ``Private``: ``1[s >= 1]``. Isolated units get NaN. ``t=None`` returns
    the full ``N x T`` matrix.
    """
    s = neighbor_treated_counts(dataset, network, t)
    if kind == "Public":
        z = np.log2(1.0 + s)
    elif kind == "Private":
        z = (s >= 1).astype(float)
    else:
        raise ValueError(f"kind must be 'Public' or 'Private', not {kind!r}")
    z[network.isolated] = np.nan
    return z


def neighborhood_covariate_summary(
    dataset: PanelDataset,
    network: Network,
    t: int | None,
    stats: Sequence[str] = ("mean", "sum"),
    columns: Sequence[str] | None = None,
) -> tuple[list[str], np.ndarray]:
    """Summaries of neighbors' covariates, named ``nbr_<stat>_<column>``.

    Returns the new column names and an array of shape ``N x m`` (one time)
    or ``N x T x m`` (``t=None``). Isolated units get NaN.
    """
    _check_cover(dataset, network)
    columns = list(dataset.covariate_names if columns is None else columns)
    a = network.matrix
    deg = network.degree.astype(float)
    with np.errstate(invalid="ignore", divide="ignore"):
        inv_deg = np.where(deg > 0, 1.0 / deg, np.nan)
    ts = _time_slice(dataset, t)
    names, out = [], []
    for stat in stats:
        if stat not in ("mean", "sum"):
            raise ValueError(f"unsupported neighbor statistic {stat!r}")
        for c in columns:
            x = dataset.covariate(c)[:, ts]
            s = a @ x
            v = s * (inv_deg if x.ndim == 1 else inv_deg[:, None]) if stat == "mean" else s
            v = np.array(v, dtype=float)
            v[network.isolated] = np.nan
            names.append(f"nbr_{stat}_{c}")
            out.append(v)
    if not out:
        shape = (dataset.n_units, 0) if t is not None else (dataset.n_units, dataset.n_times, 0)
        return names, np.zeros(shape)
    return names, np.stack(out, axis=-1)


def relabel_arms(dataset: PanelDataset, mapping: Mapping[int, int], scheme: ArmScheme | None = None) -> PanelDataset:
    """Remap arm codes, e.g. collapse the three-arm scheme to binary.

    Without an explicit ``scheme`` the new one is inferred: targets within
    {0, 1} give ``Binary``; otherwise the identity mapping keeps the old scheme.
    """
    observed = np.unique(dataset.treatment).tolist()
    lacking = [c for c in observed if c not in mapping]
    if lacking:
        raise PartialMapping(f"mapping does not cover observed codes {lacking}")
    targets = sorted({int(v) for v in mapping.values()})
    if scheme is None:
        if all(int(mapping[c]) == c for c in mapping) and set(targets) <= set(dataset.scheme.codes):
            scheme = dataset.scheme
        elif set(targets) <= {0, 1}:
            scheme = ArmScheme.binary()
        elif set(targets) <= {1, 2, 3}:
            scheme = ArmScheme.three_arm()
        else:
            raise ValueError("cannot infer arm scheme for mapping targets; pass scheme explicitly")
    lut = {int(k): int(v) for k, v in mapping.items()}
    new = np.vectorize(lut.__getitem__, otypes=[np.int64])(dataset.treatment) if dataset.treatment.size else dataset.treatment
    return replace(dataset, treatment=new, scheme=scheme)
