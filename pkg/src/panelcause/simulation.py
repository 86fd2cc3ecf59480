"""Synthetic panels with known effects and a benchmark harness.

Two generating processes are provided. The contemporaneous one draws

    p[i,t] = logistic(alpha_t + beta_t'X[i,t] + gamma_t U[i,t])
    W[i,t] ~ Bernoulli(p[i,t])
    Y[i,t] ~ Normal(delta_t'X[i,t] + tau_t W[i,t] + xi_t V[i,t], sigma_t^2)

with unobserved U, V. The spillover one adds a random graph: each unit makes
a self-initiated contribution with probability p and a peer-visible one with
probability q, and the outcome responds to g(number of neighbors' peer-visible
contributions).
"""

from __future__ import annotations

import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from importlib import resources
from pathlib import Path
from typing import Any, Sequence

import jsonschema
import numpy as np
from scipy.special import expit

from .design import DEFAULT_CLIP
from .errors import CausalError, ConfigError, IsolatedOnlyNetwork
from .panel import ArmScheme, Network, PanelDataset
from .pipeline import OWN_CONTRIBUTION, run_estimators

SCENARIOS = ("TimeInvariantUV", "TimeVaryingUV")
KINDS = ("contemporaneous", "spillover")
G_KINDS = ("Log2Shift", "Indicator")
DEFAULT_SEGMENTS = ("onboarding", "monthly", "weekly", "daily")
PRE_OUTCOME = "pre_outcome"
SEGMENT = "segment"

_SEQ = ("alpha", "gamma", "xi", "sigma", "tau", "alpha_peer", "gamma_peer", "tau_peer")
_VEC = ("beta", "delta", "nu", "beta_peer", "nu_peer")


def _schema() -> dict:
    return json.loads(resources.files("panelcause.presets").joinpath("schema.json").read_text())


@dataclass(frozen=True)
class SimulationConfig:
    """Parameters of one generating process.

    Scalar parameters may be given as one value or one value per period;
    vector parameters (``beta``, ``delta``, ``nu`` and their peer versions)
    as one length-k vector or one per period. ``drift`` adds a centered
    linear trend per period to any scalar parameter.
    """

    name: str = "scenario"
    kind: str = "contemporaneous"
    n_units: int = 5000
    n_times: int = 8
    covariate_dim: int = 3
    alpha: Any = 0.0
    beta: Any = 0.0
    gamma: Any = 0.0
    delta: Any = 0.0
    xi: Any = 0.0
    sigma: Any = 1.0
    tau: Any = 5.0
    scenario: str = "TimeInvariantUV"
    uv_corr: float = 0.0
    persistence: float = 0.5
    drift: dict = field(default_factory=dict)
    nu: Any = 0.0
    alpha_peer: Any = 0.0
    beta_peer: Any = 0.0
    nu_peer: Any = 0.0
    gamma_peer: Any = 0.0
    tau_peer: Any = 0.0
    uv_peer_corr: float = 0.0
    g_kind: str = "Log2Shift"
    network: dict | None = None
    segments: Sequence[str] = DEFAULT_SEGMENTS
    estimators: Sequence[str] = ("Correlation", "IPW", "Regression", "DoublyRobust", "FE", "WeightedFE")
    cross_section_time: int | None = None
    seed: int = 0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigError(f"must be one of {KINDS}", "kind")
        if self.scenario not in SCENARIOS:
            raise ConfigError(f"must be one of {SCENARIOS}", "scenario")
        if self.g_kind not in G_KINDS:
            raise ConfigError(f"must be one of {G_KINDS}", "g_kind")
        if self.n_times < 2:
            raise ConfigError("at least two periods are required", "n_times")
        if self.n_units < 2:
            raise ConfigError("at least two units are required", "n_units")
        if not 0.0 <= self.persistence <= 1.0:
            raise ConfigError("must lie in [0, 1]", "persistence")
        if self.uv_corr ** 2 + self.uv_peer_corr ** 2 > 1.0:
            raise ConfigError("uv_corr^2 + uv_peer_corr^2 must not exceed 1", "uv_corr")
        for name in self.drift:
            if name not in _SEQ:
                raise ConfigError(f"cannot drift parameter {name!r}", "drift")
        for name in _SEQ:
            self.scalar_path(name)
        for name in _VEC:
            self.vector_path(name)
        if np.any(self.scalar_path("sigma") <= 0):
            raise ConfigError("must be positive", "sigma")
        if self.kind == "spillover":
            if not self.network:
                raise ConfigError("spillover scenarios need a network", "network")
            md = float(self.network.get("mean_degree", 0))
            if md < 0 or md >= self.n_units:
                raise ConfigError("mean_degree must lie in [0, n_units)", "network.mean_degree")

    @classmethod
    def from_dict(cls, doc: dict) -> "SimulationConfig":
        try:
            jsonschema.validate(doc, _schema())
        except jsonschema.ValidationError as exc:
            where = ".".join(str(p) for p in exc.absolute_path) or "<root>"
            raise ConfigError(exc.message, where) from None
        known = {f.name for f in fields(cls)}
        kw = {k: v for k, v in doc.items() if k in known}
        for k in ("segments", "estimators"):
            if k in kw:
                kw[k] = tuple(kw[k])
        return cls(**kw)

    @classmethod
    def from_json(cls, path) -> "SimulationConfig":
        try:
            doc = json.loads(Path(path).read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"invalid JSON at line {exc.lineno} column {exc.colno}: {exc.msg}") from None
        return cls.from_dict(doc)

    def override(self, **changes) -> "SimulationConfig":
        """Copy with some fields changed, validated like a fresh config."""
        return SimulationConfig.from_dict({**self.to_dict(), **changes})

    def to_dict(self) -> dict:
        d = {k: v for k, v in asdict(self).items() if v is not None}
        d["segments"] = list(self.segments)
        d["estimators"] = list(self.estimators)
        return d

    @property
    def scenario_kind(self) -> str:
        if self.kind == "contemporaneous":
            return "Contemporaneous"
        return "Public" if self.g_kind == "Log2Shift" else "Private"

    @property
    def true_effect(self) -> float:
        """Average over periods of the effect the suite estimates."""
        name = "tau" if self.kind == "contemporaneous" else "tau_peer"
        return float(np.mean(self.scalar_path(name)))

    def scalar_path(self, name: str) -> np.ndarray:
        v = np.asarray(getattr(self, name), dtype=float)
        t = self.n_times
        if v.ndim == 0:
            v = np.full(t, float(v))
        elif v.shape != (t,):
            raise ConfigError(f"must be a scalar or a list of {t} values", name)
        slope = float(self.drift.get(name, 0.0))
        return v + slope * (np.arange(t) - (t - 1) / 2.0)

    def vector_path(self, name: str) -> np.ndarray:
        v = np.asarray(getattr(self, name), dtype=float)
        t, k = self.n_times, self.covariate_dim
        if v.ndim == 0:
            return np.full((t, k), float(v))
        if v.shape == (k,):
            return np.tile(v, (t, 1))
        if v.shape == (t, k):
            return v
        raise ConfigError(f"must be a scalar, a length-{k} vector or {t} such vectors", name)


@dataclass(frozen=True, eq=False)
class SimulatedStudy:
    dataset: PanelDataset
    truth: dict
    config: SimulationConfig
    network: Network | None = None
    hidden: dict = field(default_factory=dict, repr=False)


def _rng(config: SimulationConfig, rng):
    return rng if isinstance(rng, np.random.Generator) else np.random.default_rng(config.seed if rng is None else rng)


def gen_network(n_units: int, mean_degree: float, rng=None, unit_ids: Sequence[str] | None = None) -> Network:
    """Erdos-Renyi graph with edge probability ``mean_degree / (n - 1)``."""
    rng = rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)
    n = int(n_units)
    if not 0 <= mean_degree < n:
        raise ValueError("mean degree must lie in [0, n)")
    ids = tuple(unit_ids) if unit_ids is not None else tuple(f"u{i}" for i in range(n))
    n_pairs = n * (n - 1) // 2
    p = mean_degree / (n - 1) if n > 1 else 0.0
    m = int(rng.binomial(n_pairs, p)) if n_pairs else 0
    flat = np.sort(rng.choice(n_pairs, size=m, replace=False)) if m else np.zeros(0, dtype=np.int64)
    # flat index k over pairs (i, j), i < j, in row-major order of the upper triangle
    row_start = lambda i: i * (2 * n - i - 1) // 2  # noqa: E731
    i = np.floor(((2 * n - 1) - np.sqrt((2 * n - 1) ** 2 - 8.0 * flat)) / 2).astype(np.int64)
    i = np.clip(i, 0, max(n - 2, 0))
    # fix float rounding at row boundaries
    i -= (row_start(i) > flat).astype(np.int64)
    i += (row_start(i + 1) <= flat).astype(np.int64)
    j = flat - row_start(i) + i + 1
    return Network.from_edges(ids, i, j)


def _latent(rng, n, t, scenario, persistence):
    """Standard-normal N x T draws, constant per unit or partly redrawn each period."""
    base = rng.standard_normal(n)
    if scenario == "TimeInvariantUV":
        return np.repeat(base[:, None], t, axis=1)
    fresh = rng.standard_normal((n, t))
    return math.sqrt(persistence) * base[:, None] + math.sqrt(1.0 - persistence) * fresh


def _segments(rng, config, n):
    if not config.segments:
        return {}
    seg = rng.integers(0, len(config.segments), size=n)
    return {SEGMENT: tuple(config.segments[s] for s in seg)}


def _visit_latent(u, e, config, network):
    rho, rho_p = config.uv_corr, config.uv_peer_corr
    v = rho * u + math.sqrt(max(1.0 - rho ** 2 - rho_p ** 2, 0.0)) * e
    if network is not None and rho_p:
        deg = network.degree.astype(float)
        scale = np.where(deg > 0, 1.0 / np.sqrt(np.maximum(deg, 1.0)), 0.0)
        v = v + rho_p * (network.matrix @ u) * scale[:, None]
    return v


def _pre_outcome(rng, config, xi0, sigma0, delta0, v_pre):
    n, k = config.n_units, config.covariate_dim
    x0 = rng.standard_normal((n, k))
    return x0 @ delta0 + xi0 * v_pre + sigma0 * rng.standard_normal(n)


def gen_contemporaneous(config: SimulationConfig, rng=None) -> SimulatedStudy:
    """Draw a panel from the contemporaneous-effect process."""
    rng = _rng(config, rng)
    n, t, k = config.n_units, config.n_times, config.covariate_dim
    alpha, gamma, xi, sigma, tau = (config.scalar_path(p) for p in ("alpha", "gamma", "xi", "sigma", "tau"))
    beta, delta = config.vector_path("beta"), config.vector_path("delta")

    x = rng.standard_normal((n, t, k))
    u = _latent(rng, n, t, config.scenario, config.persistence)
    e = _latent(rng, n, t, config.scenario, config.persistence)
    v = _visit_latent(u, e, config, None)
    p = expit(alpha + np.einsum("itk,tk->it", x, beta) + gamma * u)
    w = (rng.random((n, t)) < p).astype(np.int64)
    y = np.einsum("itk,tk->it", x, delta) + tau * w + xi * v + sigma * rng.standard_normal((n, t))

    u_pre = _latent(rng, n, 1, config.scenario, config.persistence) if config.scenario == "TimeVaryingUV" else u[:, :1]
    e_pre = _latent(rng, n, 1, config.scenario, config.persistence) if config.scenario == "TimeVaryingUV" else e[:, :1]
    v_pre = _visit_latent(u_pre, e_pre, config, None)[:, 0]
    pre = _pre_outcome(rng, config, xi[0], sigma[0], delta[0], v_pre)
    labels = _segments(rng, config, n)

    ds = PanelDataset(
        unit_ids=tuple(f"u{i}" for i in range(n)),
        times=tuple(range(1, t + 1)),
        outcome=y,
        treatment=w,
        covariates=x,
        covariate_names=tuple(f"x{j + 1}" for j in range(k)),
        baseline=pre[:, None],
        baseline_names=(PRE_OUTCOME,),
        scheme=ArmScheme.binary(),
        labels=labels,
    )
    truth = {"tau": float(np.mean(tau))}
    return SimulatedStudy(ds, truth, config, None, {"U": u, "V": v, "p": p})


def gen_spillover(config: SimulationConfig, rng=None) -> SimulatedStudy:
    """Draw a networked panel from the spillover process."""
    rng = _rng(config, rng)
    n, t, k = config.n_units, config.n_times, config.covariate_dim
    net_spec = config.network or {}
    ids = tuple(f"u{i}" for i in range(n))
    network = gen_network(n, float(net_spec.get("mean_degree", 0)), rng, ids)
    if network.isolated.all():
        raise IsolatedOnlyNetwork("generated network has no edges")
    a = network.matrix

    sp = {p: config.scalar_path(p) for p in _SEQ}
    vp = {p: config.vector_path(p) for p in _VEC}
    x = rng.standard_normal((n, t, k))
    nbr_x = np.stack([a @ x[:, j, :] for j in range(t)], axis=1)
    u = _latent(rng, n, t, config.scenario, config.persistence)
    e = _latent(rng, n, t, config.scenario, config.persistence)
    v = _visit_latent(u, e, config, network)

    lin = lambda b, nu: np.einsum("itk,tk->it", x, b) + np.einsum("itk,tk->it", nbr_x, nu)  # noqa: E731
    p = expit(sp["alpha"] + lin(vp["beta"], vp["nu"]) + sp["gamma"] * u)
    q = expit(sp["alpha_peer"] + lin(vp["beta_peer"], vp["nu_peer"]) + sp["gamma_peer"] * u)
    own = (rng.random((n, t)) < p).astype(np.int64)
    peer = (rng.random((n, t)) < q).astype(np.int64)
    s = np.asarray(a @ peer, dtype=float)
    g = np.log2(1.0 + s) if config.g_kind == "Log2Shift" else (s >= 1).astype(float)
    y = (np.einsum("itk,tk->it", x, vp["delta"]) + sp["tau"] * own + sp["tau_peer"] * g
         + sp["xi"] * v + sp["sigma"] * rng.standard_normal((n, t)))

    if config.scenario == "TimeVaryingUV":
        u_pre = _latent(rng, n, 1, config.scenario, config.persistence)
        e_pre = _latent(rng, n, 1, config.scenario, config.persistence)
    else:
        u_pre, e_pre = u[:, :1], e[:, :1]
    v_pre = _visit_latent(u_pre, e_pre, config, network)[:, 0]
    pre = _pre_outcome(rng, config, sp["xi"][0], sp["sigma"][0], vp["delta"][0], v_pre)
    labels = _segments(rng, config, n)

    ds = PanelDataset(
        unit_ids=ids,
        times=tuple(range(1, t + 1)),
        outcome=y,
        treatment=peer,
        covariates=np.concatenate([x, own[:, :, None].astype(float)], axis=2),
        covariate_names=tuple(f"x{j + 1}" for j in range(k)) + (OWN_CONTRIBUTION,),
        baseline=pre[:, None],
        baseline_names=(PRE_OUTCOME,),
        scheme=ArmScheme.binary(),
        labels=labels,
    )
    truth = {"tau": float(np.mean(sp["tau"])), "tau_peer": float(np.mean(sp["tau_peer"]))}
    hidden = {"U": u, "V": v, "p": p, "q": q, "g": g}
    return SimulatedStudy(ds, truth, config, network, hidden)


def simulate(config: SimulationConfig, rng=None) -> SimulatedStudy:
    if config.kind == "contemporaneous":
        return gen_contemporaneous(config, rng)
    return gen_spillover(config, rng)


# -- estimators on simulated studies ------------------------------------------------

def spillover_kind(config: SimulationConfig) -> str | None:
    if config.kind != "spillover":
        return None
    return "Public" if config.g_kind == "Log2Shift" else "Private"


def estimate_all(study: SimulatedStudy, estimators: Sequence[str] | None = None,
                 clip_bounds=DEFAULT_CLIP) -> dict[str, float | Exception]:
    """Run each named estimator on a study; failures are returned, not raised."""
    estimators = list(study.config.estimators if estimators is None else estimators)
    res = run_estimators(study.dataset, estimators, network=study.network,
                         spillover=spillover_kind(study.config), time=study.config.cross_section_time,
                         clip_bounds=clip_bounds)
    out: dict[str, float | Exception] = {}
    for name in estimators:
        o = res.get(name)
        out[name] = o.error if not o.ok else float(o.estimate.estimate)
    return out


# -- benchmark ---------------------------------------------------------------------

TABLE_COLUMNS = ("Correlation", "IPW", "Regression", "DoublyRobust", "FE", "WeightedFE")


@dataclass
class BenchmarkCell:
    mean: float
    sd: float
    bias: float
    n_ok: int
    error: str | None = None
    rank: int | None = None


@dataclass
class BenchmarkRow:
    name: str
    scenario_kind: str
    confounders: str
    truth: float
    cells: dict[str, BenchmarkCell]


@dataclass
class BenchmarkTable:
    rows: list[BenchmarkRow]
    replications: int
    seed: int

    def row(self, name: str) -> BenchmarkRow:
        for r in self.rows:
            if r.name == name:
                return r
        raise KeyError(name)

    def abs_bias(self, name: str, estimator: str) -> float:
        c = self.row(name).cells.get(estimator)
        return abs(c.bias) if c is not None and c.error is None else math.inf

    def to_csv(self) -> str:
        lines = ["scenario,kind,confounders,true_effect,estimator,mean,mc_sd,bias,abs_bias_rank,n_ok,error"]
        for r in self.rows:
            for est, c in r.cells.items():
                err = "" if c.error is None else '"' + c.error.replace('"', "'") + '"'
                rank = "" if c.rank is None else c.rank
                lines.append(f"{r.name},{r.scenario_kind},{r.confounders},{r.truth!r},{est},"
                             f"{c.mean!r},{c.sd!r},{c.bias!r},{rank},{c.n_ok},{err}")
        return "\n".join(lines) + "\n"

    def to_markdown(self) -> str:
        cols = [c for c in TABLE_COLUMNS if any(c in r.cells for r in self.rows)]
        head = ["Scenario", "Unobserved confounders", "True Effect", *cols]
        lines = ["| " + " | ".join(head) + " |", "|" + "---|" * 3 + "---:|" * len(cols)]
        for r in self.rows:
            conf = "Time-invariant" if r.confounders == "TimeInvariantUV" else "Time-varying"
            vals = []
            for c in cols:
                cell = r.cells.get(c)
                if cell is None:
                    vals.append("-")
                elif cell.error is not None:
                    vals.append("ERR")
                else:
                    vals.append(f"{cell.mean:.2f}")
            lines.append(f"| {r.scenario_kind} | {conf} | {r.truth:g} | " + " | ".join(vals) + " |")
        lines.append("")
        reps = "1 replication" if self.replications == 1 else f"{self.replications} replications"
        lines.append(f"Means over {reps} (master seed {self.seed}).")
        return "\n".join(lines) + "\n"


def _replicate(config: SimulationConfig, seed_seq: np.random.SeedSequence, estimators):
    try:
        study = simulate(config, np.random.default_rng(seed_seq))
    except (CausalError, ValueError) as exc:
        return {e: exc for e in estimators}
    return estimate_all(study, estimators)


def run_benchmark(configs: Sequence[SimulationConfig], replications: int, seed: int = 0,
                  threads: int = 1) -> BenchmarkTable:
    """Monte-Carlo comparison of estimators across scenarios.

    Replication ``r`` of scenario ``s`` draws from the seed sequence
    ``(seed, s, r)``, so results do not depend on ``threads``.
    """
    if replications < 1:
        raise ValueError("replications must be at least 1")
    jobs = [(s, r) for s in range(len(configs)) for r in range(replications)]

    def work(job):
        s, r = job
        cfg = configs[s]
        return _replicate(cfg, np.random.SeedSequence(seed, spawn_key=(s, r)), list(cfg.estimators))

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(work, jobs))
    else:
        results = [work(j) for j in jobs]

    rows = []
    for s, cfg in enumerate(configs):
        res = results[s * replications:(s + 1) * replications]
        truth = cfg.true_effect
        cells = {}
        for est in cfg.estimators:
            vals = [r[est] for r in res if not isinstance(r[est], Exception)]
            errs = [r[est] for r in res if isinstance(r[est], Exception)]
            if errs and not vals:
                cells[est] = BenchmarkCell(math.nan, math.nan, math.nan, 0, f"{type(errs[0]).__name__}: {errs[0]}")
                continue
            a = np.array(vals)
            sd = float(a.std(ddof=1)) if a.size > 1 else 0.0
            err = None if not errs else f"{len(errs)} replications failed: {type(errs[0]).__name__}"
            cells[est] = BenchmarkCell(float(a.mean()), sd, float(a.mean() - truth), int(a.size), err if not vals else None)
        ok = sorted((abs(c.bias), e) for e, c in cells.items() if c.error is None)
        for rank, (_, e) in enumerate(ok, start=1):
            cells[e].rank = rank
        rows.append(BenchmarkRow(cfg.name, cfg.scenario_kind, cfg.scenario, truth, cells))
    return BenchmarkTable(rows, replications, seed)


# -- presets and suites -------------------------------------------------------------

PRESETS = (
    "contemporaneous_invariant",
    "contemporaneous_varying",
    "public_invariant",
    "public_varying",
    "private_invariant",
    "private_varying",
    "unconfounded",
)


def preset_path(name: str) -> Path:
    return Path(str(resources.files("panelcause.presets").joinpath(f"{name}.json")))


def load_preset(name: str, **overrides) -> SimulationConfig:
    cfg = SimulationConfig.from_json(preset_path(name))
    return cfg.override(**overrides) if overrides else cfg


@dataclass
class Suite:
    configs: list[SimulationConfig]
    replications: int
    seed: int
    assertions: list[dict]


def load_suite(path) -> Suite:
    """Read a benchmark suite: scenario configs, replications and ordering assertions.

    ``scenarios`` entries are preset names, paths relative to the suite file,
    or inline config objects.
    """
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"invalid JSON at line {exc.lineno} column {exc.colno}: {exc.msg}") from None
    if not isinstance(doc.get("scenarios"), list) or not doc["scenarios"]:
        raise ConfigError("must be a nonempty list", "scenarios")
    configs = []
    for k, entry in enumerate(doc["scenarios"]):
        if isinstance(entry, dict):
            configs.append(SimulationConfig.from_dict(entry))
        elif entry in PRESETS:
            configs.append(load_preset(entry))
        else:
            p = Path(entry)
            configs.append(SimulationConfig.from_json(p if p.is_absolute() else path.parent / p))
    overrides = doc.get("overrides") or {}
    if overrides:
        configs = [c.override(**overrides) for c in configs]
    reps = doc.get("replications", 20)
    if not isinstance(reps, int) or reps < 1:
        raise ConfigError("must be a positive integer", "replications")
    asserts = doc.get("assertions", [])
    for a in asserts:
        if not isinstance(a.get("order"), list) or len(a["order"]) < 2:
            raise ConfigError("each assertion needs an 'order' list of two or more estimators", "assertions")
    return Suite(configs, reps, int(doc.get("seed", 0)), asserts)


def default_suite_path() -> Path:
    return Path(str(resources.files("panelcause.presets").joinpath("default_suite.json")))


def check_assertions(table: BenchmarkTable, assertions: Sequence[dict]) -> list[tuple[str, bool]]:
    """Evaluate ordering assertions: ``order`` lists estimators by increasing |bias|."""
    out = []
    for a in assertions:
        names = [a["scenario"]] if "scenario" in a else a.get("scenarios", [r.name for r in table.rows])
        for sc in names:
            b = [table.abs_bias(sc, e) for e in a["order"]]
            ok = all(x < y for x, y in zip(b, b[1:]))
            text = f"{sc}: " + " < ".join(f"|bias({e})|" for e in a["order"])
            out.append((text, ok))
    return out
