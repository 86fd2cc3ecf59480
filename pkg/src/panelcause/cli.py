"""Command-line front end: simulate, estimate, diagnose, benchmark.

Every run is driven by one JSON config; command-line flags override config
fields. Exit codes: 0 success, 1 usage or config error, 2 computation error,
3 a diagnostic or benchmark assertion failed.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import jsonschema
import numpy as np

from . import __version__
from .design import DEFAULT_CLIP, cem_match, fit_logistic, predict_propensity, stratify
from .diagnostics import (
    DiagnosticReport,
    aa_test,
    backward_causality_check,
    balance_diagnostic,
    balance_report,
    reports_to_csv,
    reports_to_markdown,
)
from .errors import (
    CausalError,
    ConfigError,
    DuplicateRow,
    MissingCell,
    SchemaMismatch,
    SelfLoop,
    UnknownArmCode,
    UnknownUnit,
)
from .estimators import CSV_HEADER
from .panel import ArmScheme, PanelDataset, load_network, load_panel, write_network, write_panel
from .pipeline import CROSS_SECTIONAL, PANEL, EstimationResult, cross_section, run_estimators
from .simulation import (
    PRESETS,
    SimulationConfig,
    check_assertions,
    default_suite_path,
    load_preset,
    load_suite,
    run_benchmark,
    simulate,
)

log = logging.getLogger("panelcause")

EXIT_OK, EXIT_CONFIG, EXIT_COMPUTE, EXIT_FAILED = 0, 1, 2, 3
DIAGNOSTICS = ("backward_causality", "aa", "balance")
DESIGNS = ("weighting", "cem", "stratify")
INPUT_ERRORS = (SchemaMismatch, MissingCell, DuplicateRow, UnknownArmCode, UnknownUnit, SelfLoop)

RUN_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "description": {"type": "string"},
        "panel": {"type": "string"},
        "baseline": {"type": ["string", "null"]},
        "edges": {"type": ["string", "null"]},
        "estimators": {"type": "array", "minItems": 1,
                       "items": {"enum": list(CROSS_SECTIONAL + PANEL)}},
        "arms": {"enum": ["Binary", "ThreeArm"]},
        "contrast": {"type": "array", "items": {"type": "integer"}, "minItems": 2, "maxItems": 2},
        "subgroup": {"type": ["string", "null"]},
        "spillover": {"enum": [None, "Public", "Private"]},
        "time": {"type": ["integer", "null"]},
        "time_effects": {"type": "boolean"},
        "clip": {"type": "array", "items": {"type": "number"}, "minItems": 2, "maxItems": 2},
        "design": {"enum": list(DESIGNS)},
        "cem_bins": {"type": "integer", "minimum": 1},
        "strata": {"type": "integer", "minimum": 1},
        "diagnostics": {"type": "array", "items": {"enum": list(DIAGNOSTICS)}},
        "pre_period": {"type": "string"},
        "aa_estimator": {"enum": list(CROSS_SECTIONAL)},
        "threshold": {"type": "number", "exclusiveMinimum": 0},
        "balance_threshold": {"type": "number", "exclusiveMinimum": 0},
        "out": {"type": "string"},
        "seed": {"type": "integer", "minimum": 0},
        "threads": {"type": "integer", "minimum": 1},
    },
    "required": ["panel"],
}


@dataclass
class RunConfig:
    """Inputs and options for ``estimate`` and ``diagnose``."""

    panel: Path
    baseline: Path | None = None
    edges: Path | None = None
    estimators: tuple[str, ...] = CROSS_SECTIONAL + PANEL
    arms: str = "Binary"
    contrast: tuple[int, int] | None = None
    subgroup: str | None = None
    spillover: str | None = None
    time: int | None = None
    time_effects: bool = False
    clip: tuple[float, float] = DEFAULT_CLIP
    design: str = "weighting"
    cem_bins: int = 5
    strata: int = 5
    diagnostics: tuple[str, ...] = DIAGNOSTICS
    pre_period: str = "pre_outcome"
    aa_estimator: str = "Regression"
    threshold: float = 2.0
    balance_threshold: float = 0.1
    out: Path = Path("out")
    seed: int = 0
    threads: int = field(default_factory=lambda: os.cpu_count() or 1)

    @classmethod
    def from_dict(cls, doc: dict, base: Path = Path(".")) -> "RunConfig":
        try:
            jsonschema.validate(doc, RUN_SCHEMA)
        except jsonschema.ValidationError as exc:
            where = ".".join(str(p) for p in exc.absolute_path) or "<root>"
            raise ConfigError(exc.message, where) from None
        kw = dict(doc)
        kw.pop("description", None)
        for key in ("panel", "baseline", "edges"):
            if kw.get(key) is not None:
                p = Path(kw[key])
                kw[key] = p if p.is_absolute() else base / p
                if not kw[key].exists():
                    raise ConfigError(f"file not found: {kw[key]}", key)
        if "out" in kw:
            p = Path(kw["out"])
            kw["out"] = p if p.is_absolute() else base / p
        for key in ("estimators", "contrast", "clip", "diagnostics"):
            if kw.get(key) is not None:
                kw[key] = tuple(kw[key])
        cfg = cls(**kw)
        lo, hi = cfg.clip
        if not 0 < lo < hi < 1:
            raise ConfigError("need 0 < lo < hi < 1", "clip")
        if cfg.spillover is not None and cfg.edges is None:
            raise ConfigError("spillover estimation needs an edge file", "edges")
        return cfg

    def scheme(self) -> ArmScheme:
        if self.arms == "Binary":
            if self.contrast not in (None, (1, 0)):
                raise ConfigError("binary arms only support the contrast [1, 0]", "contrast")
            return ArmScheme.binary()
        return ArmScheme.three_arm(self.contrast or (3, 2))


def _read_json(path: Path) -> dict:
    try:
        return json.loads(path.read_text())
    except FileNotFoundError:
        raise ConfigError(f"file not found: {path}", "--config") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"invalid JSON at line {exc.lineno} column {exc.colno}: {exc.msg}", str(path)) from None


def _parse_set(items: Sequence[str] | None) -> dict:
    out = {}
    for item in items or ():
        key, sep, raw = item.partition("=")
        if not sep or not key:
            raise ConfigError(f"expected key=value, got {item!r}", "--set")
        try:
            out[key] = json.loads(raw)
        except json.JSONDecodeError:
            out[key] = raw
    return out


def run_config(args) -> RunConfig:
    """Resolve the config file plus flag overrides into a validated RunConfig."""
    if args.config:
        path = Path(args.config)
        doc, base = _read_json(path), path.parent
    else:
        doc, base = {}, Path(".")
    doc.update(_parse_set(args.set))
    flags = {
        "panel": args.panel, "baseline": args.baseline, "edges": args.edges,
        "subgroup": args.subgroup, "spillover": args.spillover, "time": args.time,
        "design": getattr(args, "design", None), "pre_period": getattr(args, "pre_period", None),
        "seed": args.seed, "threads": args.threads, "out": args.out,
    }
    if args.estimators:
        flags["estimators"] = [s for s in args.estimators.split(",") if s]
    if args.contrast:
        try:
            flags["contrast"] = [int(s) for s in args.contrast.split(",")]
        except ValueError:
            raise ConfigError(f"expected two integer codes, got {args.contrast!r}", "--contrast") from None
        if "arms" not in doc:
            flags["arms"] = "ThreeArm"
    for key, value in flags.items():
        if value is None:
            continue
        if key in ("panel", "baseline", "edges", "out"):
            # flag paths are relative to the working directory, not the config
            value = str(Path(value).resolve())
        doc[key] = value
    if "panel" not in doc:
        raise ConfigError("no panel file given", "panel")
    return RunConfig.from_dict(doc, base)


def load_inputs(cfg: RunConfig):
    try:
        ds = load_panel(cfg.panel, cfg.baseline, scheme=cfg.scheme())
        net = load_network(cfg.edges, ds.unit_ids) if cfg.edges is not None else None
    except INPUT_ERRORS as exc:
        raise ConfigError(f"{type(exc).__name__}: {exc}", "inputs") from None
    if cfg.subgroup is not None:
        try:
            ds.unit_labels(cfg.subgroup)
        except KeyError:
            raise ConfigError(f"no baseline column named {cfg.subgroup!r}", "subgroup") from None
    if cfg.time is not None and cfg.time not in ds.times:
        raise ConfigError(f"time {cfg.time} is not in the panel", "time")
    return ds, net


# -- simulate ----------------------------------------------------------------------

def simulation_config(args) -> SimulationConfig:
    src = args.config
    if src is None:
        raise ConfigError("simulate needs --config (a JSON file or a preset name)", "--config")
    if not Path(src).exists() and src in PRESETS:
        doc = load_preset(src).to_dict()
    else:
        doc = _read_json(Path(src))
    doc.update(_parse_set(args.set))
    if args.seed is not None:
        doc["seed"] = args.seed
    return SimulationConfig.from_dict(doc)


def cmd_simulate(args) -> int:
    config = simulation_config(args)
    study = simulate(config)
    out = Path(args.out or "out")
    out.mkdir(parents=True, exist_ok=True)
    write_panel(study.dataset, out / "panel.csv", out / "baseline.csv")
    if study.network is not None:
        write_network(study.network, out / "edges.csv")
    (out / "truth.json").write_text(json.dumps(study.truth, indent=2, sort_keys=True) + "\n")
    (out / "config.json").write_text(json.dumps(config.to_dict(), indent=2, sort_keys=True) + "\n")
    ds = study.dataset
    share = float(ds.treated_indicator().mean())
    truth = " ".join(f"{k}={v:g}" for k, v in sorted(study.truth.items()))
    print(f"{config.name}: N={ds.n_units} T={ds.n_times} arms={ds.scheme.kind} "
          f"treated share={share:.3f} truth {truth}")
    if study.network is not None:
        print(f"network: {study.network.edges().shape[0]} edges, "
              f"{int(study.network.isolated.sum())} isolated units")
    print(f"wrote {out}")
    return EXIT_OK


# -- estimate ----------------------------------------------------------------------

def estimate_dataset(ds: PanelDataset, cfg: RunConfig, network=None) -> EstimationResult:
    """Run the configured estimators, fanned out over ``cfg.threads`` workers.

    Results are merged in estimator order, so output does not depend on the
    thread count.
    """
    def job(method):
        return run_estimators(ds, [method], network=network, spillover=cfg.spillover, time=cfg.time,
                              subgroup=cfg.subgroup, clip_bounds=cfg.clip, time_effects=cfg.time_effects)

    if cfg.threads > 1 and len(cfg.estimators) > 1:
        with ThreadPoolExecutor(max_workers=min(cfg.threads, len(cfg.estimators))) as pool:
            parts = list(pool.map(job, cfg.estimators))
    else:
        parts = [job(m) for m in cfg.estimators]
    merged = EstimationResult([])
    for p in parts:
        merged.outcomes.extend(p.outcomes)
        merged.fits.update(p.fits)
    return merged


def results_csv(result: EstimationResult) -> str:
    return "\n".join([CSV_HEADER] + [e.csv_row() for e in result.estimates()]) + "\n"


def _fmt(x: float) -> str:
    return f"{x:.4f}" if np.isfinite(x) else str(x)


def estimate_report(ds: PanelDataset, cfg: RunConfig, result: EstimationResult) -> str:
    estimand = "Main" if cfg.spillover is None else f"Spillover ({cfg.spillover})"
    lines = ["# Effect estimates", "",
             f"- units: {ds.n_units}, periods: {ds.n_times}",
             f"- arms: {ds.scheme.kind}, contrast {ds.scheme.treated_code} vs {ds.scheme.control_code}",
             f"- estimand: {estimand}",
             f"- cross-sectional period: {ds.times[-1] if cfg.time is None else cfg.time}", ""]
    groups: dict = {}
    for o in result.outcomes:
        groups.setdefault(o.subgroup, []).append(o)
    for g, outs in groups.items():
        lines.append(f"## {'All units' if g is None else f'{cfg.subgroup} = {g}'}")
        lines.append("")
        lines.append("| method | estimate | std. error | 95% interval | n |")
        lines.append("|---|---:|---:|---|---:|")
        for o in outs:
            if o.ok:
                e = o.estimate
                lo, hi = e.estimate - 1.96 * e.std_error, e.estimate + 1.96 * e.std_error
                lines.append(f"| {e.method} | {_fmt(e.estimate)} | {_fmt(e.std_error)} | "
                             f"[{_fmt(lo)}, {_fmt(hi)}] | {e.n_used} |")
            else:
                lines.append(f"| {o.method} | error | | {type(o.error).__name__} | |")
        lines.append("")
    errors = [o for o in result.outcomes if not o.ok]
    if errors:
        lines.append("## Errors")
        lines.append("")
        seen = set()
        for o in errors:
            key = (o.method, str(o.error))
            if key in seen:
                continue
            seen.add(key)
            lines.append(f"- {o.method}: {type(o.error).__name__}: {o.error}")
        lines.append("")
    return "\n".join(lines)


def cmd_estimate(args) -> int:
    cfg = run_config(args)
    ds, net = load_inputs(cfg)
    result = estimate_dataset(ds, cfg, net)
    cfg.out.mkdir(parents=True, exist_ok=True)
    (cfg.out / "results.csv").write_text(results_csv(result))
    (cfg.out / "report.md").write_text(estimate_report(ds, cfg, result))
    if result.fits:
        side = {m: f.sidecar() for m, f in result.fits.items()}
        (cfg.out / "fe_fit.json").write_text(json.dumps(side, indent=2, sort_keys=True) + "\n")
    for o in result.outcomes:
        if o.ok:
            print(o.estimate.csv_row())
        else:
            log.warning("%s failed: %s: %s", o.method, type(o.error).__name__, o.error)
    if not any(o.ok for o in result.outcomes):
        log.error("every estimator failed")
        return EXIT_COMPUTE
    return EXIT_OK


# -- diagnose ----------------------------------------------------------------------

def design_weights(x: np.ndarray, d: np.ndarray, cfg: RunConfig) -> np.ndarray:
    """Per-unit weights from the chosen design; zero means the unit is dropped."""
    if cfg.design == "cem":
        # quantile bins; columns with few distinct values are matched exactly
        probs = np.linspace(0, 1, cfg.cem_bins + 1)[1:-1]
        edges = [None if np.unique(x[:, j]).size <= cfg.cem_bins else np.unique(np.quantile(x[:, j], probs))
                 for j in range(x.shape[1])]
        return cem_match(x, d, edges).full_weights(d.size)
    e = predict_propensity(fit_logistic(x, d, clip_bounds=cfg.clip), x)
    if cfg.design == "stratify":
        return stratify(e, d, cfg.strata).weights(d)
    return np.where(d == 1, 1.0 / e, 1.0 / (1.0 - e))


def run_diagnostics(ds: PanelDataset, cfg: RunConfig, network=None):
    """Returns ``(reports, balance)``; ``balance`` is None when not requested."""
    cs = cross_section(ds, cfg.time, network, cfg.spillover)
    if cs.continuous:
        raise ConfigError("diagnostics need a binary treatment; public spillovers are continuous", "spillover")
    x, d, y = cs.x, cs.d, cs.y
    names = list(cs.names)
    weights = design_weights(x, d, cfg)
    reports: list[DiagnosticReport] = []
    balance = None
    for which in cfg.diagnostics:
        if which == "backward_causality":
            keep = weights > 0
            reports.append(backward_causality_check(y[keep], d[keep], x[keep], weights[keep], cfg.threshold))
        elif which == "aa":
            pre = ds.baseline_column(cfg.pre_period)[cs.units]
            reports.append(aa_test(pre, d, x, estimator=cfg.aa_estimator, threshold=cfg.threshold,
                                   clip_bounds=cfg.clip))
        elif which == "balance":
            balance = balance_report(x, d, None, weights, names, cfg.balance_threshold)
            reports.append(balance_diagnostic(balance))
    return reports, balance


def cmd_diagnose(args) -> int:
    cfg = run_config(args)
    ds, net = load_inputs(cfg)
    if "aa" in cfg.diagnostics and cfg.pre_period not in ds.baseline_names:
        raise ConfigError(f"A/A test needs a baseline column {cfg.pre_period!r}", "pre_period")
    reports, balance = run_diagnostics(ds, cfg, net)
    cfg.out.mkdir(parents=True, exist_ok=True)
    (cfg.out / "diagnostics.csv").write_text(reports_to_csv(reports))
    md = ["# Diagnostics", "", f"- design: {cfg.design}", "", reports_to_markdown(reports)]
    if balance is not None:
        (cfg.out / "balance.csv").write_text(balance.to_csv())
        md += ["## Covariate balance", "", balance.to_markdown()]
    (cfg.out / "diagnostics.md").write_text("\n".join(md))
    for r in reports:
        print(f"{r.kind}: {'pass' if r.passed else 'FAIL'} (statistic {r.statistic:.4g})")
    return EXIT_OK if all(r.passed for r in reports) else EXIT_FAILED


# -- benchmark ---------------------------------------------------------------------

def cmd_benchmark(args) -> int:
    path = Path(args.config) if args.config else default_suite_path()
    if not path.exists():
        raise ConfigError(f"file not found: {path}", "--config")
    suite = load_suite(path)
    if args.replications is not None:
        if args.replications < 1:
            raise ConfigError("must be a positive integer", "--replications")
        suite = replace(suite, replications=args.replications)
    seed = suite.seed if args.seed is None else args.seed
    threads = args.threads or os.cpu_count() or 1
    table = run_benchmark(suite.configs, suite.replications, seed=seed, threads=threads)
    checks = check_assertions(table, suite.assertions)
    out = Path(args.out or "out")
    out.mkdir(parents=True, exist_ok=True)
    (out / "table1.csv").write_text(table.to_csv())
    md = table.to_markdown()
    if checks:
        md += "\nOrdering assertions:\n\n" + "".join(
            f"- {'holds' if ok else 'FAILS'}: {text}\n" for text, ok in checks)
    (out / "table1.md").write_text(md)
    print(md, end="")
    return EXIT_OK if all(ok for _, ok in checks) else EXIT_FAILED


# -- entry point -------------------------------------------------------------------

def _common(p: argparse.ArgumentParser):
    p.add_argument("--config", help="JSON config file")
    p.add_argument("--seed", type=int, help="master seed (overrides the config)")
    p.add_argument("--out", help="output directory")
    p.add_argument("--threads", type=int, help="worker threads (default: all cores)")
    p.add_argument("--set", action="append", metavar="KEY=VALUE",
                   help="override a config field; VALUE is parsed as JSON when possible")


def _inputs(p: argparse.ArgumentParser):
    p.add_argument("--panel", help="long-format panel CSV")
    p.add_argument("--baseline", help="baseline covariate CSV")
    p.add_argument("--edges", help="edge list CSV for spillover estimation")
    p.add_argument("--estimators", help="comma-separated estimator names")
    p.add_argument("--contrast", help="two arm codes, treated first, e.g. 3,2")
    p.add_argument("--subgroup", help="baseline column whose labels define subgroups")
    p.add_argument("--spillover", choices=("Public", "Private"), help="estimate the spillover effect")
    p.add_argument("--time", type=int, help="period used by cross-sectional estimators")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="panelcause", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="generate a synthetic panel with known effects")
    _common(p)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("estimate", help="run effect estimators on a panel")
    _common(p)
    _inputs(p)
    p.set_defaults(func=cmd_estimate)

    p = sub.add_parser("diagnose", help="backward-causality, A/A and balance checks")
    _common(p)
    _inputs(p)
    p.add_argument("--design", choices=DESIGNS)
    p.add_argument("--pre-period", dest="pre_period", help="baseline column holding the pre-period outcome")
    p.set_defaults(func=cmd_diagnose)

    p = sub.add_parser("benchmark", help="Monte-Carlo comparison of estimators")
    _common(p)
    p.add_argument("--replications", type=int)
    p.set_defaults(func=cmd_benchmark)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code in (0, None) else EXIT_CONFIG
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        log.error("config error: %s", exc)
        return EXIT_CONFIG
    except (CausalError, ValueError, np.linalg.LinAlgError, RuntimeError) as exc:
        log.error("%s: %s", type(exc).__name__, exc)
        return EXIT_COMPUTE
    except OSError as exc:
        log.error("%s", exc)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
