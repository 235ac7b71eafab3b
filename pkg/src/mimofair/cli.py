"""Command-line front end: configuration, orchestration and result files.

Outputs, written atomically into ``--out``:

``rates.csv``
    ``group_id, x_km, y_km, cluster_id, Q_k, R_bits`` per group.
``summary.json``
    Per-cluster utility, dual value, gap, iterations, convergence flags,
    the resolved configuration and the package version.
``validation.csv``
    Monte Carlo comparison, when ``--mc-validate`` is given.

Exit codes: 0 success, 2 configuration error, 3 solver non-convergence,
4 Monte Carlo validation failure.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import os
import shutil
import sys
import tempfile
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .errors import ConfigError, InvalidInputError, SolverFailure
from .fairness import FairnessOptions, RateReport, UtilitySpec, solve_cluster
from .montecarlo import validate, validation_csv
from .scenario import Scenario, build_cluster_problems, hex7_scenario, two_cell_scenario

__all__ = ["RunConfig", "list_scenarios", "builtin_config", "load_config", "run", "main",
           "EXIT_OK", "EXIT_CONFIG", "EXIT_SOLVER", "EXIT_VALIDATION"]

logger = logging.getLogger(__name__)

EXIT_OK, EXIT_CONFIG, EXIT_SOLVER, EXIT_VALIDATION = 0, 2, 3, 4
MODES = ("pfs", "hfs", "weighted")
RATES_COLUMNS = ("group_id", "x_km", "y_km", "cluster_id", "Q_k", "R_bits")

_REGISTRY = {
    "2cell-fullcoop-pfs": ("2-cell line, full cooperation, proportional fairness",
                           lambda: two_cell_scenario("full"), "pfs"),
    "2cell-fullcoop-hfs": ("2-cell line, full cooperation, max-min fairness",
                           lambda: two_cell_scenario("full"), "hfs"),
    "2cell-nocoop-pfs": ("2-cell line, no cooperation, proportional fairness",
                         lambda: two_cell_scenario("none"), "pfs"),
    "2cell-nocoop-hfs": ("2-cell line, no cooperation, max-min fairness",
                         lambda: two_cell_scenario("none"), "hfs"),
    "7cell-nocoop-pfs": ("7-cell 3-sector torus, no cooperation (L=21), proportional fairness",
                         lambda: hex7_scenario("none"), "pfs"),
    "7cell-sectorcoop-pfs": ("7-cell 3-sector torus, co-located sectors cooperate (L=7), "
                             "proportional fairness", lambda: hex7_scenario("sector"), "pfs"),
    "7cell-fullcoop-pfs": ("7-cell 3-sector torus, full cooperation (L=1), proportional fairness",
                           lambda: hex7_scenario("full"), "pfs"),
}


@dataclass
class RunConfig:
    scenario: Scenario
    mode: str = "pfs"
    weights: list[float] | None = None
    C: float = 1.0
    gap_tol: float = 1e-3
    max_outer: int = 2000
    form: str = "coupled"
    mc_validate: bool = False
    mc_draws: int = 500
    mc_N: list[int] = field(default_factory=lambda: [1, 2, 4])
    seed: int = 0
    out: str = "results"
    jobs: int = 1

    def to_dict(self) -> dict:
        return {
            "scenario": self.scenario.to_dict(),
            "mode": self.mode,
            "weights": self.weights,
            "C": self.C,
            "gap_tol": self.gap_tol,
            "max_outer": self.max_outer,
            "form": self.form,
            "mc": {"enabled": self.mc_validate, "draws": self.mc_draws,
                   "N": list(self.mc_N), "seed": self.seed},
        }

    @classmethod
    def from_dict(cls, d: dict, **overrides) -> "RunConfig":
        if not isinstance(d, dict) or "scenario" not in d:
            raise ConfigError("configuration must be an object with a 'scenario' entry")
        try:
            scenario = Scenario.from_dict(d["scenario"])
        except InvalidInputError as exc:
            raise ConfigError(str(exc)) from exc
        mc = d.get("mc", {}) or {}
        try:
            cfg = cls(
                scenario=scenario,
                mode=str(d.get("mode", "pfs")),
                weights=None if d.get("weights") is None else [float(w) for w in d["weights"]],
                C=float(d.get("C", 1.0)),
                gap_tol=float(d.get("gap_tol", 1e-3)),
                max_outer=int(d.get("max_outer", 2000)),
                form=str(d.get("form", "coupled")),
                mc_validate=bool(mc.get("enabled", False)),
                mc_draws=int(mc.get("draws", 500)),
                mc_N=[int(n) for n in mc.get("N", [1, 2, 4])],
                seed=int(mc.get("seed", 0)),
            )
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"malformed configuration: {exc}") from exc
        for k, v in overrides.items():
            if v is not None:
                setattr(cfg, k, v)
        cfg.check()
        return cfg

    def check(self):
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}")
        if self.mode == "weighted":
            if not self.weights:
                raise ConfigError("weighted mode needs --weights")
            sizes = {len(c.groups) for c in self.scenario.partition}
            if len(self.weights) not in sizes | {self.scenario.num_groups}:
                raise ConfigError("weights must have one entry per group (scenario-wide or per cluster)")
            if any(w < 0 for w in self.weights) or not any(w > 0 for w in self.weights):
                raise ConfigError("weights must be non-negative with at least one positive entry")
        if not self.C > 0 or not self.gap_tol > 0 or self.max_outer < 1:
            raise ConfigError("C, gap_tol and max_outer must be positive")
        if self.mc_validate and (self.mc_draws < 2 or not self.mc_N or min(self.mc_N) < 1):
            raise ConfigError("Monte Carlo validation needs draws >= 2 and N >= 1")
        if self.jobs < 1:
            raise ConfigError("jobs must be >= 1")


def list_scenarios() -> dict[str, str]:
    """Identifiers of the built-in scenarios and a one-line description each."""
    return {name: desc for name, (desc, _, _) in _REGISTRY.items()}


def builtin_config(name: str) -> dict:
    """The JSON-form configuration of a built-in scenario."""
    if name not in _REGISTRY:
        raise ConfigError(f"unknown scenario {name!r}; choose from {sorted(_REGISTRY)}")
    _, build, mode = _REGISTRY[name]
    sc = build()
    sc = Scenario(**{**sc.__dict__, "name": name})
    return RunConfig(scenario=sc, mode=mode).to_dict()


def load_config(path) -> dict:
    try:
        with open(path, encoding="utf-8") as fh:
            return json.load(fh)
    except FileNotFoundError as exc:
        raise ConfigError(f"config file not found: {path}") from exc
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise ConfigError(f"cannot parse {path}: {exc}") from exc


# ---------------------------------------------------------------------------
# Orchestration
# ---------------------------------------------------------------------------
def _cluster_weights(cfg: RunConfig, cluster):
    if len(cfg.weights) == cfg.scenario.num_groups:
        return tuple(cfg.weights[g] for g in cluster.groups)
    return tuple(cfg.weights)


def _solve_one(args):
    cluster, utility, options = args
    return solve_cluster(cluster, utility, options)


def _solve_all(cfg: RunConfig, clusters) -> list[RateReport]:
    options = FairnessOptions(gap_tol=cfg.gap_tol, max_outer=cfg.max_outer, form=cfg.form)
    tasks = []
    for c in clusters:
        if cfg.mode == "weighted":
            util = UtilitySpec("weighted", cfg.C, _cluster_weights(cfg, c))
        else:
            util = UtilitySpec(cfg.mode, cfg.C)
        tasks.append((c, util, options))
    if cfg.jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=cfg.jobs) as ex:
            return list(ex.map(_solve_one, tasks))
    return [_solve_one(t) for t in tasks]


def _rates_csv(scenario: Scenario, reports) -> str:
    rows = {}
    for rep in reports:
        for k, g in enumerate(rep.groups):
            grp = scenario.groups[g]
            rows[g] = (g, repr(grp.x), repr(grp.y), rep.cluster_id,
                       repr(float(rep.powers[k])), repr(float(rep.rates_bits[k])))
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(RATES_COLUMNS)
    for g in sorted(rows):
        w.writerow(rows[g])
    return buf.getvalue()


def _jsonable(x):
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, np.ndarray):
        return _jsonable(x.tolist())
    if isinstance(x, (np.floating, float)):
        v = float(x)
        return v if np.isfinite(v) else str(v)
    if isinstance(x, np.integer):
        return int(x)
    if isinstance(x, np.bool_):
        return bool(x)
    return x


def _summary(cfg: RunConfig, reports, validation_ok) -> dict:
    clusters = []
    for rep in reports:
        diag = {k: v for k, v in rep.diagnostics.items() if k != "gap_history"}
        clusters.append({
            "cluster_id": rep.cluster_id, "groups": list(rep.groups), "kind": rep.kind,
            "converged": rep.converged, "iterations": rep.iterations,
            "utility": rep.utility, "dual": rep.dual, "gap": rep.gap, "rel_gap": rep.rel_gap,
            "mu": rep.mu, "diagnostics": diag,
        })
    return _jsonable({
        "software": {"package": "mimofair", "version": __version__},
        "config": cfg.to_dict(),
        "converged": all(r.converged for r in reports),
        "total_utility": float(sum(r.utility for r in reports)),
        "rate_units": "bits/channel use/user",
        "validation_passed": validation_ok,
        "clusters": clusters,
    })


def _write_atomic(out: Path, files: dict[str, str]):
    out.mkdir(parents=True, exist_ok=True)
    stage = Path(tempfile.mkdtemp(prefix=".stage-", dir=out))
    try:
        for name, text in files.items():
            with open(stage / name, "w", encoding="utf-8", newline="\n") as fh:
                fh.write(text)
        for name in files:
            os.replace(stage / name, out / name)
    finally:
        shutil.rmtree(stage, ignore_errors=True)


def run(cfg: RunConfig) -> int:
    """Solve every cluster, optionally validate, write artifacts; return an exit code."""
    cfg.check()
    try:
        clusters = build_cluster_problems(cfg.scenario)
    except InvalidInputError as exc:
        raise ConfigError(str(exc)) from exc
    reports = _solve_all(cfg, clusters)

    files = {"rates.csv": _rates_csv(cfg.scenario, reports)}
    validation_ok = None
    if cfg.mc_validate:
        from .asymptotics import weight_order
        rows = []
        for c, rep in zip(clusters, reports):
            w = rep.mu if rep.mu is not None else np.asarray(_cluster_weights(cfg, c))
            rows += validate(c, rep.powers, weight_order(w), N_list=cfg.mc_N,
                             draws=cfg.mc_draws, seed=cfg.seed, form=cfg.form)
        validation_ok = all(r.passed for r in rows)
        files["validation.csv"] = validation_csv(rows)
    files["summary.json"] = json.dumps(_summary(cfg, reports, validation_ok), indent=2) + "\n"
    _write_atomic(Path(cfg.out), files)

    if not all(r.converged for r in reports):
        return EXIT_SOLVER
    if validation_ok is False:
        return EXIT_VALIDATION
    return EXIT_OK


# ---------------------------------------------------------------------------
# Entry point
# ---------------------------------------------------------------------------
def _parse_list(text, conv):
    try:
        return [conv(x) for x in text.split(",") if x.strip()]
    except ValueError as exc:
        raise ConfigError(f"cannot parse list {text!r}") from exc


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="mimofair",
        description="Large-system ergodic group rates for cooperative multi-cell MIMO downlinks.")
    src = p.add_mutually_exclusive_group()
    src.add_argument("--config", metavar="PATH", help="JSON configuration file")
    src.add_argument("--scenario", metavar="NAME", help="built-in scenario identifier")
    src.add_argument("--list-scenarios", action="store_true", help="print built-in scenarios")
    p.add_argument("--dump-config", action="store_true",
                   help="print the resolved configuration as JSON and exit")
    p.add_argument("--mode", choices=MODES)
    p.add_argument("--weights", metavar="W1,...,WA")
    p.add_argument("--mc-validate", action="store_true", default=None)
    p.add_argument("--mc-draws", type=int)
    p.add_argument("--mc-N", metavar="N1,N2,...")
    p.add_argument("--seed", type=int)
    p.add_argument("--gap-tol", type=float)
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--out", default="results", metavar="DIR")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.list_scenarios:
        for name, desc in list_scenarios().items():
            print(f"{name:24s} {desc}")
        return EXIT_OK
    try:
        if args.config:
            raw = load_config(args.config)
        elif args.scenario:
            raw = builtin_config(args.scenario)
        else:
            raise ConfigError("give --config PATH or --scenario NAME")
        cfg = RunConfig.from_dict(
            raw, mode=args.mode,
            weights=None if args.weights is None else _parse_list(args.weights, float),
            mc_validate=args.mc_validate, mc_draws=args.mc_draws,
            mc_N=None if args.mc_N is None else _parse_list(args.mc_N, int),
            seed=args.seed, gap_tol=args.gap_tol, out=args.out, jobs=args.jobs,
        )
        if args.dump_config:
            print(json.dumps(cfg.to_dict(), indent=2))
            return EXIT_OK
        code = run(cfg)
    except ConfigError as exc:
        print(f"mimofair: configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except SolverFailure as exc:
        print(f"mimofair: solver failure: {exc} (residual {exc.residual:.3g})", file=sys.stderr)
        return EXIT_SOLVER
    if code == EXIT_SOLVER:
        print("mimofair: at least one cluster did not converge; see summary.json", file=sys.stderr)
    elif code == EXIT_VALIDATION:
        print("mimofair: Monte Carlo validation failed; see validation.csv", file=sys.stderr)
    return code


if __name__ == "__main__":
    sys.exit(main())
