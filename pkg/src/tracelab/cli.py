"""Command-line entry point: experiment configuration, execution, reporting.

Subcommands:
  solve           run the first configured symmetry class over the lambda schedule
  sweep           run every k, emit traces, summary, plots, nonequivalence report
  trace-constant  tabulate the half-space constant (oracle vs closed form)
  report          re-render CSV/JSON/SVG artifacts from existing checkpoints
  validate        schema and invariant checks only

Exit codes: 0 ok, 1 runtime failure, 2 configuration error.  Failures print
a machine-readable JSON object to stderr.  CTL_LOG in {error, info, debug}
controls logging.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import os
import sys
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .analysis import classify_branch, nonequivalence_report
from .errors import ConfigError, TraceLabError
from .functional import Params, geometry, trace_distribution
from .mesh import build_mesh
from .optimizer import (TRACE_COLUMNS, SolverConfig, lambda_sweep,
                        to_pde_solution)
from .svgplot import bar_chart, line_chart
from .symmetry import enumerate_group, minimal_orbital_set
from .trace_constant import (closed_form_p2, critical_exponent,
                             halfspace_oracle, threshold)

log = logging.getLogger("tracelab.cli")

BRANCH_COLUMNS = [
    "k", "l", "seed", "lambda", "quotient", "grad_term", "mass_term",
    "trace_term", "iterations", "converged", "grad_norm",
    "neighborhood_mass", "constraint_ok", "escaped", "peak_count",
    "captured_mass", "threshold", "threshold_ratio", "concentrated",
]


@dataclass
class ExperimentConfig:
    dimension: int = 3
    p: float = 2.0
    k_values: list = field(default_factory=lambda: [2, 3, 4])
    refinement: int = 2
    lambda_schedule: list = field(default_factory=lambda: [10.0, 30.0, 100.0, 300.0, 1000.0])
    epsilon_schedule: list = field(default_factory=lambda: [1e-2, 1e-5, 1e-8])
    beta: float = 0.1
    kappa: object = "auto"
    seeds: list = field(default_factory=lambda: [0])
    output_dir: str = "out"
    grad_tol: float = 1e-7
    max_iters: int = 6000
    node_budget: int = 200_000
    bubble_width: object = "auto"
    init_jitter: float = 0.0
    oracle_truncation_radius: float = 20.0
    oracle_resolution: int = 24

    @classmethod
    def from_json(cls, path: str) -> "ExperimentConfig":
        try:
            with open(path) as fh:
                doc = json.load(fh)
        except FileNotFoundError as exc:
            raise ConfigError(f"config file not found: {path}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config is not valid JSON: {exc}") from exc
        if not isinstance(doc, dict):
            raise ConfigError("config root must be a JSON object")
        oracle = doc.pop("oracle", {})
        known = {f for f in cls.__dataclass_fields__}
        cfg = cls()
        for key, value in doc.items():
            if key not in known:
                raise ConfigError(f"unknown config field: {key!r}")
            setattr(cfg, key, value)
        if oracle:
            cfg.oracle_truncation_radius = oracle.get(
                "truncation_radius", cfg.oracle_truncation_radius)
            cfg.oracle_resolution = oracle.get("resolution", cfg.oracle_resolution)
        cfg.validate()
        return cfg

    def validate(self) -> dict:
        """Invariant checks; returns {errors, warnings, resolved} without computing."""
        errors, warns = [], []
        if self.dimension not in (2, 3):
            errors.append(f"dimension must be 2 or 3, got {self.dimension}")
        elif not (1.0 < self.p < self.dimension):
            errors.append(
                f"p must lie in (1, n) = (1, {self.dimension}), got {self.p}")
        if not self.k_values or any(int(k) < 2 for k in self.k_values):
            errors.append("k_values must be a nonempty list of integers >= 2")
        if self.refinement < 0:
            errors.append("refinement must be non-negative")
        if (not self.lambda_schedule
                or list(self.lambda_schedule) != sorted(self.lambda_schedule)
                or self.lambda_schedule[0] <= 0):
            errors.append("lambda_schedule must be a positive increasing list")
        if (not self.epsilon_schedule
                or list(self.epsilon_schedule) != sorted(self.epsilon_schedule,
                                                         reverse=True)
                or self.epsilon_schedule[-1] < 0):
            errors.append("epsilon_schedule must be a non-negative decreasing list")
        if not (0.0 < self.beta < 1.0):
            errors.append("beta must lie in (0, 1)")
        if self.kappa != "auto" and not (isinstance(self.kappa, (int, float))
                                         and self.kappa > 0):
            errors.append('kappa must be "auto" or a positive number')
        if self.bubble_width != "auto" and not (
                isinstance(self.bubble_width, (int, float)) and self.bubble_width > 0):
            errors.append('bubble_width must be "auto" or a positive number')
        if not self.seeds:
            errors.append("seeds must be nonempty")
        if self.grad_tol <= 0 or self.max_iters < 1:
            errors.append("grad_tol and max_iters must be positive")
        resolved = {}
        if not errors:
            q = critical_exponent(self.dimension, self.p)
            resolved = {"n": self.dimension, "p": self.p, "q": q}
            if self.p > (self.dimension + 1) / 2.0:
                warns.append(
                    f"p = {self.p} > (n+1)/2 = {(self.dimension + 1) / 2}: outside "
                    "the regime where the concentration threshold bound is guaranteed")
        report = {"errors": errors, "warnings": warns, "resolved": resolved}
        if errors:
            raise ConfigError("; ".join(errors))
        return report

    def solver_config(self, kappa: float, seed: int) -> SolverConfig:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            params = Params(n=self.dimension, p=self.p, beta=self.beta,
                            kappa=kappa)
        bw = None if self.bubble_width == "auto" else float(self.bubble_width)
        return SolverConfig(
            params=params,
            lambda_schedule=[float(x) for x in self.lambda_schedule],
            epsilon_schedule=[float(x) for x in self.epsilon_schedule],
            max_iters=int(self.max_iters), grad_tol=float(self.grad_tol),
            bubble_width=bw, jitter=float(self.init_jitter), seed=int(seed))


def _fmt_cell(x) -> str:
    if isinstance(x, bool):
        return "true" if x else "false"
    if isinstance(x, float):
        return repr(x)
    return str(x)


def _write_csv(path, columns, rows):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(columns)
        for row in rows:
            writer.writerow([_fmt_cell(x) for x in row])


def _run_branch_job(cfg: ExperimentConfig, k: int, seed: int, out_dir: str,
                    K_estimate: float):
    """Sweep one symmetry class; returns (k, seed, branches, mesh, A)."""
    mesh = build_mesh(cfg.dimension, k, cfg.refinement,
                      node_budget=cfg.node_budget)
    group = enumerate_group(mesh.group_spec)
    kappa = None if cfg.kappa == "auto" else float(cfg.kappa)
    A = minimal_orbital_set(mesh.group_spec, kappa=kappa)
    scfg = cfg.solver_config(A.kappa, seed)
    ck_dir = os.path.join(out_dir, "checkpoints")
    os.makedirs(ck_dir, exist_ok=True)
    branches = lambda_sweep(scfg, group, A, mesh, checkpoint_dir=ck_dir)
    tspec = threshold(cfg.dimension, cfg.p, A.m_A, K_estimate=K_estimate)
    for br in branches:
        classify_branch(br, tspec, beta=cfg.beta)
    return k, seed, branches, mesh, A, tspec


def _load_branch_job(cfg: ExperimentConfig, k: int, seed: int, out_dir: str,
                     K_estimate: float):
    """Rebuild branches for (k, seed) from checkpoints only (report mode)."""
    from .optimizer import _branch_from_checkpoint
    mesh = build_mesh(cfg.dimension, k, cfg.refinement,
                      node_budget=cfg.node_budget)
    kappa = None if cfg.kappa == "auto" else float(cfg.kappa)
    A = minimal_orbital_set(mesh.group_spec, kappa=kappa)
    ck_dir = os.path.join(out_dir, "checkpoints")
    branches = []
    for stage in range(len(cfg.lambda_schedule)):
        path = os.path.join(ck_dir, f"branch_k{k}_seed{seed}_stage{stage}.json")
        if not os.path.exists(path):
            raise TraceLabError(f"missing checkpoint {path}; run `sweep` first")
        with open(path) as fh:
            doc = json.load(fh)
        doc.setdefault("p", cfg.p)
        branches.append(_branch_from_checkpoint(doc, mesh, A))
    tspec = threshold(cfg.dimension, cfg.p, A.m_A, K_estimate=K_estimate)
    for br in branches:
        classify_branch(br, tspec, beta=cfg.beta)
    return k, seed, branches, mesh, A, tspec


def _k_estimate(cfg: ExperimentConfig, out_dir: str) -> float:
    cache = os.path.join(out_dir, "trace_constants.json")
    if cfg.p == 2.0 and cfg.dimension >= 3:
        return closed_form_p2(cfg.dimension)
    return halfspace_oracle(cfg.dimension, cfg.p,
                            truncation_radius=cfg.oracle_truncation_radius,
                            resolution=cfg.oracle_resolution,
                            cache_path=cache).value


def _emit_artifacts(cfg, out_dir, results):
    """Single writer for every CSV/JSON/SVG artifact of a (partial) sweep."""
    os.makedirs(os.path.join(out_dir, "plots"), exist_ok=True)
    branch_rows = []
    all_branches = []
    energy_series = {}
    hlines = {}
    for k, seed, branches, mesh, A, tspec in results:
        trace_rows = []
        for br in branches:
            trace_rows += [r.as_list() for r in br.energy_trace]
        _write_csv(os.path.join(out_dir, f"trace_k{k}_seed{seed}.csv"),
                   TRACE_COLUMNS, trace_rows)
        energy_series[f"k={k}"] = ([br.lam for br in branches],
                                   [br.quotient for br in branches])
        hlines[f"thr k={k}"] = tspec.threshold
        for br in branches:
            cls = br.classification
            report = cls.peak_report
            branch_rows.append([
                k, 1, seed, br.lam, br.quotient, br.breakdown.grad_term,
                br.breakdown.mass_term, br.breakdown.trace_term,
                br.iterations, br.converged, br.grad_norm,
                br.neighborhood_mass, br.constraint_ok, br.escaped,
                cls.peak_count, report.total_mass, tspec.threshold,
                cls.threshold_ratio, cls.concentrated,
            ])
        all_branches += branches

        final = branches[-1]
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            params = Params(n=cfg.dimension, p=cfg.p,
                            lam=final.lam, beta=cfg.beta)
        masses = trace_distribution(final.field, params)
        geo = geometry(mesh)
        centroids = mesh.vertices[mesh.boundary_facets].mean(axis=1)
        azimuth = np.degrees(np.arctan2(centroids[:, 1], centroids[:, 0]))
        density = masses / geo.facet_measures
        nbins = 72
        edges = np.linspace(-180.0, 180.0, nbins + 1)
        which = np.clip(np.digitize(azimuth, edges) - 1, 0, nbins - 1)
        dens_bin = np.zeros(nbins)
        area_bin = np.zeros(nbins)
        np.add.at(dens_bin, which, masses)
        np.add.at(area_bin, which, geo.facet_measures)
        prof = dens_bin / np.maximum(area_bin, 1e-300)
        centers = 0.5 * (edges[:-1] + edges[1:])
        line_chart({f"k={k}": (centers.tolist(), prof.tolist())},
                   os.path.join(out_dir, "plots",
                                f"boundary_density_k{k}_seed{seed}.svg"),
                   title=f"boundary q-mass density, k={k}, lambda={final.lam:g}",
                   xlabel="azimuth (degrees)", ylabel="mass / boundary measure")
        peaks = final.classification.peak_report.masses()
        bar_chart([f"p{i}" for i in range(len(peaks))], peaks,
                  os.path.join(out_dir, "plots",
                               f"peak_masses_k{k}_seed{seed}.svg"),
                  title=f"peak masses, k={k}, lambda={final.lam:g}",
                  xlabel="peak", ylabel="q-mass share", hline=1.0 / A.m_A)

    _write_csv(os.path.join(out_dir, "branches.csv"), BRANCH_COLUMNS, branch_rows)
    if energy_series:
        line_chart(energy_series,
                   os.path.join(out_dir, "plots", "energy_vs_lambda.svg"),
                   title="quotient vs lambda", xlabel="lambda",
                   ylabel="quotient", logx=True, hlines=hlines)
    summary = nonequivalence_report(all_branches)
    summary["config"] = {"dimension": cfg.dimension, "p": cfg.p,
                         "q": critical_exponent(cfg.dimension, cfg.p),
                         "refinement": cfg.refinement,
                         "k_values": list(cfg.k_values)}
    with open(os.path.join(out_dir, "summary.json"), "w") as fh:
        json.dump(summary, fh, indent=1, sort_keys=True)
    return summary


def _cmd_sweep(cfg, out_dir, workers, only_first_k=False, load_only=False):
    os.makedirs(out_dir, exist_ok=True)
    K_est = _k_estimate(cfg, out_dir)
    ks = list(cfg.k_values)[:1] if only_first_k else list(cfg.k_values)
    jobs = [(k, int(seed)) for k in ks for seed in cfg.seeds]
    runner = _load_branch_job if load_only else _run_branch_job
    if workers > 1 and len(jobs) > 1 and not load_only:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            futures = [pool.submit(_run_branch_job, cfg, k, s, out_dir, K_est)
                       for k, s in jobs]
            results = [f.result() for f in futures]
        results.sort(key=lambda r: (r[0], r[1]))
    else:
        results = [runner(cfg, k, s, out_dir, K_est) for k, s in jobs]
    summary = _emit_artifacts(cfg, out_dir, results)
    print(json.dumps({"nonequivalent_count": summary["nonequivalent_count"],
                      "lambda": summary["lambda"], "K_estimate": K_est}))
    return 0


def _cmd_trace_constant(cfg, out_dir):
    os.makedirs(out_dir, exist_ok=True)
    cache = os.path.join(out_dir, "trace_constants.json")
    res = halfspace_oracle(cfg.dimension, cfg.p,
                           truncation_radius=cfg.oracle_truncation_radius,
                           resolution=cfg.oracle_resolution, cache_path=cache)
    rows = [["oracle", cfg.dimension, cfg.p, res.value,
             res.truncation_sensitivity]]
    agreement = None
    if cfg.p == 2.0 and cfg.dimension >= 3:
        closed = closed_form_p2(cfg.dimension)
        rows.append(["closed_form", cfg.dimension, cfg.p, closed, 0.0])
        agreement = abs(res.value - closed) / closed
    _write_csv(os.path.join(out_dir, "trace_constant.csv"),
               ["method", "n", "p", "K", "truncation_sensitivity"], rows)
    doc = {"rows": [dict(zip(["method", "n", "p", "K", "truncation_sensitivity"],
                             r)) for r in rows]}
    if agreement is not None:
        doc["relative_agreement"] = agreement
    print(json.dumps(doc, indent=1, sort_keys=True))
    return 0


def _cmd_validate(cfg):
    report = cfg.validate()
    report["valid"] = True
    print(json.dumps(report, indent=1, sort_keys=True))
    return 0


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="tracelab",
        description="multi-peak boundary concentration experiments on the unit ball")
    parser.add_argument("subcommand",
                        choices=["solve", "sweep", "trace-constant", "report",
                                 "validate"])
    parser.add_argument("--config", required=True, help="experiment JSON path")
    parser.add_argument("--out", default=None, help="output directory override")
    parser.add_argument("--workers", type=int, default=1)
    parser.add_argument("--seed", type=int, default=None,
                        help="replaces the config seed list")
    args = parser.parse_args(argv)

    level = {"error": logging.ERROR, "info": logging.INFO,
             "debug": logging.DEBUG}.get(os.environ.get("CTL_LOG", "error"),
                                         logging.ERROR)
    logging.basicConfig(level=level,
                        format="%(asctime)s %(name)s %(levelname)s %(message)s")

    try:
        cfg = ExperimentConfig.from_json(args.config)
        if args.seed is not None:
            cfg.seeds = [args.seed]
        out_dir = args.out if args.out is not None else cfg.output_dir
        if args.subcommand == "validate":
            return _cmd_validate(cfg)
        if args.subcommand == "trace-constant":
            return _cmd_trace_constant(cfg, out_dir)
        if args.subcommand == "solve":
            return _cmd_sweep(cfg, out_dir, args.workers, only_first_k=True)
        if args.subcommand == "sweep":
            return _cmd_sweep(cfg, out_dir, args.workers)
        if args.subcommand == "report":
            return _cmd_sweep(cfg, out_dir, args.workers, load_only=True)
        raise AssertionError("unreachable")
    except ConfigError as exc:
        json.dump({"error": {"type": "config", "message": str(exc)}},
                  sys.stderr)
        sys.stderr.write("\n")
        return 2
    except (TraceLabError, OSError) as exc:
        json.dump({"error": {"type": type(exc).__name__, "message": str(exc)}},
                  sys.stderr)
        sys.stderr.write("\n")
        return 1


if __name__ == "__main__":
    sys.exit(main())
