"""Minimization of the trace quotient over the G-invariant P1 space.

The descent is projected gradient with Armijo backtracking: each accepted
step maps u to normalize(symmetrize(|u - t d|)), where d is the gradient
preconditioned by the (2-Laplacian + lambda mass) metric, so the quotient
never increases within a (lambda, epsilon) stage and iterates stay exactly
G-invariant and nonnegative.  The boundary-mass constraint is monitored,
never enforced; branches that leak mass out of the orbit caps are flagged
as escaped.
"""

from __future__ import annotations

import hashlib
import json
import logging
import math
import os
from dataclasses import dataclass, field

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.linalg import splu

from .errors import SolveError
from .functional import (EnergyBreakdown, NodalField, Params, energy,
                         energy_and_gradient, geometry, lq_boundary_norm,
                         neighborhood_mass, weak_residual_vector)
from .mesh import SymmetricMesh
from .symmetry import GroupElement, OrbitalSet, geodesic_distance, symmetrize

log = logging.getLogger("tracelab.optimizer")


@dataclass
class SolverConfig:
    params: Params
    lambda_schedule: list = field(default_factory=lambda: [10.0, 30.0, 100.0, 300.0, 1000.0])
    epsilon_schedule: list = field(default_factory=lambda: [1e-2, 1e-5, 1e-8])
    step_init: float = 1.0
    step_shrink: float = 0.5
    armijo_c: float = 1e-4
    max_iters: int = 6000
    grad_tol: float = 1e-6
    bubble_width: float | None = None   # None: kappa / 3
    jitter: float = 0.0
    seed: int = 0
    stagnation_tol: float = 1e-12
    stagnation_window: int = 100

    def __post_init__(self):
        if not self.lambda_schedule:
            raise ValueError("lambda schedule must be nonempty")
        if list(self.lambda_schedule) != sorted(self.lambda_schedule):
            raise ValueError("lambda schedule must be increasing")
        if not self.epsilon_schedule:
            raise ValueError("epsilon schedule must be nonempty")
        if list(self.epsilon_schedule) != sorted(self.epsilon_schedule, reverse=True):
            raise ValueError("epsilon schedule must be decreasing")
        if self.grad_tol <= 0 or self.max_iters < 1:
            raise ValueError("tolerances must be positive")


@dataclass
class TraceRow:
    iteration: int
    lam: float
    epsilon: float
    grad_term: float
    mass_term: float
    trace_term: float
    quotient: float

    def as_list(self):
        return [self.iteration, self.lam, self.epsilon, self.grad_term,
                self.mass_term, self.trace_term, self.quotient]


TRACE_COLUMNS = ["iteration", "lambda", "epsilon", "grad_term", "mass_term",
                 "trace_term", "quotient"]


@dataclass
class Branch:
    """One (k, l, lambda)-indexed minimization run."""

    group_spec: object
    orbital_set: OrbitalSet
    lam: float
    field: NodalField                 # final iterate, unit L_q boundary norm
    quotient: float                   # evaluated at epsilon = 0
    breakdown: EnergyBreakdown        # epsilon = 0 terms
    energy_trace: list
    iterations: int
    converged: bool
    line_search_failed: bool
    grad_norm: float
    neighborhood_mass: float
    constraint_ok: bool
    escaped: bool
    seed: int
    warm_started: bool = False
    classification: object = None

    def to_checkpoint_dict(self) -> dict:
        return {
            "lambda": self.lam,
            "coefficients": self.field.coefficients.tolist(),
            "quotient": self.quotient,
            "iterations": self.iterations,
            "converged": self.converged,
            "line_search_failed": self.line_search_failed,
            "grad_norm": self.grad_norm,
            "neighborhood_mass": self.neighborhood_mass,
            "constraint_ok": self.constraint_ok,
            "escaped": self.escaped,
            "seed": self.seed,
            "warm_started": self.warm_started,
            "energy_trace": [r.as_list() for r in self.energy_trace],
        }


def bubble_init(A: OrbitalSet, w: float, mesh: SymmetricMesh,
                jitter: float = 0.0, seed: int = 0,
                apply_symmetry: bool = True) -> NodalField:
    """Sum of exponential bumps at the orbit points, then group-averaged.

    w must stay below half the inter-peak distance so the bumps identify
    separate peaks.
    """
    if A.m_A > 1:
        half_sep = 0.5 * A.min_pairwise_geodesic()
        if w >= half_sep:
            raise ValueError(
                f"bubble width {w} overlaps neighboring peaks "
                f"(>= half inter-peak distance {half_sep:.6g})")
    dists = np.linalg.norm(
        mesh.vertices[:, None, :] - A.points[None, :, :], axis=2)
    vals = np.exp(-dists / w).sum(axis=1)
    if jitter > 0.0:
        rng = np.random.default_rng(seed)
        vals = np.abs(vals * (1.0 + jitter * rng.standard_normal(len(vals))))
    if apply_symmetry:
        vals = symmetrize(vals, mesh)
    return NodalField(mesh=mesh, coefficients=vals)


def _metric_lu(mesh: SymmetricMesh, lam: float):
    """LU factors of the SPD metric (2-Laplacian stiffness + lambda * mass)."""
    geo = geometry(mesh)
    cells = mesh.cells
    nv = mesh.num_vertices
    d = mesh.dim
    stiff = np.einsum("c,cdi,cdj->cij", geo.volumes, geo.cell_grads, geo.cell_grads)
    mass_loc = (np.ones((d + 1, d + 1)) + np.eye(d + 1)) / ((d + 1) * (d + 2))
    mass = geo.volumes[:, None, None] * mass_loc[None, :, :]
    local = stiff + lam * mass
    rows = np.repeat(cells, d + 1, axis=1).ravel()
    cols = np.tile(cells, (1, d + 1)).ravel()
    mat = coo_matrix((local.ravel(), (rows, cols)), shape=(nv, nv)).tocsc()
    return splu(mat)


def _normalize(vals, mesh, params):
    u = NodalField(mesh=mesh, coefficients=vals)
    nrm = lq_boundary_norm(u, params)
    if not (nrm > 0.0) or not math.isfinite(nrm):
        raise SolveError("field lost its boundary trace during descent")
    return vals / nrm


def minimize(u0: NodalField, config: SolverConfig, group: list[GroupElement],
             A: OrbitalSet, mesh: SymmetricMesh, lam: float | None = None,
             warm_started: bool = False) -> Branch:
    """Minimize the quotient at one lambda with epsilon continuation."""
    params = config.params
    if lam is None:
        lam = config.lambda_schedule[-1]
    eps_schedule = list(config.epsilon_schedule)
    if params.p == 2.0:
        # epsilon never enters the p=2 gradient; skip straight to the tail
        eps_schedule = eps_schedule[-1:]

    vals = symmetrize(np.abs(u0.coefficients), mesh, group)
    vals = _normalize(vals, mesh, params.with_(lam=lam))

    lu = _metric_lu(mesh, lam)
    trace_rows: list[TraceRow] = []
    iteration = 0
    line_search_failed = False
    grad_norm = math.inf
    converged = False

    for eps in eps_schedule:
        pe = params.with_(lam=lam, epsilon=eps)
        u = NodalField(mesh=mesh, coefficients=vals)
        bd, g = energy_and_gradient(u, pe)
        if not math.isfinite(bd.quotient):
            raise SolveError("NaN energy")
        val = bd.quotient
        trace_rows.append(TraceRow(iteration, lam, eps, bd.grad_term,
                                   bd.mass_term, bd.trace_term, bd.quotient))
        history = [val]
        step = config.step_init
        converged = False
        for _ in range(config.max_iters):
            gs = symmetrize(g, mesh)
            # nodes on the positivity bound with the gradient pushing them
            # negative are KKT-stationary; stationarity is measured by the
            # projected-gradient displacement, which ignores such pushes and
            # equals the raw gradient wherever the iterate is interior
            gk = gs.copy()
            pinned = vals <= 0.0
            gk[pinned] = np.minimum(gk[pinned], 0.0)
            gk = symmetrize(gk, mesh)
            pg = vals - np.maximum(vals - gk, 0.0)
            grad_norm = float(np.linalg.norm(pg))
            if grad_norm <= config.grad_tol:
                converged = True
                break
            d = lu.solve(gk)
            # on the bound, only gradient-indicated reactivation is allowed:
            # any other motion there is anti-descent the model cannot see
            d[pinned & ~((gk < 0.0) & (d < 0.0))] = 0.0
            d = symmetrize(d, mesh)
            if float(gk @ d) <= 0:
                # filtered metric direction lost descent; fall back to the
                # projected gradient itself
                d = gk
            accepted = False
            dscale = float(np.max(np.abs(d)))
            if dscale == 0.0:
                converged = True
                break
            # keep the first trial displacement at the scale of the field
            # itself; the cone projection makes larger trials meaningless
            t = min(step, 10.0 * float(np.max(vals)) / dscale)
            for _ in range(60):
                cand_pre = np.maximum(vals - t * d, 0.0)
                # sufficient decrease against the displacement the cone
                # projection actually allows, not the raw step t*d
                dec = float(gk @ (vals - cand_pre))
                if dec <= 0.0:
                    t *= config.step_shrink
                    continue
                cand = symmetrize(cand_pre, mesh)
                try:
                    cand = _normalize(cand, mesh, pe)
                except SolveError:
                    t *= config.step_shrink
                    continue
                cu = NodalField(mesh=mesh, coefficients=cand)
                cbd, cg = energy_and_gradient(cu, pe)
                if math.isnan(cbd.quotient):
                    raise SolveError("NaN energy")
                if cbd.quotient < val and cbd.quotient <= val - config.armijo_c * dec:
                    vals, val, g = cand, cbd.quotient, cg
                    iteration += 1
                    trace_rows.append(TraceRow(iteration, lam, eps,
                                               cbd.grad_term, cbd.mass_term,
                                               cbd.trace_term, cbd.quotient))
                    history.append(val)
                    step = min(t * 2.0, 1e6)
                    accepted = True
                    break
                t *= config.step_shrink
            if not accepted:
                line_search_failed = True
                log.info("line search stalled at lambda=%g eps=%g quotient=%g",
                         lam, eps, val)
                break
            if (len(history) > config.stagnation_window and
                    history[-config.stagnation_window - 1] - val
                    <= config.stagnation_tol * abs(val)):
                break

    final = NodalField(mesh=mesh, coefficients=vals)
    bd0 = energy(final, params.with_(lam=lam, epsilon=0.0))
    nb_mass = neighborhood_mass(final, A, params.with_(lam=lam))
    constraint_ok = nb_mass >= 1.0 - params.beta
    return Branch(
        group_spec=mesh.group_spec, orbital_set=A, lam=lam, field=final,
        quotient=bd0.quotient, breakdown=bd0, energy_trace=trace_rows,
        iterations=iteration, converged=converged,
        line_search_failed=line_search_failed, grad_norm=grad_norm,
        neighborhood_mass=nb_mass, constraint_ok=constraint_ok,
        escaped=not constraint_ok, seed=config.seed, warm_started=warm_started)


def _stage_hash(config: SolverConfig, mesh: SymmetricMesh, lam: float,
                prev_hash: str) -> str:
    doc = {
        "prev": prev_hash,
        "lambda": lam,
        "n": config.params.n, "p": config.params.p,
        "beta": config.params.beta,
        "epsilon_schedule": list(config.epsilon_schedule),
        "grad_tol": config.grad_tol, "max_iters": config.max_iters,
        "step": [config.step_init, config.step_shrink, config.armijo_c],
        "seed": config.seed, "jitter": config.jitter,
        "bubble_width": config.bubble_width,
        "k": mesh.group_spec.k, "dim": mesh.dim,
        "vertices": mesh.num_vertices,
        "stagnation": [config.stagnation_tol, config.stagnation_window],
    }
    blob = json.dumps(doc, sort_keys=True).encode()
    return hashlib.sha256(blob).hexdigest()


def _branch_from_checkpoint(doc, mesh, A) -> Branch:
    rows = [TraceRow(*r) for r in doc["energy_trace"]]
    fieldv = NodalField(mesh=mesh, coefficients=np.array(doc["coefficients"]))
    params0 = Params(n=mesh.dim, p=doc["p"], lam=doc["lambda"])
    bd0 = energy(fieldv, params0.with_(epsilon=0.0))
    return Branch(
        group_spec=mesh.group_spec, orbital_set=A, lam=doc["lambda"],
        field=fieldv, quotient=doc["quotient"], breakdown=bd0,
        energy_trace=rows, iterations=doc["iterations"],
        converged=doc["converged"], line_search_failed=doc["line_search_failed"],
        grad_norm=doc["grad_norm"], neighborhood_mass=doc["neighborhood_mass"],
        constraint_ok=doc["constraint_ok"], escaped=doc["escaped"],
        seed=doc["seed"], warm_started=doc["warm_started"])


def lambda_sweep(config: SolverConfig, group: list[GroupElement],
                 A: OrbitalSet, mesh: SymmetricMesh,
                 checkpoint_dir: str | None = None) -> list[Branch]:
    """One branch per lambda, warm-starting each stage from the previous one.

    With a checkpoint directory, completed stages are reloaded when their
    configuration chain matches, so an interrupted sweep resumes with
    identical results.
    """
    w = config.bubble_width if config.bubble_width is not None else A.kappa / 3.0
    u = bubble_init(A, w, mesh, jitter=config.jitter, seed=config.seed)
    branches = []
    prev_hash = "root"
    warm = False
    for stage, lam in enumerate(config.lambda_schedule):
        stage_hash = _stage_hash(config, mesh, lam, prev_hash)
        ck_path = None
        if checkpoint_dir is not None:
            ck_path = os.path.join(
                checkpoint_dir,
                f"branch_k{mesh.group_spec.k}_seed{config.seed}_stage{stage}.json")
        branch = None
        if ck_path and os.path.exists(ck_path):
            with open(ck_path) as fh:
                doc = json.load(fh)
            if doc.get("stage_hash") == stage_hash:
                branch = _branch_from_checkpoint(doc, mesh, A)
                log.info("resumed k=%d lambda=%g from checkpoint",
                         mesh.group_spec.k, lam)
        if branch is None:
            try:
                branch = minimize(u, config, group, A, mesh, lam=lam,
                                  warm_started=warm)
            except SolveError as exc:
                log.warning("stage lambda=%g failed (%s); re-initializing", lam, exc)
                u = bubble_init(A, w, mesh, jitter=config.jitter, seed=config.seed)
                branch = minimize(u, config, group, A, mesh, lam=lam,
                                  warm_started=False)
                branch.line_search_failed = True
            if ck_path:
                doc = branch.to_checkpoint_dict()
                doc["stage_hash"] = stage_hash
                doc["p"] = config.params.p
                with open(ck_path, "w") as fh:
                    json.dump(doc, fh)
        u = branch.field
        warm = True
        prev_hash = stage_hash
        branches.append(branch)
    return branches


@dataclass
class PdeSolution:
    """Scaled minimizer solving the unit-coefficient boundary-value problem."""

    field: NodalField
    mu: float
    scale: float
    residual_max: float
    residual_rms: float
    residual_max_invariant: float
    residual_rms_invariant: float


def to_pde_solution(branch: Branch, epsilon: float = 0.0) -> PdeSolution:
    """Rescale the normalized minimizer so the boundary coefficient is one.

    With mu the converged quotient (the Lagrange multiplier of the trace
    normalization), the field mu^(1/(q-p)) u satisfies the discrete weak
    form with unit boundary coefficient; the remaining residual is the
    optimizer's stationarity error and is reported in both the invariant
    and the full test space.
    """
    params = branch.breakdown
    p, q = params.p, params.q
    mu = branch.quotient
    scale = mu ** (1.0 / (q - p))
    scaled = NodalField(mesh=branch.field.mesh,
                        coefficients=scale * branch.field.coefficients)
    r = weak_residual_vector(scaled, branch.lam, 1.0, p, q, epsilon=epsilon)
    mesh = branch.field.mesh
    r_inv = symmetrize(r, mesh)
    return PdeSolution(
        field=scaled, mu=mu, scale=scale,
        residual_max=float(np.max(np.abs(r))),
        residual_rms=float(np.sqrt(np.mean(r * r))),
        residual_max_invariant=float(np.max(np.abs(r_inv))),
        residual_rms_invariant=float(np.sqrt(np.mean(r_inv * r_inv))),
    )
