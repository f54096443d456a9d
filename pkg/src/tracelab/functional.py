"""Trace-quotient energy, its gradient, and boundary-mass diagnostics.

The quotient for a field u on the ball B with boundary sphere S is

    (||grad u||_p^p over B  +  lambda * ||u||_p^p over B) / ||u||_{L_q(S)}^p

with q the critical trace exponent (n-1)p/(n-p).  Fields are P1 on a
SymmetricMesh; gradients are exact per cell, |u|^p and |u|^q are integrated
by evaluating at quadrature points, and the p-integrand is regularized as
(eps^2 + |grad u|^2)^(p/2) so the discrete gradient below is the exact
derivative of the discrete energy for any eps.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import ZeroTraceError
from .mesh import SymmetricMesh, boundary_quadrature, facet_measures
from .symmetry import OrbitalSet


@dataclass
class Params:
    """Problem parameters; q is always derived from (n, p), never supplied."""

    n: int
    p: float
    lam: float = 1.0
    epsilon: float = 0.0
    beta: float = 0.1
    kappa: float | None = None
    q: float = field(init=False)

    def __post_init__(self):
        if self.n < 2:
            raise ValueError("dimension n must be >= 2")
        if not (1.0 < self.p < self.n):
            raise ValueError(f"p must lie in (1, n) = (1, {self.n}), got {self.p}")
        if self.lam <= 0:
            raise ValueError("lambda must be positive")
        if self.epsilon < 0:
            raise ValueError("epsilon must be non-negative")
        if not (0.0 < self.beta < 1.0):
            raise ValueError("beta must lie in (0, 1)")
        self.q = (self.n - 1) * self.p / (self.n - self.p)
        if self.p > (self.n + 1) / 2.0:
            warnings.warn(
                f"p = {self.p} > (n+1)/2 = {(self.n + 1) / 2}: the boundary "
                "concentration energy bound is not guaranteed in this regime",
                stacklevel=2)

    def with_(self, **kw) -> "Params":
        base = dict(n=self.n, p=self.p, lam=self.lam, epsilon=self.epsilon,
                    beta=self.beta, kappa=self.kappa)
        base.update(kw)
        return Params(**base)


@dataclass
class NodalField:
    """Piecewise-linear field given by one coefficient per mesh vertex."""

    mesh: SymmetricMesh
    coefficients: np.ndarray

    def __post_init__(self):
        self.coefficients = np.asarray(self.coefficients, dtype=float)
        if self.coefficients.shape != (self.mesh.num_vertices,):
            raise ValueError("coefficient vector length must equal vertex count")
        if not np.all(np.isfinite(self.coefficients)):
            raise ValueError("coefficients must be finite")

    def copy(self) -> "NodalField":
        return NodalField(mesh=self.mesh, coefficients=self.coefficients.copy())


@dataclass
class EnergyBreakdown:
    grad_term: float     # integral of (eps^2 + |grad u|^2)^(p/2)
    mass_term: float     # integral of |u|^p
    trace_term: float    # ||u||_{L_q(S)}^p, i.e. (integral of |u|^q)^(p/q)
    quotient: float
    lam: float
    p: float
    q: float
    epsilon: float
    trace_integral: float  # raw integral of |u|^q over S


class _Geometry:
    """Per-mesh arrays shared by all assembly routines (mesh is immutable)."""

    def __init__(self, mesh: SymmetricMesh):
        dim = mesh.dim
        verts = mesh.vertices[mesh.cells]              # (C, dim+1, dim)
        edges = verts[:, 1:, :] - verts[:, :1, :]      # (C, dim, dim)
        if dim == 2:
            det = edges[:, 0, 0] * edges[:, 1, 1] - edges[:, 0, 1] * edges[:, 1, 0]
            self.volumes = det / 2.0
        else:
            self.volumes = np.linalg.det(edges) / 6.0
        inv = np.linalg.inv(edges)                     # (C, dim, dim)
        grads = np.empty((len(mesh.cells), dim, dim + 1))
        for i in range(dim):
            grads[:, :, i + 1] = inv[:, :, i]
        grads[:, :, 0] = -grads[:, :, 1:].sum(axis=2)
        self.cell_grads = grads

        # vertex (lumped) quadrature for |u|^p: first-order exact and the
        # standard remedy that keeps the discrete large-lambda decay
        # sign-definite, so minimizers are not forced onto the positivity
        # bound by spurious oscillation
        self.vol_bary = np.eye(dim + 1)                # (nqv, dim+1)
        self.vol_weights = np.outer(self.volumes, np.full(dim + 1, 1.0 / (dim + 1)))

        bq = boundary_quadrature(mesh)
        self.b_rule = bq.rule
        self.b_points = bq.points                      # (F, nqb, dim)
        self.b_weights = bq.weights                    # (F, nqb)
        norms = np.linalg.norm(bq.points, axis=2, keepdims=True)
        self.b_dirs = bq.points / norms                # unit directions of qpoints
        self.facet_measures = facet_measures(mesh.vertices, mesh.boundary_facets)


def geometry(mesh: SymmetricMesh) -> _Geometry:
    if mesh._geom is None:
        mesh._geom = _Geometry(mesh)
    return mesh._geom


def _signed_power(vals, expo):
    """|v|^(expo-1) v with the continuous extension 0 at v = 0."""
    av = np.abs(vals)
    out = np.zeros_like(vals)
    nz = av > 0
    out[nz] = av[nz] ** (expo - 1.0) * np.sign(vals[nz])
    return out


def _pieces(mesh, vals, p, q, eps, want_derivatives=True):
    geo = geometry(mesh)
    cells = mesh.cells
    bfacets = mesh.boundary_facets
    nverts = mesh.num_vertices

    uc = vals[cells]                                       # (C, dim+1)
    g = np.einsum("cdl,cl->cd", geo.cell_grads, uc)        # (C, dim)
    s = eps * eps + np.einsum("cd,cd->c", g, g)
    grad_term = float(np.sum(geo.volumes * s ** (p / 2.0)))

    uv = uc @ geo.vol_bary.T                               # (C, nqv)
    mass_term = float(np.sum(geo.vol_weights * np.abs(uv) ** p))

    ub = vals[bfacets] @ geo.b_rule.points.T               # (F, nqb)
    trace_integral = float(np.sum(geo.b_weights * np.abs(ub) ** q))

    out = {
        "grad_term": grad_term,
        "mass_term": mass_term,
        "trace_integral": trace_integral,
        "boundary_values": ub,
    }
    if not want_derivatives:
        return out

    # d(grad_term)/du_i = sum_c vol_c * p * s^((p-2)/2) * (g . grad phi_i)
    fac = np.zeros_like(s)
    pos = s > 0
    fac[pos] = p * s[pos] ** ((p - 2.0) / 2.0)
    contrib = np.einsum("c,cd,cdl->cl", geo.volumes * fac, g, geo.cell_grads)
    dgrad = np.bincount(cells.ravel(), weights=contrib.ravel(), minlength=nverts)

    pref = geo.vol_weights * p * _signed_power(uv, p)      # (C, nqv)
    contrib = pref @ geo.vol_bary                          # (C, dim+1)
    dmass = np.bincount(cells.ravel(), weights=contrib.ravel(), minlength=nverts)

    prefb = geo.b_weights * q * _signed_power(ub, q)       # (F, nqb)
    contrib = prefb @ geo.b_rule.points                    # (F, dim)
    dtrace = np.bincount(bfacets.ravel(), weights=contrib.ravel(), minlength=nverts)

    out.update({"dgrad": dgrad, "dmass": dmass, "dtrace": dtrace})
    return out


def _breakdown(pieces, params) -> EnergyBreakdown:
    T = pieces["trace_integral"]
    if T <= 0.0:
        raise ZeroTraceError("zero trace")
    trace_term = T ** (params.p / params.q)
    numerator = pieces["grad_term"] + params.lam * pieces["mass_term"]
    return EnergyBreakdown(
        grad_term=pieces["grad_term"], mass_term=pieces["mass_term"],
        trace_term=trace_term, quotient=numerator / trace_term,
        lam=params.lam, p=params.p, q=params.q, epsilon=params.epsilon,
        trace_integral=T)


def energy(u: NodalField, params: Params) -> EnergyBreakdown:
    """Energy terms and quotient of the field (errors on zero trace)."""
    pieces = _pieces(u.mesh, u.coefficients, params.p, params.q, params.epsilon,
                     want_derivatives=False)
    return _breakdown(pieces, params)


def energy_and_gradient(u: NodalField, params: Params):
    """Breakdown plus the exact derivative of the discrete quotient."""
    pieces = _pieces(u.mesh, u.coefficients, params.p, params.q, params.epsilon)
    bd = _breakdown(pieces, params)
    T = pieces["trace_integral"]
    dn = pieces["dgrad"] + params.lam * pieces["dmass"]
    grad = dn / bd.trace_term - bd.quotient * (params.p / params.q) * pieces["dtrace"] / T
    return bd, grad


def gradient(u: NodalField, params: Params) -> NodalField:
    """Directional derivatives of the quotient against the nodal basis."""
    _, g = energy_and_gradient(u, params)
    return NodalField(mesh=u.mesh, coefficients=g)


def weak_residual_vector(u: NodalField, lam: float, mu: float, p: float, q: float,
                         epsilon: float = 0.0) -> np.ndarray:
    """Weak-form residual r_i of the boundary-value problem, per test function:

    r_i = int (eps^2+|grad u|^2)^((p-2)/2) grad u . grad phi_i
          + lam * int |u|^(p-2) u phi_i  -  mu * bnd int |u|^(q-2) u phi_i
    """
    pieces = _pieces(u.mesh, u.coefficients, p, q, epsilon)
    return pieces["dgrad"] / p + lam * pieces["dmass"] / p - mu * pieces["dtrace"] / q


def lq_boundary_norm(u: NodalField, params: Params) -> float:
    pieces = _pieces(u.mesh, u.coefficients, params.p, params.q, 0.0,
                     want_derivatives=False)
    return pieces["trace_integral"] ** (1.0 / params.q)


def normalized(u: NodalField, params: Params) -> NodalField:
    """Field rescaled to unit L_q boundary norm."""
    nrm = lq_boundary_norm(u, params)
    if nrm <= 0.0:
        raise ZeroTraceError("zero trace")
    return NodalField(mesh=u.mesh, coefficients=u.coefficients / nrm)


def trace_distribution(u: NodalField, params: Params) -> np.ndarray:
    """Per-boundary-facet fractions of the q-mass; sums to one."""
    geo = geometry(u.mesh)
    ub = u.coefficients[u.mesh.boundary_facets] @ geo.b_rule.points.T
    per_facet = np.sum(geo.b_weights * np.abs(ub) ** params.q, axis=1)
    total = float(per_facet.sum())
    if total <= 0.0:
        raise ZeroTraceError("zero trace")
    return per_facet / total


def neighborhood_mass(u: NodalField, A: OrbitalSet, params: Params) -> float:
    """Fraction of the boundary q-mass within geodesic distance kappa of A.

    Membership is decided per quadrature point through its radial projection
    onto the sphere, so facets straddling the cap boundary are split by
    quadrature rather than assigned wholesale.
    """
    geo = geometry(u.mesh)
    ub = u.coefficients[u.mesh.boundary_facets] @ geo.b_rule.points.T
    masses = geo.b_weights * np.abs(ub) ** params.q        # (F, nqb)
    total = float(masses.sum())
    if total <= 0.0:
        raise ZeroTraceError("zero trace")
    cos_k = math.cos(A.kappa)
    dots = np.einsum("fqd,ad->fqa", geo.b_dirs, A.points)
    inside = np.max(dots, axis=2) >= cos_k
    return float(masses[inside].sum()) / total


def energy_on_wedge(u: NodalField, params: Params, wedge: int) -> EnergyBreakdown:
    """Energy terms restricted to one fundamental-domain replica."""
    mesh = u.mesh
    geo = geometry(mesh)
    cmask = mesh.cell_wedge_id == wedge
    fmask = mesh.facet_wedge_id == wedge
    vals = u.coefficients

    uc = vals[mesh.cells[cmask]]
    g = np.einsum("cdl,cl->cd", geo.cell_grads[cmask], uc)
    s = params.epsilon ** 2 + np.einsum("cd,cd->c", g, g)
    grad_term = float(np.sum(geo.volumes[cmask] * s ** (params.p / 2.0)))
    uv = uc @ geo.vol_bary.T
    mass_term = float(np.sum(geo.vol_weights[cmask] * np.abs(uv) ** params.p))
    ub = vals[mesh.boundary_facets[fmask]] @ geo.b_rule.points.T
    T = float(np.sum(geo.b_weights[fmask] * np.abs(ub) ** params.q))
    pieces = {"grad_term": grad_term, "mass_term": mass_term, "trace_integral": T}
    return _breakdown(pieces, params)
