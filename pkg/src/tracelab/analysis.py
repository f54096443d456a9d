"""Concentration diagnostics, weak-form verification, branch classification.

The boundary q-mass of a converged branch should sit in caps around the
orbit points with equal weights 1/m(A); peaks are found by greedy cap
covering over the boundary quadrature points, and branches are classified
as concentrated when the captured mass and per-peak weights match that
prediction.  Two branches with different peak counts are rotationally
non-equivalent, which is the multiplicity certificate.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .functional import NodalField, Params, geometry, weak_residual_vector
from .mesh import SymmetricMesh
from .symmetry import OrbitalSet, geodesic_distance, symmetrize
from .trace_constant import ThresholdSpec


@dataclass
class Peak:
    location: np.ndarray   # unit vector on the sphere
    mass: float
    deviation: float | None = None   # |mass - 1/m(A)| when an orbit is given


@dataclass
class PeakReport:
    peaks: list
    total_mass: float
    r_peak: float
    mass_floor: float
    matched_orbit: bool | None = None

    @property
    def peak_count(self) -> int:
        return len(self.peaks)

    def masses(self) -> list[float]:
        return [p.mass for p in self.peaks]


@dataclass
class Classification:
    peak_count: int
    energy: float
    threshold_ratio: float
    key: tuple            # (k, l, peak_count)
    concentrated: bool
    escaped: bool
    peak_report: PeakReport = field(repr=False, default=None)


def detect_peaks(u: NodalField, params: Params, r_peak: float,
                 mass_floor: float, orbital_set: OrbitalSet | None = None,
                 max_peaks: int = 64) -> PeakReport:
    """Greedy cap covering of the boundary q-mass.

    Repeatedly takes the boundary quadrature point whose geodesic cap of
    radius r_peak captures the most not-yet-assigned mass, while that mass
    stays above mass_floor.  A sensible floor is half the equal-weight
    prediction, 1 / (2 m(A)).
    """
    mesh = u.mesh
    geo = geometry(mesh)
    ub = u.coefficients[mesh.boundary_facets] @ geo.b_rule.points.T
    masses = (geo.b_weights * np.abs(ub) ** params.q).ravel()
    total = float(masses.sum())
    dirs = geo.b_dirs.reshape(-1, mesh.dim)
    frac = masses / total

    cos_r = math.cos(r_peak)
    taken = np.zeros(len(frac), dtype=bool)
    peaks = []
    chunk = 4096
    while len(peaks) < max_peaks:
        best_mass, best_idx = 0.0, -1
        avail = ~taken
        for start in range(0, len(frac), chunk):
            block = slice(start, start + chunk)
            dots = dirs[block] @ dirs.T                    # (b, N)
            captured = ((dots >= cos_r) & avail[None, :]) @ frac
            captured[taken[block]] = -1.0
            j = int(np.argmax(captured))
            if captured[j] > best_mass:
                best_mass, best_idx = float(captured[j]), start + j
        if best_idx < 0 or best_mass < mass_floor:
            break
        center = dirs[best_idx]
        members = (dirs @ center >= cos_r) & avail
        taken |= members
        dev = None
        if orbital_set is not None:
            dev = abs(best_mass - 1.0 / orbital_set.m_A)
        peaks.append(Peak(location=center.copy(), mass=best_mass, deviation=dev))

    matched = None
    if orbital_set is not None:
        matched = len(peaks) == orbital_set.m_A and all(
            min(geodesic_distance(p.location, a) for a in orbital_set.points) <= r_peak
            for p in peaks)
    return PeakReport(peaks=peaks, total_mass=float(sum(p.mass for p in peaks)),
                      r_peak=r_peak, mass_floor=mass_floor, matched_orbit=matched)


@dataclass
class ResidualReport:
    max_full: float
    rms_full: float
    max_invariant: float
    rms_invariant: float


def residual_check(u: NodalField, lam: float, mu: float, p: float, q: float,
                   mesh: SymmetricMesh, epsilon: float = 0.0) -> ResidualReport:
    """Weak residual of the Euler-Lagrange identity over nodal test functions.

    Reported both against G-invariant test functions (group averages of the
    nodal basis) and against the full basis; for an exactly invariant
    discretization the two agree at stationary points.
    """
    r = weak_residual_vector(u, lam, mu, p, q, epsilon=epsilon)
    r_inv = symmetrize(r, mesh)
    return ResidualReport(
        max_full=float(np.max(np.abs(r))),
        rms_full=float(np.sqrt(np.mean(r * r))),
        max_invariant=float(np.max(np.abs(r_inv))),
        rms_invariant=float(np.sqrt(np.mean(r_inv * r_inv))),
    )


def classify_branch(branch, threshold_spec: ThresholdSpec,
                    r_peak: float | None = None,
                    mass_floor: float | None = None,
                    peak_tolerance: float = 0.05,
                    beta: float = 0.1) -> Classification:
    """Peak count, threshold ratio, and the concentration verdict.

    Concentrated means the captured mass reaches 1 - beta and every peak
    carries 1/m(A) of the mass within the tolerance; escaped branches
    (constraint monitor tripped) are never concentrated.
    """
    A = branch.orbital_set
    if r_peak is None:
        r_peak = A.kappa / 2.0
    if mass_floor is None:
        mass_floor = 1.0 / (2.0 * A.m_A)
    params = Params(n=branch.field.mesh.dim, p=branch.breakdown.p,
                    lam=branch.lam, beta=beta)
    report = detect_peaks(branch.field, params, r_peak, mass_floor,
                          orbital_set=A)
    concentrated = (
        not branch.escaped
        and report.total_mass >= 1.0 - beta
        and all(p.deviation is not None and p.deviation <= peak_tolerance
                for p in report.peaks)
        and report.peak_count == A.m_A)
    cls = Classification(
        peak_count=report.peak_count,
        energy=branch.quotient,
        threshold_ratio=branch.quotient / threshold_spec.threshold,
        key=(A.spec.k if A.spec else None, A.spec.l if A.spec else 1,
             report.peak_count),
        concentrated=concentrated,
        escaped=branch.escaped,
        peak_report=report)
    branch.classification = cls
    return cls


def nonequivalence_report(branches) -> dict:
    """Count pairwise rotationally non-equivalent concentrated branches.

    Works at the largest lambda common to all branches; branches are grouped
    by their equivalence key (k, l, peak count), and distinct peak counts
    certify non-equivalence since rotations preserve the peak count.
    """
    if not branches:
        return {"lambda": None, "branches": [], "nonequivalent_count": 0}
    by_lam = {}
    for br in branches:
        by_lam.setdefault(br.lam, []).append(br)
    common = max(by_lam.keys())
    rows = []
    keys = set()
    for br in by_lam[common]:
        cls = br.classification
        row = {
            "k": br.group_spec.k,
            "l": br.group_spec.l,
            "lambda": br.lam,
            "quotient": br.quotient,
            "peak_count": cls.peak_count if cls else None,
            "concentrated": bool(cls.concentrated) if cls else None,
            "escaped": br.escaped,
            "equivalence_key": list(cls.key) if cls else None,
        }
        rows.append(row)
        if cls and cls.concentrated:
            keys.add(cls.key)
    return {"lambda": common, "branches": rows, "nonequivalent_count": len(keys)}
