"""Numerical lab for multi-peak boundary concentration on the unit ball.

Minimizes the critical trace quotient over group-invariant P1 fields,
tracks where the boundary q-mass concentrates along a lambda continuation,
and compares converged energies against the half-space trace-constant
thresholds that govern bubble splitting.
"""

from .analysis import (Classification, PeakReport, classify_branch,
                       detect_peaks, nonequivalence_report, residual_check)
from .errors import (ConfigError, MeshError, SolveError, TraceLabError,
                     ZeroTraceError)
from .functional import (EnergyBreakdown, NodalField, Params, energy,
                         energy_and_gradient, gradient, neighborhood_mass,
                         normalized, trace_distribution)
from .mesh import SymmetricMesh, boundary_quadrature, build_mesh, refine
from .optimizer import (Branch, PdeSolution, SolverConfig, bubble_init,
                        lambda_sweep, minimize, to_pde_solution)
from .symmetry import (GroupElement, GroupSpec, OrbitalSet, enumerate_group,
                       invariance_residual, minimal_orbital_set, orbit,
                       symmetrize)
from .trace_constant import (ThresholdSpec, closed_form_p2, halfspace_oracle,
                             threshold)

__version__ = "0.1.0"
