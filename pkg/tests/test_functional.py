import math
import warnings

import numpy as np
import pytest

from conftest import random_field
from tracelab.errors import ZeroTraceError
from tracelab.functional import (EnergyBreakdown, NodalField, Params, energy,
                                 energy_and_gradient, energy_on_wedge,
                                 gradient, lq_boundary_norm, neighborhood_mass,
                                 normalized, trace_distribution,
                                 weak_residual_vector)
from tracelab.mesh import build_mesh
from tracelab.symmetry import (GroupSpec, invariance_residual,
                               minimal_orbital_set, symmetrize)


def test_params_derive_critical_exponent():
    p = Params(n=3, p=2.0)
    assert p.q == 4.0
    assert 1.0 - p.p / p.q == 0.5
    assert Params(n=2, p=1.5).q == 3.0


def test_params_validation_and_warning():
    with pytest.raises(ValueError):
        Params(n=2, p=2.0)          # p must be < n
    with pytest.raises(ValueError):
        Params(n=3, p=1.0)
    with pytest.raises(ValueError):
        Params(n=3, p=2.0, lam=0.0)
    with pytest.warns(UserWarning, match="regime"):
        Params(n=3, p=2.5)
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        Params(n=3, p=2.0)          # boundary case (n+1)/2 is fine


def test_constant_field_closed_form(disk_k3):
    # u = c kills the gradient term; quotient = lam |B| / |S|^(p/q) with the
    # polyhedral measures
    params = Params(n=2, p=1.5, lam=0.7)
    u = NodalField(mesh=disk_k3, coefficients=np.full(disk_k3.num_vertices, 3.2))
    bd = energy(u, params)
    assert bd.grad_term <= 1e-20
    expected = params.lam * disk_k3.volume() / disk_k3.boundary_measure() ** 0.5
    assert bd.quotient == pytest.approx(expected, rel=1e-12)
    # and the polyhedral value is within O(h^2) of the exact disk value
    assert bd.quotient == pytest.approx(params.lam * math.pi / math.sqrt(2 * math.pi),
                                        rel=5e-3)


def test_zero_homogeneity(disk_k3):
    params = Params(n=2, p=1.5, lam=2.0)
    u = random_field(disk_k3, seed=11)
    base = energy(u, params).quotient
    for c in (1e-3, 1.0, 1e3):
        v = NodalField(mesh=disk_k3, coefficients=c * u.coefficients)
        assert energy(v, params).quotient == pytest.approx(base, rel=1e-12)


def test_zero_trace_rejected(disk_k3):
    params = Params(n=2, p=1.5)
    vals = np.zeros(disk_k3.num_vertices)
    interior = np.setdiff1d(np.arange(disk_k3.num_vertices),
                            disk_k3.boundary_vertex_ids())
    vals[interior] = 1.0
    with pytest.raises(ZeroTraceError, match="zero trace"):
        energy(NodalField(mesh=disk_k3, coefficients=vals), params)


def _fd_check(mesh, params, n_trials, tol, seed=5):
    rng = np.random.default_rng(seed)
    worst = 0.0
    t = 1e-5
    for _ in range(n_trials):
        u = rng.standard_normal(mesh.num_vertices)
        h = rng.standard_normal(mesh.num_vertices)
        _, g = energy_and_gradient(NodalField(mesh=mesh, coefficients=u), params)
        ep = energy(NodalField(mesh=mesh, coefficients=u + t * h), params).quotient
        em = energy(NodalField(mesh=mesh, coefficients=u - t * h), params).quotient
        fd = (ep - em) / (2.0 * t)
        an = float(g @ h)
        worst = max(worst, abs(fd - an) / abs(an))
    assert worst <= tol, f"worst relative gradient error {worst:.3e}"
    return worst


def test_gradient_matches_finite_differences_p2(ball_k3):
    _fd_check(ball_k3, Params(n=3, p=2.0, lam=3.0), n_trials=20, tol=1e-6)


def test_gradient_matches_finite_differences_p15(disk_k3):
    _fd_check(disk_k3, Params(n=2, p=1.5, lam=3.0, epsilon=1e-6),
              n_trials=20, tol=1e-4)


def test_euler_identity_zero_homogeneous(disk_k3):
    # differentiate I(cu) = I(u): DI[u](u) = 0 at eps = 0
    params = Params(n=2, p=1.5, lam=1.0)
    u = random_field(disk_k3, seed=12)
    bd, g = energy_and_gradient(u, params)
    assert abs(float(g @ u.coefficients)) <= 1e-10 * abs(bd.quotient)


def test_gradient_equivariance(disk_k3):
    params = Params(n=2, p=1.5, lam=1.0, epsilon=1e-8)
    u = symmetrize(random_field(disk_k3, seed=13), disk_k3)
    g = gradient(u, params)
    assert invariance_residual(g, disk_k3) <= 1e-12


def test_gradient_flat_field_is_finite_for_p_below_2(disk_k3):
    # the degenerate factor |grad u|^(p-2) is continuously extended at 0
    params = Params(n=2, p=1.5, lam=1.0)
    u = NodalField(mesh=disk_k3, coefficients=np.ones(disk_k3.num_vertices))
    g = gradient(u, params)
    assert np.all(np.isfinite(g.coefficients))


def test_quotient_strictly_increasing_in_lambda(disk_k3):
    u = random_field(disk_k3, seed=14)
    qs = [energy(u, Params(n=2, p=1.5, lam=lam)).quotient
          for lam in (0.5, 1.0, 2.0, 4.0)]
    assert all(a < b for a, b in zip(qs, qs[1:]))


def test_wedge_energy_times_group_order(disk_k3):
    params = Params(n=2, p=1.5, lam=1.0)
    u = symmetrize(random_field(disk_k3, seed=15), disk_k3)
    full = energy(u, params)
    part = energy_on_wedge(u, params, wedge=0)
    order = disk_k3.group_spec.order
    assert part.grad_term * order == pytest.approx(full.grad_term, rel=1e-10)
    assert part.mass_term * order == pytest.approx(full.mass_term, rel=1e-10)
    assert part.trace_integral * order == pytest.approx(full.trace_integral,
                                                        rel=1e-10)


def test_trace_distribution_sums_to_one(disk_k3):
    params = Params(n=2, p=1.5)
    u = random_field(disk_k3, seed=16)
    masses = trace_distribution(u, params)
    assert masses.sum() == pytest.approx(1.0, abs=1e-12)
    assert np.all(masses >= 0)


def test_trace_distribution_constant_proportional_to_facet_measure(disk_k3):
    from tracelab.mesh import facet_measures
    params = Params(n=2, p=1.5)
    u = NodalField(mesh=disk_k3, coefficients=np.ones(disk_k3.num_vertices))
    masses = trace_distribution(u, params)
    meas = facet_measures(disk_k3.vertices, disk_k3.boundary_facets)
    assert np.allclose(masses, meas / meas.sum(), atol=1e-14)


def test_trace_distribution_orbit_equivalent_facets_equal(disk_k3):
    params = Params(n=2, p=1.5)
    u = symmetrize(random_field(disk_k3, seed=17), disk_k3)
    masses = trace_distribution(u, params)
    facet_index = {tuple(sorted(f)): i
                   for i, f in enumerate(disk_k3.boundary_facets.tolist())}
    for perm in disk_k3.group_node_maps:
        for i, f in enumerate(disk_k3.boundary_facets):
            j = facet_index[tuple(sorted(perm[f].tolist()))]
            assert masses[j] == pytest.approx(masses[i], abs=1e-12)


def test_neighborhood_mass_full_cover(disk_k3):
    params = Params(n=2, p=1.5)
    A = minimal_orbital_set(GroupSpec(k=3, m=0), kappa=math.pi)
    u = NodalField(mesh=disk_k3, coefficients=np.ones(disk_k3.num_vertices))
    assert neighborhood_mass(u, A, params) == pytest.approx(1.0, abs=1e-14)


def test_neighborhood_mass_constant_equals_cap_fraction():
    # disjoint arcs of half-width kappa capture 2 kappa k / (2 pi) of a
    # uniform distribution; quadrature staircases the cap boundary at O(h)
    mesh = build_mesh(2, 3, refinement=3)
    params = Params(n=2, p=1.5)
    A = minimal_orbital_set(GroupSpec(k=3, m=0))   # kappa = pi/3
    u = NodalField(mesh=mesh, coefficients=np.ones(mesh.num_vertices))
    got = neighborhood_mass(u, A, params)
    exact = 3 * (2 * A.kappa) / (2 * math.pi)
    assert got == pytest.approx(exact, abs=0.02)


def test_neighborhood_mass_cap_fraction_sphere():
    mesh = build_mesh(3, 3, refinement=1)
    params = Params(n=3, p=2.0)
    A = minimal_orbital_set(GroupSpec(k=3, m=1))
    u = NodalField(mesh=mesh, coefficients=np.ones(mesh.num_vertices))
    got = neighborhood_mass(u, A, params)
    exact = 3 * 2 * math.pi * (1 - math.cos(A.kappa)) / (4 * math.pi)
    assert got == pytest.approx(exact, abs=0.05)


def test_single_bump_quotient_regression(disk_k3_fine):
    # boundary bump fixture: finite, positive, and stable across revisions
    mesh = disk_k3_fine
    params = Params(n=2, p=1.5, lam=1.0)
    node = int(mesh.boundary_vertex_ids()[0])
    vals = np.zeros(mesh.num_vertices)
    vals[node] = 1.0
    bd = energy(NodalField(mesh=mesh, coefficients=vals), params)
    assert bd.quotient > 0
    assert np.isfinite(bd.quotient)
    assert bd.quotient == pytest.approx(2.5611592758567596, rel=1e-9)


def test_normalized_unit_boundary_norm(disk_k3):
    params = Params(n=2, p=1.5)
    u = normalized(random_field(disk_k3, seed=18), params)
    assert lq_boundary_norm(u, params) == pytest.approx(1.0, rel=1e-12)


def test_weak_residual_matches_quotient_gradient(disk_k3):
    # at unit trace norm, r = DI/p when mu is the quotient itself
    params = Params(n=2, p=1.5, lam=2.0, epsilon=1e-8)
    u = normalized(symmetrize(random_field(disk_k3, seed=19), disk_k3), params)
    bd, g = energy_and_gradient(u, params)
    r = weak_residual_vector(u, params.lam, bd.quotient, params.p, params.q,
                             epsilon=params.epsilon)
    assert np.allclose(r, g / params.p, atol=1e-12 * np.max(np.abs(g)))
