import math

import numpy as np
import pytest

from tracelab.errors import TraceLabError
from tracelab.functional import NodalField
from tracelab.symmetry import (GroupSpec, enumerate_group, geodesic_distance,
                               invariance_residual, minimal_orbital_set,
                               orbit, symmetrize)

from conftest import random_field


def test_group_spec_validation():
    with pytest.raises(ValueError):
        GroupSpec(k=1)
    with pytest.raises(ValueError):
        GroupSpec(k=3, l=2)
    with pytest.raises(ValueError):
        GroupSpec(k=3, m=2)
    assert GroupSpec(k=4, m=0).order == 4
    assert GroupSpec(k=3, m=1).order == 6


def test_enumerate_group_sizes_and_identity():
    g4 = enumerate_group(GroupSpec(k=4, m=0))
    assert len(g4) == 4
    assert np.allclose(g4[0].matrix, np.eye(2))
    g3r = enumerate_group(GroupSpec(k=3, m=1))
    assert len(g3r) == 6
    assert sum(1 for g in g3r if g.reflected) == 3


def test_group_closure():
    for spec in (GroupSpec(k=5, m=0), GroupSpec(k=3, m=1)):
        elements = enumerate_group(spec)
        mats = [g.matrix for g in elements]
        for a in mats:
            for b in mats:
                prod = a @ b
                assert any(np.max(np.abs(prod - c)) < 1e-12 for c in mats)


def test_orbit_sizes():
    group = enumerate_group(GroupSpec(k=3, m=1))
    # equatorial point: the reflection is a stabilizer
    assert orbit(np.array([1.0, 0.0, 0.0]), group).shape[0] == 3
    # generic point has the full orbit
    assert orbit(np.array([0.8, 0.0, 0.6]), group).shape[0] == 6
    # a point close to the equatorial orbit but off it
    assert orbit(np.array([0.99, 0.0, 0.14]), group).shape[0] == 6


def test_orbit_cardinality_divides_group_order():
    rng = np.random.default_rng(7)
    for spec in (GroupSpec(k=4, m=0), GroupSpec(k=3, m=1)):
        group = enumerate_group(spec)
        for _ in range(25):
            x = rng.standard_normal(spec.dim)
            x /= np.linalg.norm(x)
            assert spec.order % orbit(x, group).shape[0] == 0


def test_minimal_orbital_set_k2_antipodal():
    A = minimal_orbital_set(GroupSpec(k=2, m=0))
    assert A.m_A == 2
    assert np.allclose(A.points, [[1.0, 0.0], [-1.0, 0.0]], atol=1e-15)
    assert A.kappa == pytest.approx(math.pi / 2)


def test_minimal_orbital_set_pentagon():
    A = minimal_orbital_set(GroupSpec(k=5, m=0))
    assert A.m_A == 5
    angles = sorted(math.atan2(p[1], p[0]) % (2 * math.pi) for p in A.points)
    expected = sorted(2 * math.pi * j / 5 for j in range(5))
    assert np.allclose(angles, expected, atol=1e-12)
    assert A.locally_minimal


def test_minimal_orbital_set_certificate_strict_off_equator():
    A = minimal_orbital_set(GroupSpec(k=3, m=1))
    assert A.locally_minimal
    # on the sphere, samples off the equator have strictly larger orbits
    assert A.strict_fraction > 0.99


def test_kappa_default_half_separation():
    A = minimal_orbital_set(GroupSpec(k=4, m=1))
    assert A.kappa == pytest.approx(0.5 * A.min_pairwise_geodesic())


def test_symmetrize_fixed_point_and_idempotence(disk_k3):
    u = random_field(disk_k3, seed=1)
    s1 = symmetrize(u, disk_k3)
    s2 = symmetrize(s1, disk_k3)
    scale = np.max(np.abs(s1.coefficients))
    assert np.max(np.abs(s2.coefficients - s1.coefficients)) <= 1e-15 * scale
    assert invariance_residual(s1, disk_k3) <= 1e-14


def test_symmetrize_is_linear(disk_k3):
    u = random_field(disk_k3, seed=2).coefficients
    v = random_field(disk_k3, seed=3).coefficients
    left = symmetrize(2.5 * u - v, disk_k3)
    right = 2.5 * symmetrize(u, disk_k3) - symmetrize(v, disk_k3)
    assert np.allclose(left, right, atol=1e-14)


def test_symmetrize_spreads_single_bump_over_orbit(disk_k3):
    mesh = disk_k3
    # nodal indicator at a boundary node off the symmetry axes
    bverts = mesh.boundary_vertex_ids()
    node = next(i for i in bverts
                if 0.1 < math.atan2(mesh.vertices[i][1], mesh.vertices[i][0]) < 0.5)
    e = np.zeros(mesh.num_vertices)
    e[node] = 1.0
    s = symmetrize(e, mesh)
    orbit_nodes = sorted({perm[node] for perm in mesh.group_node_maps})
    assert len(orbit_nodes) == 3
    vals = s[orbit_nodes]
    assert np.allclose(vals, vals[0], atol=1e-15)
    assert np.allclose(vals, 1.0 / 3.0, atol=1e-15)


def test_invariance_residual_values(disk_k3):
    mesh = disk_k3
    assert invariance_residual(np.zeros(mesh.num_vertices), mesh) == 0.0
    inv = symmetrize(random_field(mesh, seed=4), mesh)
    assert invariance_residual(inv, mesh) <= 1e-14
    e = np.zeros(mesh.num_vertices)
    node = int(mesh.boundary_vertex_ids()[0])
    moved = {perm[node] for perm in mesh.group_node_maps}
    if len(moved) > 1:
        e[node] = 1.0
        assert invariance_residual(e, mesh) == pytest.approx(1.0)


def test_symmetrize_group_mismatch_raises(disk_k3):
    other = enumerate_group(GroupSpec(k=4, m=0))
    with pytest.raises(TraceLabError):
        symmetrize(random_field(disk_k3), disk_k3, group=other)


def test_geodesic_distance():
    assert geodesic_distance([1, 0, 0], [0, 1, 0]) == pytest.approx(math.pi / 2)
    assert geodesic_distance([1, 0], [-1, 0]) == pytest.approx(math.pi)
