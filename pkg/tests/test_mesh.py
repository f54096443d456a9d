import json
import math

import numpy as np
import pytest

from tracelab.errors import MeshError
from tracelab.mesh import (SymmetricMesh, boundary_quadrature, build_mesh,
                           facet_measures, mesh_from_json_dict, refine)


def test_rejects_bad_arguments():
    with pytest.raises(ValueError):
        build_mesh(4, 3)
    with pytest.raises(ValueError):
        build_mesh(2, 1)
    with pytest.raises(ValueError):
        build_mesh(2, 3, refinement=-1)


def test_node_budget_enforced():
    with pytest.raises(MeshError):
        build_mesh(2, 3, refinement=3, node_budget=500)


def test_group_action_is_exact_node_permutation(disk_k3, ball_k3):
    for mesh in (disk_k3, ball_k3):
        assert mesh.group_exactness_residual() <= 1e-12
        for perm in mesh.group_node_maps:
            assert len(np.unique(perm)) == mesh.num_vertices


def test_rotating_wedge_maps_nodes_exactly():
    mesh = build_mesh(2, 4, refinement=0)
    # the quarter-turn is element index 1 of the cyclic group
    perm = mesh.group_node_maps[1]
    rot = mesh.group[1].matrix
    assert np.max(np.abs(mesh.vertices[perm] - mesh.vertices @ rot.T)) <= 1e-12


def test_z_reflection_maps_vertex_set_to_itself():
    mesh = build_mesh(3, 3, refinement=1)
    refl = next(i for i, g in enumerate(mesh.group) if g.reflected
                and g.rotation == 0)
    perm = mesh.group_node_maps[refl]
    flipped = mesh.vertices.copy()
    flipped[:, 2] *= -1.0
    assert np.max(np.abs(mesh.vertices[perm] - flipped)) <= 1e-12


def test_boundary_vertices_on_unit_sphere(disk_k3, ball_k3):
    for mesh in (disk_k3, ball_k3):
        bv = mesh.boundary_vertex_ids()
        assert np.max(np.abs(np.linalg.norm(mesh.vertices[bv], axis=1) - 1.0)) <= 1e-12


def test_positive_cell_volumes(disk_k3, ball_k3):
    for mesh in (disk_k3, ball_k3):
        assert mesh.cell_volumes().min() > 0


def test_cells_and_facets_closed_under_group(disk_k3, ball_k3):
    for mesh in (disk_k3, ball_k3):
        cellset = {tuple(sorted(c)) for c in mesh.cells.tolist()}
        facetset = {tuple(sorted(f)) for f in mesh.boundary_facets.tolist()}
        for perm in mesh.group_node_maps:
            assert {tuple(sorted(perm[c].tolist())) for c in mesh.cells} == cellset
            assert {tuple(sorted(perm[f].tolist()))
                    for f in mesh.boundary_facets} == facetset


def test_triangle_count_quadruples_per_refinement():
    m0 = build_mesh(2, 3, refinement=0)
    m1 = refine(m0)
    assert m1.num_cells == 4 * m0.num_cells
    assert m1.refinement == m0.refinement + 1


def test_refined_mesh_passes_invariants(disk_k3):
    refine(disk_k3).validate()


def test_boundary_length_converges_to_circle():
    # total facet length -> 2 pi at second order (error ~ 4x down per level)
    errors = []
    for r in range(3):
        mesh = build_mesh(2, 3, refinement=r)
        errors.append(abs(mesh.boundary_measure() - 2.0 * math.pi))
    assert errors[0] < 0.02
    for a, b in zip(errors, errors[1:]):
        assert a / b > 3.0


def test_boundary_area_converges_to_sphere():
    errors = []
    for r in range(3):
        mesh = build_mesh(3, 3, refinement=r)
        errors.append(abs(mesh.boundary_measure() - 4.0 * math.pi))
    for a, b in zip(errors, errors[1:]):
        assert a / b > 3.0


def test_disk_and_ball_volume_converge():
    assert abs(build_mesh(2, 4, refinement=2).volume() - math.pi) < 4e-3
    assert abs(build_mesh(3, 4, refinement=1).volume() - 4 * math.pi / 3) < 0.12


def test_smooth_boundary_integral_second_order():
    # integrating x1^2 over the circle: closed form pi
    errors = []
    for r in range(3):
        mesh = build_mesh(2, 4, refinement=r)
        bq = boundary_quadrature(mesh)
        val = float(np.sum(bq.weights * bq.points[:, :, 0] ** 2))
        errors.append(abs(val - math.pi))
    for a, b in zip(errors, errors[1:]):
        assert a / b > 3.0
    assert errors[-1] < 4e-3


def test_boundary_quadrature_constant_and_odd_function(disk_k3):
    bq = boundary_quadrature(disk_k3)
    assert abs(bq.total_measure - disk_k3.boundary_measure()) <= 1e-12
    # odd coordinate integrates to zero on the replicated symmetric mesh
    assert abs(float(np.sum(bq.weights * bq.points[:, :, 0]))) <= 1e-12


def test_boundary_quadrature_rejects_degenerate_facet(disk_k3):
    broken = SymmetricMesh(
        dim=disk_k3.dim, vertices=disk_k3.vertices, cells=disk_k3.cells,
        boundary_facets=np.array([[0, 0]]), group_spec=disk_k3.group_spec,
        group=disk_k3.group, group_node_maps=disk_k3.group_node_maps,
        wedge_id=disk_k3.wedge_id, cell_wedge_id=disk_k3.cell_wedge_id,
        facet_wedge_id=np.array([0]), refinement=0,
        node_budget=disk_k3.node_budget)
    with pytest.raises(MeshError, match="facet 0"):
        boundary_quadrature(broken)


def test_wedge_partition(disk_k3, ball_k3_mid):
    for mesh in (disk_k3, ball_k3_mid):
        order = mesh.group_spec.order
        assert set(np.unique(mesh.wedge_id)) == set(range(order))
        assert set(np.unique(mesh.cell_wedge_id)) == set(range(order))
        counts = np.bincount(mesh.cell_wedge_id)
        assert len(set(counts.tolist())) == 1   # equal cells per replica


def test_json_roundtrip(ball_k3):
    doc = ball_k3.to_json_dict()
    text = json.dumps(doc)
    rebuilt = mesh_from_json_dict(json.loads(text))
    assert np.array_equal(rebuilt.vertices, ball_k3.vertices)
    assert ({tuple(sorted(c)) for c in rebuilt.cells.tolist()}
            == {tuple(sorted(c)) for c in ball_k3.cells.tolist()})
    rebuilt.validate()
    # a rebuilt mesh refines exactly like the original
    assert refine(rebuilt).num_cells == refine(ball_k3).num_cells


def test_json_import_rejects_asymmetric_mesh(ball_k3):
    doc = ball_k3.to_json_dict()
    doc["vertices"][0] = [0.001, 0.002, 0.003]
    with pytest.raises(MeshError):
        mesh_from_json_dict(doc)


def test_tet_refinement_tiles_parent_volume():
    m0 = build_mesh(3, 3, refinement=0)
    m1 = refine(m0)
    assert m1.num_cells == 8 * m0.num_cells
    # interior volume grows toward the ball (children cover parents; the
    # only volume change comes from boundary reprojection)
    assert m1.volume() > m0.volume()
