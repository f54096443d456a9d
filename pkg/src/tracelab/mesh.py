"""Simplicial meshes of the unit disk and unit ball with an exact group action.

A mesh is built by triangulating one wedge (fundamental domain) of the
configured rotation group and replicating it by the group elements, so every
element acts on the node set by an exact index permutation.  Boundary nodes
are projected to the unit sphere after every refinement; the polyhedral
boundary carries an O(h^2) geometric error that the tests track explicitly.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field as dc_field

import numpy as np

from .errors import MeshError
from .quadrature import QuadratureRule, facet_rule
from .symmetry import GroupElement, GroupSpec, enumerate_group

# The coarse fan wedge is pre-split this many times before "refinement 0";
# it sets the resolution that one user-facing refinement level starts from.
_BASE_SPLITS = 2

# Radial grading exponent: vertices move r -> 1 - (1-r)^gamma, thinning the
# shells near the sphere.  Large-lambda minimizers decay like exp(-sqrt(lam)
# dist to S); without grading the P1 interior decay turns sign-oscillating
# once lam h_r^2 is large and descent jams against the positivity fold.
_RADIAL_GAMMA = 2.0

# Tangential grading strength in (0, 1): spherical directions are pulled
# toward the equatorial orbit points (the wedge corners), shrinking the
# local spacing there by about (1 - strength).  Peaks of large-lambda
# minimizers live exactly at those points.
_TANGENTIAL_GRADE = 0.75

_DEDUP_TOL = 1e-8


class _PointIndex:
    """Coordinate deduplication on a tolerance grid with neighbor lookup."""

    def __init__(self, tol: float = _DEDUP_TOL):
        self.tol = tol
        self.table: dict[tuple, int] = {}
        self.coords: list[np.ndarray] = []

    def _cells(self, x):
        base = [int(math.floor(c / self.tol)) for c in x]
        dim = len(base)
        for offset in np.ndindex(*([3] * dim)):
            yield tuple(b + o - 1 for b, o in zip(base, offset))

    def find(self, x) -> int | None:
        for key in self._cells(x):
            idx = self.table.get(key)
            if idx is not None and np.max(np.abs(self.coords[idx] - x)) <= self.tol:
                return idx
        return None

    def insert(self, x) -> int:
        x = np.asarray(x, dtype=float)
        idx = self.find(x)
        if idx is not None:
            return idx
        idx = len(self.coords)
        self.coords.append(x)
        key = tuple(int(math.floor(c / self.tol)) for c in x)
        self.table[key] = idx
        return idx


def _signed_volumes(vertices, cells):
    v = vertices[cells]
    edges = v[:, 1:, :] - v[:, :1, :]
    dim = vertices.shape[1]
    if dim == 2:
        det = edges[:, 0, 0] * edges[:, 1, 1] - edges[:, 0, 1] * edges[:, 1, 0]
        return det / 2.0
    det = np.linalg.det(edges)
    return det / 6.0


def _orient_cells(vertices, cells):
    cells = cells.copy()
    vols = _signed_volumes(vertices, cells)
    flip = vols < 0
    cells[flip, -1], cells[flip, -2] = cells[flip, -2].copy(), cells[flip, -1].copy()
    return cells


def _orient_facets(vertices, facets):
    """Orient boundary facets so their normal points away from the origin."""
    facets = facets.copy()
    v = vertices[facets]
    centroid = v.mean(axis=1)
    if facets.shape[1] == 2:
        t = v[:, 1] - v[:, 0]
        normal = np.stack([t[:, 1], -t[:, 0]], axis=1)
    else:
        normal = np.cross(v[:, 1] - v[:, 0], v[:, 2] - v[:, 0])
    flip = np.einsum("fd,fd->f", normal, centroid) < 0
    facets[flip, -1], facets[flip, -2] = facets[flip, -2].copy(), facets[flip, -1].copy()
    return facets


def facet_measures(vertices, facets) -> np.ndarray:
    v = vertices[facets]
    if facets.shape[1] == 2:
        return np.linalg.norm(v[:, 1] - v[:, 0], axis=1)
    return 0.5 * np.linalg.norm(np.cross(v[:, 1] - v[:, 0], v[:, 2] - v[:, 0]), axis=1)


def _fan_wedge(dim: int, k: int):
    """Coarse mesh of one wedge: apex at the origin, chordal outer boundary."""
    alpha = 2.0 * math.pi / k
    n_a = max(1, int(math.ceil(alpha / (math.pi / 4.0) - 1e-9)))
    angles = [alpha * i / n_a for i in range(n_a + 1)]
    if dim == 2:
        verts = [np.zeros(2)] + [np.array([math.cos(a), math.sin(a)]) for a in angles]
        cells = [[0, 1 + i, 2 + i] for i in range(n_a)]
        bfacets = [[1 + i, 2 + i] for i in range(n_a)]
    else:
        verts = [np.zeros(3), np.array([0.0, 0.0, 1.0])]
        verts += [np.array([math.cos(a), math.sin(a), 0.0]) for a in angles]
        cells = [[0, 2 + i, 3 + i, 1] for i in range(n_a)]
        bfacets = [[2 + i, 3 + i, 1] for i in range(n_a)]
    return (np.array(verts), np.array(cells, dtype=np.int64),
            np.array(bfacets, dtype=np.int64))


# For each choice of interior diagonal, a cyclic order of the remaining
# midpoints in which consecutive members are octahedron-adjacent.
_OCT_SPLITS = (
    (((0, 1), (2, 3)), ((0, 2), (0, 3), (1, 3), (1, 2))),
    (((0, 2), (1, 3)), ((0, 1), (0, 3), (2, 3), (1, 2))),
    (((0, 3), (1, 2)), ((0, 1), (0, 2), (2, 3), (1, 3))),
)


def _refine_wedge(verts, cells, bfacets, dim):
    """Uniform edge-midpoint split of the wedge with sphere reprojection."""
    verts = list(verts)
    midpoint: dict[tuple[int, int], int] = {}

    boundary_edges = set()
    for f in bfacets:
        if dim == 2:
            boundary_edges.add(tuple(sorted(f)))
        else:
            boundary_edges.update(
                tuple(sorted((f[i], f[j]))) for i in range(3) for j in range(i + 1, 3))

    def mid(a, b):
        key = (a, b) if a < b else (b, a)
        idx = midpoint.get(key)
        if idx is None:
            x = 0.5 * (verts[a] + verts[b])
            if key in boundary_edges:
                x = x / np.linalg.norm(x)
            idx = len(verts)
            verts.append(x)
            midpoint[key] = idx
        return idx

    new_cells = []
    if dim == 2:
        for a, b, c in cells:
            ab, bc, ca = mid(a, b), mid(b, c), mid(c, a)
            new_cells += [[a, ab, ca], [ab, b, bc], [ca, bc, c], [ab, bc, ca]]
    else:
        for a, b, c, d in cells:
            m = {
                (0, 1): mid(a, b), (0, 2): mid(a, c), (0, 3): mid(a, d),
                (1, 2): mid(b, c), (1, 3): mid(b, d), (2, 3): mid(c, d),
            }
            new_cells += [
                [a, m[(0, 1)], m[(0, 2)], m[(0, 3)]],
                [m[(0, 1)], b, m[(1, 2)], m[(1, 3)]],
                [m[(0, 2)], m[(1, 2)], c, m[(2, 3)]],
                [m[(0, 3)], m[(1, 3)], m[(2, 3)], d],
            ]
            # interior octahedron: four tets around the shortest diagonal
            lengths = [np.linalg.norm(verts[m[d0]] - verts[m[d1]])
                       for (d0, d1), _ in _OCT_SPLITS]
            (d0, d1), ring = _OCT_SPLITS[int(np.argmin(lengths))]
            x, y = m[d0], m[d1]
            for i in range(4):
                new_cells.append([x, y, m[ring[i]], m[ring[(i + 1) % 4]]])

    new_bfacets = []
    if dim == 2:
        for a, b in bfacets:
            ab = mid(a, b)
            new_bfacets += [[a, ab], [ab, b]]
    else:
        for a, b, c in bfacets:
            ab, bc, ca = mid(a, b), mid(b, c), mid(c, a)
            new_bfacets += [[a, ab, ca], [ab, b, bc], [ca, bc, c], [ab, bc, ca]]

    vv = np.array(verts)
    cc = _orient_cells(vv, np.array(new_cells, dtype=np.int64))
    return vv, cc, np.array(new_bfacets, dtype=np.int64)


@dataclass(eq=False)
class SymmetricMesh:
    """Ball mesh on which the configured group acts by exact node permutation."""

    dim: int
    vertices: np.ndarray            # (V, dim)
    cells: np.ndarray               # (C, dim+1), positive orientation
    boundary_facets: np.ndarray     # (F, dim), outward orientation
    group_spec: GroupSpec
    group: list[GroupElement]
    group_node_maps: np.ndarray     # (|G|, V) permutations, aligned with group
    wedge_id: np.ndarray            # (V,) fundamental-domain tag
    cell_wedge_id: np.ndarray       # (C,)
    facet_wedge_id: np.ndarray      # (F,)
    refinement: int
    node_budget: int
    wedge_template: tuple = dc_field(repr=False, default=None)
    _geom: object = dc_field(default=None, repr=False)

    @property
    def num_vertices(self) -> int:
        return self.vertices.shape[0]

    @property
    def num_cells(self) -> int:
        return self.cells.shape[0]

    def cell_volumes(self) -> np.ndarray:
        return _signed_volumes(self.vertices, self.cells)

    def volume(self) -> float:
        return float(np.sum(self.cell_volumes()))

    def boundary_measure(self) -> float:
        return float(np.sum(facet_measures(self.vertices, self.boundary_facets)))

    def boundary_vertex_ids(self) -> np.ndarray:
        return np.unique(self.boundary_facets)

    def group_exactness_residual(self) -> float:
        worst = 0.0
        for g, perm in zip(self.group, self.group_node_maps):
            mapped = self.vertices @ g.matrix.T
            worst = max(worst, float(np.max(np.abs(self.vertices[perm] - mapped))))
        return worst

    def validate(self):
        bverts = self.boundary_vertex_ids()
        radii = np.linalg.norm(self.vertices[bverts], axis=1)
        if np.max(np.abs(radii - 1.0)) > 1e-12:
            raise MeshError("boundary vertex off the unit sphere")
        vols = self.cell_volumes()
        if np.any(vols <= 0):
            raise MeshError("non-positive cell volume")
        if np.any(facet_measures(self.vertices, self.boundary_facets) <= 0):
            raise MeshError("degenerate boundary facet")
        for perm in self.group_node_maps:
            if len(np.unique(perm)) != self.num_vertices:
                raise MeshError("group node map is not a permutation")
        if self.group_exactness_residual() > 1e-12:
            raise MeshError("group action is not exact on the node set")
        if self.num_vertices > self.node_budget:
            raise MeshError(
                f"mesh has {self.num_vertices} nodes, over budget {self.node_budget}")

    # -- serialization ----------------------------------------------------

    def to_json_dict(self) -> dict:
        return {
            "dim": self.dim,
            "vertices": self.vertices.tolist(),
            "cells": self.cells.tolist(),
            "boundary_facets": self.boundary_facets.tolist(),
            "group": {"k": self.group_spec.k,
                      "reflection": self.group_spec.m == 1},
        }

    def save(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_json_dict(), fh)

    @classmethod
    def load(cls, path, node_budget: int = 200_000) -> "SymmetricMesh":
        with open(path) as fh:
            doc = json.load(fh)
        return mesh_from_json_dict(doc, node_budget=node_budget)


def _wedge_tags(spec: GroupSpec, points: np.ndarray) -> np.ndarray:
    """Half-open fundamental-domain tag matching the group element order."""
    alpha = 2.0 * math.pi / spec.k
    theta = np.mod(np.arctan2(points[:, 1], points[:, 0]), 2.0 * math.pi)
    sector = np.floor((theta + 1e-9) / alpha).astype(np.int64) % spec.k
    on_axis = np.hypot(points[:, 0], points[:, 1]) < 1e-12
    sector[on_axis] = 0
    if spec.m == 1:
        lower = points[:, 2] < -1e-12
        return sector + spec.k * lower.astype(np.int64)
    return sector


def _assemble(spec: GroupSpec, wedge, node_budget: int, refinement: int) -> SymmetricMesh:
    wv, wc, wbf = wedge
    group = enumerate_group(spec)
    if len(group) * len(wv) > 4 * node_budget:
        raise MeshError(
            f"refinement would produce roughly {len(group) * len(wv)} nodes, "
            f"over budget {node_budget}")

    index = _PointIndex()
    replica_maps = []
    for g in group:
        coords = wv @ g.matrix.T
        replica_maps.append(np.array([index.insert(c) for c in coords], dtype=np.int64))
    vertices = np.array(index.coords)
    if len(vertices) > node_budget:
        raise MeshError(
            f"mesh has {len(vertices)} nodes, over budget {node_budget}")

    cell_blocks, facet_blocks, cell_tags, facet_tags = [], [], [], []
    for r, gmap in enumerate(replica_maps):
        cell_blocks.append(gmap[wc])
        facet_blocks.append(gmap[wbf])
        cell_tags.append(np.full(len(wc), r, dtype=np.int64))
        facet_tags.append(np.full(len(wbf), r, dtype=np.int64))
    cells = _orient_cells(vertices, np.concatenate(cell_blocks))
    bfacets = _orient_facets(vertices, np.concatenate(facet_blocks))

    perms = np.empty((len(group), len(vertices)), dtype=np.int64)
    for gi, g in enumerate(group):
        mapped = vertices @ g.matrix.T
        for i in range(len(vertices)):
            j = index.find(mapped[i])
            if j is None:
                raise MeshError("group image of a node is not a node")
            perms[gi, i] = j

    mesh = SymmetricMesh(
        dim=spec.dim,
        vertices=vertices,
        cells=cells,
        boundary_facets=bfacets,
        group_spec=spec,
        group=group,
        group_node_maps=perms,
        wedge_id=_wedge_tags(spec, vertices),
        cell_wedge_id=np.concatenate(cell_tags),
        facet_wedge_id=np.concatenate(facet_tags),
        refinement=refinement,
        node_budget=node_budget,
        wedge_template=(wv, wc, wbf),
    )
    mesh.validate()
    return mesh


def _radial_grade(verts: np.ndarray, gamma: float = _RADIAL_GAMMA) -> np.ndarray:
    r = np.linalg.norm(verts, axis=1)
    scale = np.ones_like(r)
    pos = r > 0
    scale[pos] = (1.0 - (1.0 - r[pos]) ** gamma) / r[pos]
    return verts * scale[:, None]


def _tangential_grade(verts: np.ndarray, k: int,
                      a: float = _TANGENTIAL_GRADE) -> np.ndarray:
    """Pull spherical directions toward the wedge corners on the equator.

    The azimuth within the wedge maps theta -> theta - a sin(2 pi theta /
    alpha) alpha/(2 pi) (fixed endpoints, symmetric under theta -> alpha -
    theta) and, in dim 3, the latitude contracts toward the equator by the
    odd map psi -> psi - (a/2) sin(2 psi).  Both maps commute with the group
    replication, so the graded wedge still tiles exactly.
    """
    alpha = 2.0 * math.pi / k
    out = verts.copy()
    rho = np.hypot(verts[:, 0], verts[:, 1])
    off_axis = rho > 1e-14
    theta = np.arctan2(verts[off_axis, 1], verts[off_axis, 0])
    theta2 = theta - a * (alpha / (2.0 * math.pi)) * np.sin(2.0 * math.pi * theta / alpha)
    out[off_axis, 0] = rho[off_axis] * np.cos(theta2)
    out[off_axis, 1] = rho[off_axis] * np.sin(theta2)
    if verts.shape[1] == 3:
        r3 = np.linalg.norm(out, axis=1)
        pos = (r3 > 1e-14)
        psi = np.arcsin(np.clip(out[pos, 2] / r3[pos], -1.0, 1.0))
        psi2 = psi - (a / 2.0) * np.sin(2.0 * psi)
        rho2 = r3[pos] * np.cos(psi2)
        scale = np.where(np.hypot(out[pos, 0], out[pos, 1]) > 1e-300,
                         rho2 / np.maximum(np.hypot(out[pos, 0], out[pos, 1]), 1e-300),
                         0.0)
        out[pos, 0] *= scale
        out[pos, 1] *= scale
        out[pos, 2] = r3[pos] * np.sin(psi2)
    return out


def build_mesh(dim: int, k: int, refinement: int = 0,
               node_budget: int = 200_000) -> SymmetricMesh:
    """Mesh of the unit disk (dim 2) or ball (dim 3), invariant under C_k
    rotations and, for dim 3, under the z-reflection.

    refinement counts uniform splits on top of the built-in base resolution.
    The base wedge is radially graded toward the sphere so the boundary
    layer of large-lambda minimizers stays resolvable; refinement thins the
    graded shells uniformly.
    """
    if dim not in (2, 3):
        raise ValueError(f"dim must be 2 or 3, got {dim}")
    if k < 2:
        raise ValueError(f"peak count k must be >= 2, got {k}")
    if refinement < 0:
        raise ValueError("refinement must be non-negative")
    spec = GroupSpec(k=k, l=1, m=dim - 2)
    wedge = _fan_wedge(dim, k)
    for _ in range(_BASE_SPLITS):
        wedge = _refine_wedge(*wedge, dim)
    graded = _tangential_grade(_radial_grade(wedge[0]), k)
    wedge = (graded, wedge[1], wedge[2])
    for _ in range(refinement):
        wedge = _refine_wedge(*wedge, dim)
    return _assemble(spec, wedge, node_budget, refinement)


def refine(mesh: SymmetricMesh) -> SymmetricMesh:
    """Uniformly refined mesh with node maps recomputed exactly."""
    if mesh.wedge_template is None:
        raise MeshError("mesh carries no wedge template; cannot refine")
    wedge = _refine_wedge(*mesh.wedge_template, mesh.dim)
    return _assemble(mesh.group_spec, wedge, mesh.node_budget, mesh.refinement + 1)


def mesh_from_json_dict(doc: dict, node_budget: int = 200_000) -> SymmetricMesh:
    """Rebuild a SymmetricMesh from its JSON document.

    The wedge template is recovered from the fundamental-domain tags and the
    replication structure is verified, so imported meshes refine exactly like
    built ones.
    """
    dim = int(doc["dim"])
    vertices = np.asarray(doc["vertices"], dtype=float)
    cells = np.asarray(doc["cells"], dtype=np.int64)
    bfacets = np.asarray(doc["boundary_facets"], dtype=np.int64)
    k = int(doc["group"]["k"])
    reflection = bool(doc["group"]["reflection"])
    spec = GroupSpec(k=k, l=1, m=1 if reflection else 0)
    if spec.dim != dim:
        raise MeshError("group spec dimension does not match vertex dimension")
    group = enumerate_group(spec)

    index = _PointIndex()
    for v in vertices:
        index.insert(v)
    if len(index.coords) != len(vertices):
        raise MeshError("duplicate vertices in mesh document")

    perms = np.empty((len(group), len(vertices)), dtype=np.int64)
    for gi, g in enumerate(group):
        mapped = vertices @ g.matrix.T
        for i in range(len(vertices)):
            j = index.find(mapped[i])
            if j is None:
                raise MeshError("mesh is not invariant under the declared group")
            perms[gi, i] = j

    cells = _orient_cells(vertices, cells)
    bfacets = _orient_facets(vertices, bfacets)
    cell_tags = _wedge_tags(spec, vertices[cells].mean(axis=1))
    facet_tags = _wedge_tags(spec, vertices[bfacets].mean(axis=1))

    # recover the wedge template from replica 0 and verify the replication
    wcells = cells[cell_tags == 0]
    wfacets = bfacets[facet_tags == 0]
    used = np.unique(wcells)
    remap = -np.ones(len(vertices), dtype=np.int64)
    remap[used] = np.arange(len(used))
    template = (vertices[used], remap[wcells], remap[wfacets])

    cell_set = {tuple(sorted(c)) for c in cells.tolist()}
    replicated = set()
    for gi in range(len(group)):
        for c in wcells:
            replicated.add(tuple(sorted(perms[gi][c].tolist())))
    if replicated != cell_set:
        raise MeshError("mesh cells are not a wedge replication under the group")

    mesh = SymmetricMesh(
        dim=dim, vertices=vertices, cells=cells, boundary_facets=bfacets,
        group_spec=spec, group=group, group_node_maps=perms,
        wedge_id=_wedge_tags(spec, vertices),
        cell_wedge_id=cell_tags, facet_wedge_id=facet_tags,
        refinement=-1, node_budget=node_budget, wedge_template=template,
    )
    mesh.validate()
    return mesh


@dataclass
class BoundaryQuadrature:
    """Per-facet quadrature: physical points, weights, and the reference rule."""

    rule: QuadratureRule
    points: np.ndarray    # (F, nq, dim)
    weights: np.ndarray   # (F, nq), sum over a row = facet measure

    @property
    def total_measure(self) -> float:
        return float(np.sum(self.weights))


def boundary_quadrature(mesh: SymmetricMesh) -> BoundaryQuadrature:
    """Quadrature rules on every boundary facet (exact for affine integrands)."""
    rule = facet_rule(mesh.dim)
    meas = facet_measures(mesh.vertices, mesh.boundary_facets)
    bad = np.nonzero(meas <= 0)[0]
    if bad.size:
        f = int(bad[0])
        raise MeshError(
            f"degenerate boundary facet {f} with vertices "
            f"{mesh.boundary_facets[f].tolist()}")
    fverts = mesh.vertices[mesh.boundary_facets]          # (F, dim, dim)
    pts = np.einsum("qv,fvd->fqd", rule.points, fverts)
    ref_measure = 1.0 / math.factorial(mesh.dim - 1)
    weights = np.outer(meas, rule.weights / ref_measure)
    return BoundaryQuadrature(rule=rule, points=pts, weights=weights)
