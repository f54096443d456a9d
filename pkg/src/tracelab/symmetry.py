"""Finite symmetry groups on the disk/ball, orbits, and invariant projection.

The supported groups are the cyclic rotations C_k about the origin (dim 2)
or the z-axis (dim 3), optionally extended by the z-reflection (dim 3).
Group elements act on mesh nodes by exact index permutation, which makes
group averaging an exact projection onto the invariant subspace.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import TraceLabError


@dataclass(frozen=True)
class GroupSpec:
    """Rotation order k, number of plane blocks l, residual dimension m.

    This build supports l = 1 and m in {0, 1}; the ambient dimension is
    2l + m.  For m = 1 the orthogonal factor on the residual coordinate is
    realized exactly by the sign flip z -> -z.
    """

    k: int
    l: int = 1
    m: int = 0

    def __post_init__(self):
        if self.k < 2:
            raise ValueError(f"rotation order k must be >= 2, got {self.k}")
        if self.l != 1:
            raise ValueError("only l = 1 is supported (higher l needs dim >= 4)")
        if self.m not in (0, 1):
            raise ValueError(f"residual dimension m must be 0 or 1, got {self.m}")

    @property
    def dim(self) -> int:
        return 2 * self.l + self.m

    @property
    def order(self) -> int:
        # k^l * l! * 2^min(m,1) with l = 1
        return self.k * (2 if self.m == 1 else 1)


@dataclass(frozen=True)
class GroupElement:
    """Orthogonal matrix with its provenance within the generated group."""

    matrix: np.ndarray
    rotation: int          # power of the 2*pi/k rotation
    reflected: bool = False

    def __post_init__(self):
        m = self.matrix
        if np.max(np.abs(m @ m.T - np.eye(m.shape[0]))) > 1e-12:
            raise ValueError("group element matrix is not orthogonal")

    @property
    def label(self) -> str:
        tag = f"r{self.rotation}"
        return tag + ("s" if self.reflected else "")


def enumerate_group(spec: GroupSpec) -> list[GroupElement]:
    """Full finite group for the spec: k rotations, optionally times z-flip.

    Element order is rotations first, then their reflected copies, so the
    element at index j + k*s is rotation j composed with s applications of
    the z-reflection.
    """
    dim = spec.dim
    elements = []
    for s in range(2 if spec.m == 1 else 1):
        for j in range(spec.k):
            ang = 2.0 * math.pi * j / spec.k
            mat = np.eye(dim)
            mat[0, 0] = math.cos(ang)
            mat[0, 1] = -math.sin(ang)
            mat[1, 0] = math.sin(ang)
            mat[1, 1] = math.cos(ang)
            if s == 1:
                mat[2, 2] = -1.0
            elements.append(GroupElement(mat, rotation=j, reflected=bool(s)))
    _check_closure(elements, spec)
    return elements


def _check_closure(elements, spec):
    for a in elements:
        for b in elements:
            j = (a.rotation + b.rotation) % spec.k
            s = a.reflected ^ b.reflected
            c = elements[j + spec.k * int(s)]
            if np.max(np.abs(a.matrix @ b.matrix - c.matrix)) > 1e-12:
                raise TraceLabError("group closure check failed")


def orbit(x, group: list[GroupElement], tol: float = 1e-9) -> np.ndarray:
    """Deduplicated image set {g x} as an array of points."""
    x = np.asarray(x, dtype=float)
    images = np.array([g.matrix @ x for g in group])
    kept: list[np.ndarray] = []
    for img in images:
        if not any(np.linalg.norm(img - o) <= tol for o in kept):
            kept.append(img)
    return np.array(kept)


def geodesic_distance(a, b) -> float:
    """Great-circle distance between two directions (inputs are normalized)."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    c = float(np.dot(a, b) / (np.linalg.norm(a) * np.linalg.norm(b)))
    return math.acos(min(1.0, max(-1.0, c)))


@dataclass
class OrbitalSet:
    """A single group orbit on the unit sphere with its cap radius kappa.

    ``locally_minimal`` certifies by sampling that points in the kappa
    neighborhood (off the set itself) have orbits at least as large;
    ``strict_fraction`` records how many samples had strictly larger orbits.
    On the circle (dim 2) every orbit of C_k has exactly k points, so the
    non-strict comparison is the strongest certificate available there.
    """

    points: np.ndarray
    m_A: int
    kappa: float
    locally_minimal: bool
    strict_fraction: float = 0.0
    spec: GroupSpec | None = None

    def min_pairwise_geodesic(self) -> float:
        dmin = math.inf
        for i in range(self.m_A):
            for j in range(i + 1, self.m_A):
                dmin = min(dmin, geodesic_distance(self.points[i], self.points[j]))
        return dmin


def _cap_sample(rng, center, kappa):
    """Uniform sample in the geodesic cap of radius kappa around center."""
    dim = center.shape[0]
    if dim == 2:
        ang = math.atan2(center[1], center[0]) + rng.uniform(-kappa, kappa)
        return np.array([math.cos(ang), math.sin(ang)])
    # area-uniform on the spherical cap about e_z, then rotate e_z -> center
    z = 1.0 - rng.uniform(0.0, 1.0) * (1.0 - math.cos(kappa))
    phi = rng.uniform(0.0, 2.0 * math.pi)
    r = math.sqrt(max(0.0, 1.0 - z * z))
    v = np.array([r * math.cos(phi), r * math.sin(phi), z])
    ez = np.array([0.0, 0.0, 1.0])
    axis = np.cross(ez, center)
    na = np.linalg.norm(axis)
    if na < 1e-14:
        return v if center[2] > 0 else -v
    axis /= na
    ang = math.acos(min(1.0, max(-1.0, float(center @ ez))))
    kx = np.array([
        [0.0, -axis[2], axis[1]],
        [axis[2], 0.0, -axis[0]],
        [-axis[1], axis[0], 0.0],
    ])
    rot = np.eye(3) + math.sin(ang) * kx + (1.0 - math.cos(ang)) * (kx @ kx)
    return rot @ v


def minimal_orbital_set(spec: GroupSpec, kappa: float | None = None,
                        samples: int = 1000, seed: int = 745) -> OrbitalSet:
    """Equatorial k-gon orbit with a sampled local-minimality certificate.

    kappa defaults to half the minimal pairwise geodesic distance between
    orbit points, which makes the caps around distinct points disjoint.
    """
    k = spec.k
    dim = spec.dim
    pts = np.zeros((k, dim))
    for j in range(k):
        ang = 2.0 * math.pi * j / k
        pts[j, 0] = math.cos(ang)
        pts[j, 1] = math.sin(ang)
    if kappa is None:
        kappa = math.pi / k
    group = enumerate_group(spec)
    rng = np.random.default_rng(seed)
    strict = 0
    checked = 0
    for i in range(samples):
        center = pts[i % k]
        y = _cap_sample(rng, center, kappa)
        if min(np.linalg.norm(y - p) for p in pts) < 1e-9:
            continue
        size = orbit(y, group).shape[0]
        assert size >= k, "local-minimality certificate failed"
        checked += 1
        if size > k:
            strict += 1
    ok = checked > 0
    return OrbitalSet(points=pts, m_A=k, kappa=float(kappa), locally_minimal=ok,
                      strict_fraction=strict / max(checked, 1), spec=spec)


def _values_of(u):
    return u.coefficients if hasattr(u, "coefficients") else np.asarray(u, dtype=float)


def _same_group(mesh, group) -> bool:
    ours = mesh.group
    if len(ours) != len(group):
        return False
    return all(np.max(np.abs(a.matrix - b.matrix)) <= 1e-12 for a, b in zip(ours, group))


def symmetrize(u, mesh, group=None):
    """Average nodal values over the group node-permutations.

    Linear and idempotent; the result satisfies v[perm_g] == v for every
    stored element up to floating-point summation order.  Accepts a
    NodalField or a plain coefficient array and returns the same kind.
    """
    if group is not None and not _same_group(mesh, group):
        raise TraceLabError("group does not match the one the mesh was built with")
    vals = _values_of(u)
    acc = vals[mesh.group_node_maps].mean(axis=0)
    if hasattr(u, "coefficients"):
        return type(u)(mesh=mesh, coefficients=acc)
    return acc


def invariance_residual(u, mesh, group=None) -> float:
    """max over g of ||u o perm_g - u||_inf / ||u||_inf (0 for the zero field)."""
    if group is not None and not _same_group(mesh, group):
        raise TraceLabError("group does not match the one the mesh was built with")
    vals = _values_of(u)
    scale = float(np.max(np.abs(vals)))
    if scale == 0.0:
        return 0.0
    worst = 0.0
    for perm in mesh.group_node_maps:
        worst = max(worst, float(np.max(np.abs(vals[perm] - vals))))
    return worst / scale
