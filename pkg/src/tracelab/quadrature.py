"""Quadrature rules on reference simplices.

Points are stored in barycentric coordinates, weights sum to the reference
simplex measure 1/dim!.  The cell rules are used for |u|^p volume terms and
the boundary rules for |u|^q trace terms; |u|^q is evaluated pointwise at the
quadrature nodes rather than interpolated, so the only requirement on a rule
is its polynomial exactness degree.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class QuadratureRule:
    points: np.ndarray   # (nq, dim+1) barycentric coordinates
    weights: np.ndarray  # (nq,), positive, sum = 1/dim!
    degree: int          # polynomial exactness on the reference simplex

    @property
    def dim(self) -> int:
        return self.points.shape[1] - 1


def _rule(points, weights, degree) -> QuadratureRule:
    pts = np.asarray(points, dtype=float)
    w = np.asarray(weights, dtype=float)
    if np.any(w <= 0):
        raise ValueError("quadrature weights must be positive")
    return QuadratureRule(pts, w, degree)


def segment_gauss3() -> QuadratureRule:
    """Three-point Gauss rule on the unit segment, degree 5."""
    s = math.sqrt(3.0 / 5.0)
    xs = [(1.0 - s) / 2.0, 0.5, (1.0 + s) / 2.0]
    ws = [5.0 / 18.0, 8.0 / 18.0, 5.0 / 18.0]
    pts = [[1.0 - x, x] for x in xs]
    return _rule(pts, ws, degree=5)


def triangle_deg2() -> QuadratureRule:
    """Edge-midpoint rule on the reference triangle, degree 2."""
    pts = [[0.5, 0.5, 0.0], [0.0, 0.5, 0.5], [0.5, 0.0, 0.5]]
    ws = [1.0 / 6.0] * 3
    return _rule(pts, ws, degree=2)


def triangle_deg4() -> QuadratureRule:
    """Six-point symmetric rule on the reference triangle, degree 4."""
    a1, w1 = 0.445948490915965, 0.223381589678011
    a2, w2 = 0.091576213509771, 0.109951743655322
    pts, ws = [], []
    for a, w in ((a1, w1), (a2, w2)):
        c = 1.0 - 2.0 * a
        pts += [[a, a, c], [a, c, a], [c, a, a]]
        ws += [w / 2.0] * 3
    return _rule(pts, ws, degree=4)


def tet_deg2() -> QuadratureRule:
    """Four-point symmetric rule on the reference tetrahedron, degree 2."""
    a = (5.0 + 3.0 * math.sqrt(5.0)) / 20.0
    b = (5.0 - math.sqrt(5.0)) / 20.0
    pts = [
        [a, b, b, b],
        [b, a, b, b],
        [b, b, a, b],
        [b, b, b, a],
    ]
    ws = [1.0 / 24.0] * 4
    return _rule(pts, ws, degree=2)


# Rules used for cell (volume) integrals, keyed by mesh dimension.
CELL_RULES = {2: triangle_deg4, 3: tet_deg2}

# Rules used for boundary-facet integrals, keyed by mesh dimension.
FACET_RULES = {2: segment_gauss3, 3: triangle_deg4}


def cell_rule(dim: int) -> QuadratureRule:
    return CELL_RULES[dim]()


def facet_rule(dim: int) -> QuadratureRule:
    return FACET_RULES[dim]()


def reference_monomial_integral(exponents) -> float:
    """Exact integral of a barycentric monomial over the reference simplex.

    For exponents (a_0, ..., a_d) the value is prod(a_i!) / (sum(a_i) + d)!.
    """
    exps = list(exponents)
    d = len(exps) - 1
    num = 1.0
    for a in exps:
        num *= math.factorial(a)
    return num / math.factorial(sum(exps) + d)


def exactness_error(rule: QuadratureRule, degree: int) -> float:
    """Largest monomial quadrature error up to the given total degree."""
    d = rule.dim
    worst = 0.0

    def rec(prefix, remaining, slots):
        nonlocal worst
        if slots == 1:
            exps = prefix + [remaining]
            approx = float(np.sum(rule.weights * np.prod(rule.points ** np.array(exps), axis=1)))
            worst = max(worst, abs(approx - reference_monomial_integral(exps)))
            return
        for a in range(remaining + 1):
            rec(prefix + [a], remaining - a, slots - 1)

    for total in range(degree + 1):
        rec([], total, d + 1)
    return worst
