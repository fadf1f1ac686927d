"""Gauss quadrature on the reference triangle and reference edge.

The reference triangle is the unit simplex {(x, y): x, y >= 0, x + y <= 1};
the reference edge is the interval [0, 1].  Triangle rules are collapsed
(Duffy-type) tensor-product Gauss rules, which have strictly positive weights
and are exact for all polynomials up to the requested total degree.
"""

from dataclasses import dataclass

import numpy as np

MAX_TRIANGLE_DEGREE = 10
MAX_EDGE_DEGREE = 12


@dataclass(frozen=True)
class QuadratureRule:
    """Points and weights on a reference element.

    ``points`` has shape (npts, 2) for triangle rules and (npts,) for edge
    rules; ``weights`` sums to the reference measure (1/2 for the triangle,
    1 for the edge).
    """

    points: np.ndarray
    weights: np.ndarray
    exactness_degree: int

    def __post_init__(self):
        if np.any(self.weights <= 0.0):
            raise ValueError("quadrature weights must be positive")


def edge_rule(degree: int) -> QuadratureRule:
    """Gauss-Legendre rule on [0, 1] exact for polynomials of ``degree``."""
    if not 1 <= degree <= MAX_EDGE_DEGREE:
        raise ValueError(f"unsupported edge quadrature degree {degree}")
    npts = degree // 2 + 1
    x, w = np.polynomial.legendre.leggauss(npts)
    return QuadratureRule(points=(x + 1.0) / 2.0, weights=w / 2.0, exactness_degree=degree)


def triangle_rule(degree: int) -> QuadratureRule:
    """Collapsed tensor Gauss rule on the unit triangle, exact for ``degree``.

    The square [0,1]^2 is mapped by (xi, eta) -> (xi (1 - eta), eta); the
    Jacobian factor (1 - eta) raises the eta-degree of the integrand by one,
    which the eta-direction rule accounts for.
    """
    if not 1 <= degree <= MAX_TRIANGLE_DEGREE:
        raise ValueError(f"unsupported triangle quadrature degree {degree}")
    nxi = degree // 2 + 1
    neta = (degree + 1) // 2 + 1
    xi, wxi = np.polynomial.legendre.leggauss(nxi)
    eta, weta = np.polynomial.legendre.leggauss(neta)
    xi = (xi + 1.0) / 2.0
    eta = (eta + 1.0) / 2.0
    wxi = wxi / 2.0
    weta = weta / 2.0

    XI, ETA = np.meshgrid(xi, eta, indexing="ij")
    WX, WE = np.meshgrid(wxi, weta, indexing="ij")
    x = (XI * (1.0 - ETA)).ravel()
    y = ETA.ravel()
    w = (WX * WE * (1.0 - ETA)).ravel()
    return QuadratureRule(
        points=np.column_stack([x, y]), weights=w, exactness_degree=degree
    )


def map_to_triangle(rule: QuadratureRule, verts: np.ndarray):
    """Map a reference triangle rule to the physical triangle ``verts`` (3x2).

    Returns (points (npts,2), weights (npts,)) with weights scaled by the
    Jacobian determinant (= 2 * area).
    """
    v0, v1, v2 = verts
    J = np.column_stack([v1 - v0, v2 - v0])
    det = J[0, 0] * J[1, 1] - J[0, 1] * J[1, 0]
    pts = rule.points @ J.T + v0
    return pts, rule.weights * abs(det)


def map_to_edge(rule: QuadratureRule, p0: np.ndarray, p1: np.ndarray):
    """Map a reference edge rule to the segment p0 -> p1."""
    s = rule.points[:, None]
    pts = (1.0 - s) * p0 + s * p1
    return pts, rule.weights * float(np.linalg.norm(p1 - p0))
