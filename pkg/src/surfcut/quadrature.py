"""Reference triangle quadrature and P1 tetrahedral shape functions.

Triangle rules are stored in barycentric coordinates with weights summing
to one; integrals scale by the physical facet area at the use site.  All
rules have strictly positive weights, which keeps the assembled mass term
coercive.  The degree-3 rule is the four-point conical product rule
(Gauss-Jacobi x Gauss-Legendre); no symmetric four-point degree-3 rule
with positive weights exists.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
import math

import numpy as np
from scipy.special import roots_jacobi, roots_legendre

from .errors import ConfigError, MeshError

# degree-4 rule orbit parameters, solved from the moment equations to 40
# digits (two three-point orbits, weights per point)
_D4_A1 = 0.4459484909159648863183292538830519884
_D4_A2 = 0.09157621350977074345957146340220150785
_D4_W1 = 0.22338158967801146569500700843312280437
_D4_W2 = 0.10995174365532186763832632490021052896


@dataclass(frozen=True)
class TriangleRule:
    """Quadrature rule on the reference triangle.

    Attributes:
        degree: highest polynomial degree integrated exactly.
        points: barycentric triples, shape (n, 3).
        weights: positive weights summing to one, shape (n,).
    """

    degree: int
    points: np.ndarray
    weights: np.ndarray

    def physical_points(self, triangles):
        """Map rule points onto physical triangles of shape (..., 3, 3)."""
        return np.einsum("qb,...bd->...qd", self.points, triangles)


def _conical_points(n):
    """n x n conical product rule: degree 2n-1, positive weights."""
    t, wx = roots_jacobi(n, 1.0, 0.0)
    xi = 0.5 * (1.0 + t)
    wx = wx / 4.0  # jacobi weight (1-t) on [-1,1] -> (1-x) on [0,1]
    s, wy = roots_legendre(n)
    eta = 0.5 * (1.0 + s)
    wy = wy / 2.0

    pts = []
    wts = []
    for i in range(n):
        for j in range(n):
            x = xi[i]
            y = eta[j] * (1.0 - xi[i])
            pts.append((1.0 - x - y, x, y))
            wts.append(wx[i] * wy[j])
    points = np.array(pts)
    weights = np.array(wts)
    return points, weights / weights.sum()


@lru_cache(maxsize=None)
def conical_rule(n):
    """Conical product rule with n^2 points, exact to degree 2n-1.

    Independent construction from the fixed-degree rules below; used as the
    brute-force oracle in quadrature cross-checks.
    """
    points, weights = _conical_points(n)
    return TriangleRule(degree=2 * n - 1, points=points, weights=weights)


@lru_cache(maxsize=None)
def triangle_rule(degree):
    """Positive-weight rule of the requested degree (2, 3, or 4).

    degree 2: three edge midpoints; degree 3: four-point conical product;
    degree 4: six-point rule from two symmetric orbits.
    """
    if degree == 2:
        points = np.array(
            [
                [0.5, 0.5, 0.0],
                [0.0, 0.5, 0.5],
                [0.5, 0.0, 0.5],
            ]
        )
        weights = np.full(3, 1.0 / 3.0)
    elif degree == 3:
        points, weights = _conical_points(2)
    elif degree == 4:
        orbits = []
        for a, w in ((_D4_A1, _D4_W1), (_D4_A2, _D4_W2)):
            b = 1.0 - 2.0 * a
            orbits += [([a, a, b], w), ([a, b, a], w), ([b, a, a], w)]
        points = np.array([p for p, _ in orbits])
        weights = np.array([w for _, w in orbits])
    else:
        raise ConfigError(f"unsupported triangle quadrature degree {degree}")
    return TriangleRule(degree=degree, points=points, weights=weights)


def reference_monomial_integral(a, b):
    """Exact integral of x^a y^b over the reference triangle: a! b!/(a+b+2)!."""
    return math.factorial(a) * math.factorial(b) / math.factorial(a + b + 2)


def tet_gradients(tet_vertices):
    """Constant P1 gradients and volumes for tetrahedra.

    Args:
        tet_vertices: shape (..., 4, 3).

    Returns:
        grads: shape (..., 4, 3), rows are grad(phi_i).
        volume: shape (...,), positive for positively oriented tets.

    Raises:
        MeshError: for degenerate tetrahedra (volume below 1e-14 times the
            cube of the longest edge).
    """
    v = np.asarray(tet_vertices, dtype=float)
    edges = v[..., 1:, :] - v[..., :1, :]  # (...,3,3), rows v_i - v_0
    det = np.linalg.det(edges)
    volume = det / 6.0
    scale = np.max(np.linalg.norm(edges, axis=-1), axis=-1)
    if np.any(np.abs(volume) < 1e-14 * scale**3):
        raise MeshError("degenerate tetrahedron")
    inv = np.linalg.inv(edges)  # columns are grad(lambda_i), i=1..3
    g123 = np.swapaxes(inv, -1, -2)
    g0 = -g123.sum(axis=-2, keepdims=True)
    return np.concatenate([g0, g123], axis=-2), volume


def p1_eval(tet_vertices, x):
    """Barycentric coordinates (P1 values) of points inside tetrahedra.

    tet_vertices has shape (..., 4, 3) and x shape (..., 3), broadcastable
    against each other; returns values of shape (..., 4).
    """
    v = np.asarray(tet_vertices, dtype=float)
    x = np.asarray(x, dtype=float)
    edges = v[..., 1:, :] - v[..., :1, :]
    lam = np.linalg.solve(
        np.swapaxes(edges, -1, -2), (x - v[..., 0, :])[..., None]
    )[..., 0]
    lam0 = 1.0 - lam.sum(axis=-1, keepdims=True)
    return np.concatenate([lam0, lam], axis=-1)


def p1_eval_and_grad(tet_vertices, x):
    """P1 shape function values and constant gradients at a physical point.

    Returns a pair (values, gradients) with shapes (..., 4) and (..., 4, 3).
    """
    grads, _ = tet_gradients(tet_vertices)
    return p1_eval(tet_vertices, x), grads


def tangential_gradient(grad, n_h):
    """Project gradients onto the plane orthogonal to the unit normal n_h."""
    grad = np.asarray(grad, dtype=float)
    n_h = np.asarray(n_h, dtype=float)
    return grad - np.einsum("...i,...i->...", grad, n_h)[..., None] * n_h
