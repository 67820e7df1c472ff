"""Analytic surface geometry and the manufactured convection problem.

The exact surface is a ring torus given through its signed distance function.
All differential quantities (unit normal, tangent projector, shape operator)
have closed forms, and the tangent-plane map relating gradients on a planar
cut facet to gradients on the exact surface is assembled from them.

Points are numpy arrays of shape ``(..., 3)``; every operation broadcasts
over the leading axes and is a pure function of its inputs.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import GeometryError

_AXES = np.eye(3)


def _dot(a, b):
    return np.einsum("...i,...i->...", a, b)


def _outer(a, b):
    return np.einsum("...i,...j->...ij", a, b)


def _unit(v):
    return v / np.linalg.norm(v, axis=-1, keepdims=True)


def tangent_projector(n):
    """Orthogonal projector I - n (x) n onto the plane with unit normal n."""
    return np.eye(3) - _outer(n, n)


@dataclass(frozen=True)
class SurfaceFrame:
    """Surface frame at a query point.

    Attributes:
        point: closest surface point, shape (..., 3).
        normal: unit normal (gradient of the signed distance), shape (..., 3).
        projector: tangent projector I - n (x) n, shape (..., 3, 3).
        shape_operator: Hessian of the signed distance at the query point,
            a symmetric tangential tensor with units 1/length, shape
            (..., 3, 3).  On the surface itself it is the curvature tensor.
    """

    point: np.ndarray
    normal: np.ndarray
    projector: np.ndarray
    shape_operator: np.ndarray


@dataclass(frozen=True)
class BMapResult:
    """Tangent-plane map between a planar facet and the exact surface.

    Attributes:
        B: the map P_exact (I - rho H) P_facet, shape (..., 3, 3).  It takes
            facet-tangent vectors to surface-tangent vectors at the lifted
            point.
        det_B: absolute value of det [B xi1, B xi2, n] for an orthonormal
            facet-plane basis {xi1, xi2}; the surface-measure Jacobian.
        B_inv: Moore-Penrose pseudoinverse of B, shape (..., 3, 3).  It is
            the exact inverse of B between the two tangent planes, so
            B_inv @ B restricted to the facet plane is the identity there.
    """

    B: np.ndarray
    det_B: np.ndarray
    B_inv: np.ndarray


class ImplicitSurface:
    """Contract for closed surfaces given by an exact signed distance.

    Concrete surfaces implement ``sdf``, ``closest_point``, ``normal``,
    ``shape_operator``, and ``tube_radius``; the frame and tangent-plane
    map are derived here and work for any implementation.
    """

    def sdf(self, x):
        raise NotImplementedError

    def closest_point(self, x):
        raise NotImplementedError

    def normal(self, x):
        raise NotImplementedError

    def shape_operator(self, x):
        raise NotImplementedError

    def tube_radius(self):
        """Thickness of the tubular neighborhood on which the closest-point
        map is a bijection."""
        raise NotImplementedError

    def frame_at(self, x):
        """Surface frame at x: closest point plus normal, projector and
        shape operator evaluated at the query point."""
        x = np.asarray(x, dtype=float)
        n = self.normal(x)
        return SurfaceFrame(
            point=self.closest_point(x),
            normal=n,
            projector=tangent_projector(n),
            shape_operator=self.shape_operator(x),
        )

    def b_map(self, x, n_h):
        """Tangent-plane map B = P_exact (I - rho H) P_facet at facet points.

        Args:
            x: points on (or near) the discrete surface, shape (..., 3),
                with |sdf(x)| < tube_radius.
            n_h: unit facet normals, shape (..., 3).

        Returns:
            BMapResult with B, the measure Jacobian det_B, and the
            pseudoinverse B_inv.

        Raises:
            GeometryError: if I - rho H is numerically singular (cannot
                occur inside the tube of a torus).
        """
        x = np.asarray(x, dtype=float)
        n_h = np.asarray(n_h, dtype=float)
        rho = self.sdf(x)
        n = self.normal(x)
        H = self.shape_operator(x)

        core = np.eye(3) - rho[..., None, None] * H
        if np.any(np.abs(np.linalg.det(core)) < 1e-12):
            raise GeometryError("tangent map I - rho*H is singular")

        P = tangent_projector(n)
        P_h = tangent_projector(n_h)
        B = P @ core @ P_h

        # orthonormal facet-plane basis; axis choice is deterministic
        k = np.argmin(np.abs(n_h), axis=-1)
        xi1 = _unit(np.cross(_AXES[k], n_h))
        xi2 = np.cross(n_h, xi1)
        cols = np.stack(
            [
                np.einsum("...ij,...j->...i", B, xi1),
                np.einsum("...ij,...j->...i", B, xi2),
                n,
            ],
            axis=-1,
        )
        det_B = np.abs(np.linalg.det(cols))
        return BMapResult(B=B, det_B=det_B, B_inv=np.linalg.pinv(B))


@dataclass(frozen=True)
class ImplicitTorus(ImplicitSurface):
    """Ring torus centered at the origin with axis z.

    The signed distance is rho = sqrt(z^2 + (sqrt(x^2+y^2) - R)^2) - r,
    negative inside the tube.  Requires R > r > 0 so the closest-point map
    is a bijection on the open tube |rho| < r.
    """

    major_radius: float = 1.0
    minor_radius: float = 0.5

    def __post_init__(self):
        if not self.major_radius > self.minor_radius > 0:
            raise ValueError(
                "torus requires major_radius > minor_radius > 0, got "
                f"R={self.major_radius}, r={self.minor_radius}"
            )

    def tube_radius(self):
        return self.minor_radius

    def _circle_distance(self, x, guard_axis=True):
        s = np.hypot(x[..., 0], x[..., 1])
        if guard_axis and np.any(s == 0.0):
            raise GeometryError("point on the z-axis: closest circle point undefined")
        return s, np.hypot(x[..., 2], s - self.major_radius)

    def sdf(self, x):
        """Exact signed distance.  Well-defined everywhere, including the
        z-axis, where it equals sqrt(z^2 + R^2) - r."""
        x = np.asarray(x, dtype=float)
        _, d = self._circle_distance(x, guard_axis=False)
        return d - self.minor_radius

    def closest_point(self, x):
        """Project onto the surface: through the center-circle point c,
        p = c + r (x - c)/|x - c|.  Requires |sdf(x)| < r."""
        x = np.asarray(x, dtype=float)
        s, d = self._circle_distance(x)
        if np.any(d == 0.0):
            raise GeometryError("point on the center circle: projection undefined")
        if np.any(np.abs(d - self.minor_radius) > self.minor_radius):
            raise GeometryError(
                "point outside the tubular neighborhood |rho| <= minor_radius"
            )
        scale = self.major_radius / s
        c = np.stack(
            [x[..., 0] * scale, x[..., 1] * scale, np.zeros_like(s)], axis=-1
        )
        v = x - c
        return c + self.minor_radius * v / d[..., None]

    def normal(self, x):
        """Unit normal, the gradient of the signed distance.  Constant along
        normal lines, so normal(x) == normal(closest_point(x))."""
        x = np.asarray(x, dtype=float)
        s, d = self._circle_distance(x)
        if np.any(d == 0.0):
            raise GeometryError("point on the center circle: normal undefined")
        q = s - self.major_radius
        return np.stack(
            [
                q * x[..., 0] / (s * d),
                q * x[..., 1] / (s * d),
                x[..., 2] / d,
            ],
            axis=-1,
        )

    def shape_operator(self, x):
        """Hessian of the signed distance in closed form.

        With s = sqrt(x^2+y^2), q = s - R, d = sqrt(q^2 + z^2) the entries
        follow from the axisymmetric composition rho = g(s, z):
        g_ss = z^2/d^3, g_zz = q^2/d^3, g_sz = -q z/d^3, g_s = q/d.
        """
        x = np.asarray(x, dtype=float)
        s, d = self._circle_distance(x)
        if np.any(d == 0.0):
            raise GeometryError("point on the center circle: curvature undefined")
        q = s - self.major_radius
        z = x[..., 2]
        cx = x[..., 0] / s
        cy = x[..., 1] / s
        g_ss = z**2 / d**3
        g_zz = q**2 / d**3
        g_sz = -q * z / d**3
        g_s = q / d

        H = np.empty(x.shape[:-1] + (3, 3))
        H[..., 0, 0] = g_ss * cx**2 + g_s * cy**2 / s
        H[..., 1, 1] = g_ss * cy**2 + g_s * cx**2 / s
        H[..., 2, 2] = g_zz
        H[..., 0, 1] = H[..., 1, 0] = (g_ss - g_s / s) * cx * cy
        H[..., 0, 2] = H[..., 2, 0] = g_sz * cx
        H[..., 1, 2] = H[..., 2, 1] = g_sz * cy
        return H


@dataclass(frozen=True)
class ProblemData:
    """Data of the surface convection problem beta . grad_G u + alpha u = f.

    ``alpha``, ``beta_field`` and the manufactured right-hand side are
    evaluated at points on the surface; ``u_ambient`` and its gradient are
    the ambient formulas the exact solution is restricted from.  The
    extension of any on-surface field to the tube is evaluation after the
    closest-point map.
    """

    surface: ImplicitSurface
    alpha: Callable[[np.ndarray], np.ndarray]
    beta_field: Callable[[np.ndarray], np.ndarray]
    u_ambient: Callable[[np.ndarray], np.ndarray]
    grad_u_ambient: Callable[[np.ndarray], np.ndarray]

    def exact_solution_ext(self, x):
        """Normal-constant extension u^e(x) = u(p(x))."""
        return self.u_ambient(self.surface.closest_point(x))

    def beta_ext(self, x):
        """Extension of the tangential velocity field, beta(p(x))."""
        return self.beta_field(self.surface.closest_point(x))

    def surface_gradient_u(self, p):
        """Tangential gradient of the exact solution at surface points p."""
        g = self.grad_u_ambient(p)
        n = self.surface.normal(p)
        return g - _dot(n, g)[..., None] * n

    def rhs(self, p):
        """Manufactured right-hand side at surface points p."""
        return _dot(self.beta_field(p), self.surface_gradient_u(p)) + self.alpha(
            p
        ) * self.u_ambient(p)

    def rhs_ext(self, x):
        """Extension of the right-hand side, f(p(x))."""
        return self.rhs(self.surface.closest_point(x))


def _benchmark_u(p):
    x, y = p[..., 0], p[..., 1]
    pre = 0.5 * x + (x - 1.0) ** 2 + 0.5 * y + (y - 1.0)
    return pre * np.exp(-x * (x - 1.0) - y * (y - 1.0))


def _benchmark_grad_u(p):
    x, y = p[..., 0], p[..., 1]
    pre = 0.5 * x + (x - 1.0) ** 2 + 0.5 * y + (y - 1.0)
    e = np.exp(-x * (x - 1.0) - y * (y - 1.0))
    gx = e * (0.5 + 2.0 * (x - 1.0) + pre * (1.0 - 2.0 * x))
    gy = e * (1.5 + pre * (1.0 - 2.0 * y))
    return np.stack([gx, gy, np.zeros_like(gx)], axis=-1)


def torus_benchmark(surface=None):
    """Benchmark problem on the ring torus: alpha = 1, a projected cubic
    velocity field, and the right-hand side manufactured from the known
    exact solution."""
    if surface is None:
        surface = ImplicitTorus()

    def alpha(p):
        return np.ones(np.asarray(p).shape[:-1])

    def beta(p):
        p = np.asarray(p, dtype=float)
        x, y, z = p[..., 0], p[..., 1], p[..., 2]
        raw = np.stack([x**2 * y * z, x, y * z**3], axis=-1)
        n = surface.normal(p)
        return raw - _dot(n, raw)[..., None] * n

    return ProblemData(
        surface=surface,
        alpha=alpha,
        beta_field=beta,
        u_ambient=_benchmark_u,
        grad_u_ambient=_benchmark_grad_u,
    )


def surface_divergence_fd(field, surface, points, step=1e-6):
    """Finite-difference surface divergence of a tangential field.

    Central-differences the normal-constant extension field(p(x)) in the
    ambient directions and projects: div_G = tr(P J P).  Diagnostic-grade
    accuracy only; used for the coercivity sample.
    """
    points = np.asarray(points, dtype=float)
    n = surface.normal(points)
    P = tangent_projector(n)
    J = np.empty(points.shape[:-1] + (3, 3))
    for j in range(3):
        e = np.zeros(3)
        e[j] = step
        fp = field(surface.closest_point(points + e))
        fm = field(surface.closest_point(points - e))
        J[..., :, j] = (fp - fm) / (2.0 * step)
    PJP = np.einsum("...ik,...kl,...lj->...ij", P, J, P)
    return np.trace(PJP, axis1=-2, axis2=-1)


def coercivity_sample(problem, points, step=1e-6):
    """Sampled values of alpha - div_G(beta)/2 at surface points.

    The positivity of the infimum is the well-posedness assumption of the
    continuous problem; the returned array lets callers record the minimum.
    """
    div = surface_divergence_fd(problem.beta_field, problem.surface, points, step)
    return problem.alpha(points) - 0.5 * div
