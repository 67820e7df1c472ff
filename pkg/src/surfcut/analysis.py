"""Direct solve, error norms, convergence rates, and conditioning.

Errors are measured on the discrete surface against the normal-constant
extension of the exact solution; the tangential gradient of the extension
is pulled back through the tangent-plane map.  The condition number is the
ratio of the extreme singular values, estimated by power iteration on
A^T A and on the inverse pair through the LU factors.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.sparse.linalg import splu

from .assembly import (
    AssemblyParams,
    build_dof_map,
    coefficient_beta_h,
    _facet_tet_data,
    _p1_values,
    _project_plane,
)
from .errors import EstimatorError, SolverError
from .quadrature import conical_rule, tet_gradients, triangle_rule


def _error_rule(degree):
    """Facet rule for error integrals: the fixed-degree rules up to 4, a
    conical product rule beyond (quadrature-sensitivity checks)."""
    if degree <= 4:
        return triangle_rule(degree)
    return conical_rule((degree + 2) // 2)


def solve(system, rel_tol=1e-10):
    """Solve the assembled system by sparse LU with partial pivoting.

    Returns the DOF vector; raises SolverError on singular factorization,
    non-finite solution, or relative residual above rel_tol.  There is no
    fallback path: failures surface.
    """
    A = system.A.tocsc()
    b = system.b
    try:
        lu = splu(A)
        u = lu.solve(b)
    except RuntimeError as exc:
        raise SolverError(f"sparse LU factorization failed: {exc}") from exc
    if not np.all(np.isfinite(u)):
        raise SolverError("solver produced non-finite values (singular system?)")
    scale = np.linalg.norm(b)
    residual = np.linalg.norm(system.A @ u - b)
    if residual > rel_tol * max(scale, np.finfo(float).tiny):
        raise SolverError(
            f"residual {residual:.3e} exceeds {rel_tol:.1e} * ||b|| = "
            f"{rel_tol * scale:.3e}"
        )
    return u


def residual_norm(system, u):
    """Euclidean residual ||A u - b|| of a candidate solution."""
    return float(np.linalg.norm(system.A @ u - system.b))


@dataclass(frozen=True)
class ErrorReport:
    """Error norms of a discrete solution on the cut surface.

    energy_error**2 = l2_error**2 + h*streamline_sq + h*jump_sq, so the
    energy norm always dominates its L2 part.
    """

    h: float
    l2_error: float
    energy_error: float
    grad_error: float
    streamline_sq: float
    jump_sq: float


def error_norms(u, cut, problem, params=None, degree=4):
    """Measure u against the exact solution in the method's norms.

    All facet integrals use the rule of the given degree (the integrands
    are not polynomial).  The face-jump term uses only the discrete
    solution: the smooth extension has a continuous gradient, so its jump
    vanishes identically.
    """
    if params is None:
        params = AssemblyParams()
    mesh = cut.mesh
    h = mesh.h
    rule = _error_rule(degree)
    tet_ids, tet_coords, grads = _facet_tet_data(cut)
    n_h = cut.facet_normals

    dof_map = build_dof_map(cut)
    u = np.asarray(u, dtype=float)
    if u.shape != (dof_map.n_dofs,):
        raise ValueError(
            f"solution vector has shape {u.shape}, expected ({dof_map.n_dofs},)"
        )
    u_tet = u[dof_map.dofs_of(tet_ids)]  # (K, 4)

    pts = rule.physical_points(cut.facet_vertices)  # (K, Q, 3)
    flat = pts.reshape(-1, 3)
    lifted = problem.surface.closest_point(flat)

    # pointwise error of values
    phi = _p1_values(tet_coords, pts)
    u_h = np.einsum("kqi,ki->kq", phi, u_tet)
    u_exact = problem.u_ambient(lifted).reshape(pts.shape[:2])
    err = u_exact - u_h

    # tangential gradients: pull back the exact surface gradient, project
    # the constant discrete gradient
    n_rep = np.repeat(n_h, len(rule.points), axis=0)
    bm = problem.surface.b_map(flat, n_rep)
    grad_exact = np.einsum(
        "pdc,pd->pc", bm.B, problem.surface_gradient_u(lifted)
    ).reshape(pts.shape)
    grad_h = _project_plane(
        np.einsum("kid,ki->kd", grads, u_tet), n_h
    )  # (K, 3) constant per facet
    grad_err = grad_exact - grad_h[:, None, :]

    beta_h = coefficient_beta_h(
        problem,
        cut,
        pts,
        params.coefficient_mode,
        params.projection_degree,
        barycentric=rule.points,
    )
    stream = np.einsum("kqd,kqd->kq", beta_h, grad_err)

    w_area = rule.weights[None, :] * cut.facet_areas[:, None]
    l2_sq = float(np.einsum("kq,kq->", w_area, err**2))
    grad_sq = float(np.einsum("kq,kq->", w_area, np.einsum("kqd,kqd->kq", grad_err, grad_err)))
    streamline_sq = float(np.einsum("kq,kq->", w_area, stream**2))

    jump_sq = 0.0
    if len(cut.face_ids):
        all_grads, _ = tet_gradients(mesh.vertices[mesh.tets[cut.active_tets]])
        rows = np.searchsorted(cut.active_tets, cut.face_pairs)
        du = np.einsum(
            "fid,fi->fd", all_grads[rows[:, 0]], u[dof_map.dofs_of(mesh.tets[cut.face_pairs[:, 0]])]
        ) - np.einsum(
            "fid,fi->fd", all_grads[rows[:, 1]], u[dof_map.dofs_of(mesh.tets[cut.face_pairs[:, 1]])]
        )
        jumps = np.einsum("fd,fd->f", du, cut.face_normals)
        jump_sq = float(np.dot(cut.face_areas, jumps**2))

    return ErrorReport(
        h=h,
        l2_error=float(np.sqrt(l2_sq)),
        energy_error=float(np.sqrt(l2_sq + h * streamline_sq + h * jump_sq)),
        grad_error=float(np.sqrt(grad_sq)),
        streamline_sq=streamline_sq,
        jump_sq=jump_sq,
    )


def eoc(errors, hs):
    """Empirical orders of convergence between consecutive refinement levels.

    Returns a list of length len(errors) whose first entry is None; a rate
    is also None wherever an error vanishes (undefined logarithm).
    """
    if len(errors) != len(hs):
        raise ValueError("errors and hs must have equal length")
    rates = [None]
    for i in range(1, len(errors)):
        if hs[i] >= hs[i - 1]:
            raise ValueError("mesh sizes must be strictly decreasing")
        if errors[i] == 0.0 or errors[i - 1] == 0.0:
            rates.append(None)
        else:
            rates.append(
                float(np.log(errors[i - 1] / errors[i]) / np.log(hs[i - 1] / hs[i]))
            )
    return rates


@dataclass(frozen=True)
class ConvergenceRow:
    h: float
    n_dofs: int
    l2_error: float
    energy_error: float
    grad_error: float
    eoc_l2: float | None
    eoc_energy: float | None
    eoc_grad: float | None


@dataclass
class ConvergenceTable:
    """Refinement study rows with rates between consecutive levels."""

    rows: list

    @classmethod
    def from_reports(cls, hs, n_dofs, reports):
        l2 = [r.l2_error for r in reports]
        en = [r.energy_error for r in reports]
        gr = [r.grad_error for r in reports]
        r_l2, r_en, r_gr = eoc(l2, hs), eoc(en, hs), eoc(gr, hs)
        rows = [
            ConvergenceRow(
                h=hs[i],
                n_dofs=n_dofs[i],
                l2_error=l2[i],
                energy_error=en[i],
                grad_error=gr[i],
                eoc_l2=r_l2[i],
                eoc_energy=r_en[i],
                eoc_grad=r_gr[i],
            )
            for i in range(len(hs))
        ]
        return cls(rows=rows)


@dataclass(frozen=True)
class ConditionReport:
    """Extreme singular values and their ratio, with iteration diagnostics."""

    sigma_max: float
    sigma_min: float
    kappa: float
    iterations_max: int
    iterations_min: int
    tol: float


def _power_iteration(apply_op, n, tol, max_iterations, what):
    v = np.ones(n) / np.sqrt(n)
    lam_prev = None
    for k in range(1, max_iterations + 1):
        w = apply_op(v)
        lam = float(np.dot(v, w))
        norm = np.linalg.norm(w)
        if norm == 0.0:
            raise EstimatorError(f"{what}: iterate collapsed to zero", 0.0, k)
        v = w / norm
        if lam_prev is not None and abs(lam - lam_prev) < tol * abs(lam):
            return lam, k
        lam_prev = lam
    raise EstimatorError(
        f"{what}: no convergence after {max_iterations} iterations",
        last_estimate=lam_prev,
        iterations=max_iterations,
    )


def condition_number(A, tol=1e-8, max_iterations=5000):
    """Spectral condition number sigma_max/sigma_min of a sparse matrix.

    sigma_max from power iteration on A^T A, sigma_min from inverse power
    iteration applying A^{-1} A^{-T} through the LU factors; both start
    from the normalized all-ones vector and stop when the eigenvalue
    estimate changes by less than tol relatively.
    """
    n = A.shape[0]
    csr = A.tocsr()
    csc = A.tocsc()
    try:
        lu = splu(csc)
    except RuntimeError as exc:
        raise SolverError(f"condition estimate needs a factorizable matrix: {exc}") from exc

    def fwd(v):
        return csr.T @ (csr @ v)

    def inv(v):
        return lu.solve(lu.solve(v, trans="T"), trans="N")

    lam_max, it_max = _power_iteration(fwd, n, tol, max_iterations, "sigma_max estimate")
    mu_max, it_min = _power_iteration(inv, n, tol, max_iterations, "sigma_min estimate")
    sigma_max = float(np.sqrt(lam_max))
    sigma_min = float(1.0 / np.sqrt(mu_max))
    return ConditionReport(
        sigma_max=sigma_max,
        sigma_min=sigma_min,
        kappa=sigma_max / sigma_min,
        iterations_max=it_max,
        iterations_min=it_min,
        tol=tol,
    )


def condition_number_dense(A):
    """Dense SVD condition number, the small-problem oracle."""
    s = np.linalg.svd(np.asarray(A.todense()), compute_uv=False)
    return float(s[0] / s[-1])
