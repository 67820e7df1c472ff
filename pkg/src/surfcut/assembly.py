"""Assembly of the stabilized surface convection system.

The bilinear form is the surface convection-reaction form plus the
gradient-jump penalty c_F h ([n_F . grad v], [n_F . grad w]) over full
interior faces between cut tets.  Rows of the assembled matrix are test
functions, so A[i, j] holds the form evaluated at (trial phi_j, test
phi_i) and the discrete system is A u = b.

Coefficients are discretized either by evaluating the exact fields at
lifted quadrature points and projecting onto the facet plane (default), or
by a per-facet linear L2 projection of the Piola-transported velocity
field (kept for A/B comparison).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.sparse import coo_matrix

from .errors import ConfigError, MeshError
from .quadrature import tet_gradients, triangle_rule

POINTWISE = "pointwise-projected"
PIOLA = "piola-l2"
_MODES = (POINTWISE, PIOLA)


@dataclass(frozen=True)
class AssemblyParams:
    """Assembly options: stabilization strength, coefficient discretization,
    and quadrature degrees (cubic-exact for mass/convection, quadratic for
    the load)."""

    c_F: float = 1e-2
    coefficient_mode: str = POINTWISE
    mass_degree: int = 3
    load_degree: int = 2
    projection_degree: int = 4

    def __post_init__(self):
        if self.c_F < 0:
            raise ConfigError(f"stabilization parameter c_F must be >= 0, got {self.c_F}")
        if self.coefficient_mode not in _MODES:
            raise ConfigError(
                f"unknown coefficient_mode {self.coefficient_mode!r}; "
                f"expected one of {_MODES}"
            )


@dataclass(frozen=True)
class DofMap:
    """Bijection between active background vertices and contiguous DOFs."""

    vertex_ids: np.ndarray  # ascending

    @property
    def n_dofs(self):
        return len(self.vertex_ids)

    def dofs_of(self, vertex_ids):
        return np.searchsorted(self.vertex_ids, vertex_ids)


@dataclass
class LinearSystem:
    """Sparse stabilized system over the active DOFs (rows test functions)."""

    A: object  # csr_matrix
    b: np.ndarray
    dof_map: DofMap
    h: float
    params: AssemblyParams


@dataclass(frozen=True)
class AssumptionReport:
    """Discrete counterparts of the method assumptions.

    coercivity_min is the minimum over facet quadrature points of
    alpha_h - div_Gh(beta_h)/2 with the per-facet linear velocity
    representation; edge_jump_max is the largest conormal jump of beta_h
    over the shared facet edges (None when the edge set is empty).
    """

    coercivity_min: float
    edge_jump_max: float | None
    n_edges: int

    @property
    def applicable(self):
        return self.n_edges > 0


def _facet_tet_data(cut):
    """Per-facet parent-tet vertex ids, coordinates, and P1 gradients."""
    mesh = cut.mesh
    grads, _ = tet_gradients(mesh.vertices[mesh.tets[cut.active_tets]])
    rows = np.searchsorted(cut.active_tets, cut.facet_tets)
    tet_ids = mesh.tets[cut.facet_tets]  # (K, 4)
    tet_coords = mesh.vertices[tet_ids]  # (K, 4, 3)
    return tet_ids, tet_coords, grads[rows]


def _p1_values(tet_coords, points):
    """Barycentric P1 values of points (K, Q, 3) in their tets (K, 4, 3)."""
    edges = np.swapaxes(tet_coords[:, 1:] - tet_coords[:, :1], -1, -2)  # (K,3,3)
    rhs = np.swapaxes(points - tet_coords[:, None, 0], 1, 2)  # (K, 3, Q)
    lam = np.swapaxes(np.linalg.solve(edges, rhs), 1, 2)  # (K, Q, 3)
    lam0 = 1.0 - lam.sum(axis=-1, keepdims=True)
    return np.concatenate([lam0, lam], axis=-1)


def _project_plane(vectors, normals):
    return vectors - np.einsum("...i,...i->...", vectors, normals)[..., None] * normals


def _plane_basis(normals):
    """Deterministic orthonormal basis of the planes orthogonal to normals:
    xi1 from the coordinate axis with the smallest normal component (lowest
    index on ties), xi2 = n x xi1."""
    k = np.argmin(np.abs(normals), axis=-1)
    xi1 = np.cross(np.eye(3)[k], normals)
    xi1 = xi1 / np.linalg.norm(xi1, axis=-1, keepdims=True)
    return xi1, np.cross(normals, xi1)


def _beta_pointwise(problem, points, facet_normals):
    """Exact velocity at lifted points, projected onto the facet plane."""
    vals = problem.beta_ext(points)
    return _project_plane(vals, facet_normals[:, None, :])


def _piola_transported(problem, points, facet_normals):
    """The Piola-transported velocity |B| B^+ beta(p(x)) at facet points."""
    flat = points.reshape(-1, 3)
    n_rep = np.repeat(facet_normals, points.shape[1], axis=0)
    bm = problem.surface.b_map(flat, n_rep)
    beta_exact = problem.beta_ext(flat)
    g = bm.det_B[:, None] * np.einsum("pij,pj->pi", bm.B_inv, beta_exact)
    return g.reshape(points.shape)


def _projection_coeffs(rule, values):
    """L2 projection onto the linear space of each triangle, in its own
    barycentric basis.  The reference mass matrix is geometry-independent,
    so the coefficients are well defined for arbitrarily thin facets."""
    lam = rule.points  # (Q, 3) doubles as basis values at the rule points
    mass = np.einsum("q,qa,qb->ab", rule.weights, lam, lam)
    rhs = np.einsum("q,qa,kqi->kai", rule.weights, lam, values)
    return np.einsum("ab,kbi->kai", np.linalg.inv(mass), rhs)  # (K, 3, 3)


def _beta_piola_coeffs(cut, problem, degree):
    """Barycentric coefficients of the per-facet linear L2 projection of the
    Piola-transported velocity, integrated with the rule of given degree."""
    rule = triangle_rule(degree)
    pts = rule.physical_points(cut.facet_vertices)
    g = _piola_transported(problem, pts, cut.facet_normals)
    return _projection_coeffs(rule, g)


def coefficient_beta_h(problem, cut, points, mode=POINTWISE, projection_degree=4,
                       barycentric=None):
    """Discrete velocity beta_h at facet points of shape (K, Q, 3).

    Pointwise mode evaluates the exact field at the lifted points and
    projects onto the facet plane.  Piola mode evaluates the per-facet
    linear L2 projection of the Piola-transported field; pass the points'
    barycentric coordinates when they are known (quadrature rules), else
    they are recovered by a least-squares inversion of the facet triangle.
    """
    if mode == POINTWISE:
        return _beta_pointwise(problem, points, cut.facet_normals)
    if mode != PIOLA:
        raise ConfigError(f"unknown coefficient_mode {mode!r}")
    coeff = _beta_piola_coeffs(cut, problem, projection_degree)
    if barycentric is None:
        tri = cut.facet_vertices
        edges = tri[:, 1:] - tri[:, :1]  # (K, 2, 3)
        d = points - tri[:, None, 0, :]
        lam12 = np.einsum("kdc,kqd->kqc", np.linalg.pinv(edges), d)
        lam0 = 1.0 - lam12.sum(axis=-1, keepdims=True)
        barycentric = np.concatenate([lam0, lam12], axis=-1)
    if barycentric.ndim == 2:
        return np.einsum("qa,kai->kqi", barycentric, coeff)
    return np.einsum("kqa,kai->kqi", barycentric, coeff)


@dataclass(frozen=True)
class _LinearFacetField:
    """Per-facet linear vector field: value at a reference point plus a
    constant Jacobian tangent to the facet plane (components by rows)."""

    center: np.ndarray  # (K, 3)
    value: np.ndarray  # (K, 3)
    jacobian: np.ndarray  # (K, 3, 3)


def _stencil_triangles(cut):
    """Regular triangles of circumradius h/2 in the facet planes, centered
    at the facet centroids.

    Cut facets can degenerate to slivers on which a linear fit cannot
    resolve the cross direction; the regular one-mesh-width stencil keeps
    the fitted representation well conditioned for every facet and stays
    inside the tubular neighborhood where lifting is defined.
    """
    xi1, xi2 = _plane_basis(cut.facet_normals)
    center = cut.facet_vertices.mean(axis=1)
    radius = 0.5 * cut.mesh.h
    corners = []
    for angle in (0.5 * np.pi, 7.0 * np.pi / 6.0, 11.0 * np.pi / 6.0):
        corners.append(
            center + radius * (np.cos(angle) * xi1 + np.sin(angle) * xi2)
        )
    return np.stack(corners, axis=1)  # (K, 3, 3)


def _linear_representation(cut, field_at, degree):
    """Linear facet field fitted through quadrature values on the regular
    in-plane stencil (L2 projection on the stencil triangle)."""
    stencil = _stencil_triangles(cut)
    rule = triangle_rule(degree)
    pts = rule.physical_points(stencil)
    coeff = _projection_coeffs(rule, field_at(pts))

    edges = stencil[:, 1:] - stencil[:, :1]
    grad12 = np.swapaxes(np.linalg.pinv(edges), -1, -2)  # (K, 2, 3)
    grads = np.concatenate([-grad12.sum(axis=1, keepdims=True), grad12], axis=1)
    return _LinearFacetField(
        center=stencil.mean(axis=1),
        value=coeff.mean(axis=1),
        jacobian=np.einsum("kai,kaj->kij", coeff, grads),
    )


def build_dof_map(cut):
    """DOFs are exactly the vertices of the cut tets."""
    vertex_ids = np.unique(cut.mesh.tets[cut.active_tets])
    return DofMap(vertex_ids=vertex_ids)


def _facet_blocks(cut, problem, params):
    """Local facet contributions: (tet vertex ids, 4x4 blocks, load rows)."""
    tet_ids, tet_coords, grads = _facet_tet_data(cut)
    n_h = cut.facet_normals
    tangential = _project_plane(grads, n_h[:, None, :])

    rule_m = triangle_rule(params.mass_degree)
    pts_m = rule_m.physical_points(cut.facet_vertices)
    phi_m = _p1_values(tet_coords, pts_m)
    lifted = problem.surface.closest_point(pts_m.reshape(-1, 3)).reshape(pts_m.shape)
    alpha_m = problem.alpha(lifted)
    beta_m = coefficient_beta_h(
        problem,
        cut,
        pts_m,
        params.coefficient_mode,
        params.projection_degree,
        barycentric=rule_m.points,
    )

    conv = np.einsum("kqd,kjd->kqj", beta_m, tangential)
    a_loc = np.einsum("q,kqi,kqj->kij", rule_m.weights, phi_m, conv)
    a_loc += np.einsum("q,kq,kqi,kqj->kij", rule_m.weights, alpha_m, phi_m, phi_m)
    a_loc *= cut.facet_areas[:, None, None]

    rule_l = triangle_rule(params.load_degree)
    pts_l = rule_l.physical_points(cut.facet_vertices)
    phi_l = _p1_values(tet_coords, pts_l)
    f_l = problem.rhs_ext(pts_l.reshape(-1, 3)).reshape(pts_l.shape[:2])
    b_loc = np.einsum("q,kq,kqi->ki", rule_l.weights, f_l, phi_l)
    b_loc *= cut.facet_areas[:, None]

    return tet_ids, a_loc, b_loc


def _jump_blocks(cut, params):
    """Local stabilization blocks c_F h |F| [n_F.grad phi_j][n_F.grad phi_i]
    over the two tets of each interior face (8 rows/cols, shared vertices
    accumulate)."""
    mesh = cut.mesh
    grads, _ = tet_gradients(mesh.vertices[mesh.tets[cut.active_tets]])
    rows = np.searchsorted(cut.active_tets, cut.face_pairs)  # (F, 2)
    g1 = grads[rows[:, 0]]  # (F, 4, 3)
    g2 = grads[rows[:, 1]]
    n_F = cut.face_normals
    jump = np.concatenate(
        [
            np.einsum("fid,fd->fi", g1, n_F),
            -np.einsum("fid,fd->fi", g2, n_F),
        ],
        axis=1,
    )  # (F, 8)
    scale = params.c_F * mesh.h * cut.face_areas
    blocks = np.einsum("f,fi,fj->fij", scale, jump, jump)
    vids = np.concatenate(
        [mesh.tets[cut.face_pairs[:, 0]], mesh.tets[cut.face_pairs[:, 1]]], axis=1
    )  # (F, 8)
    return vids, blocks


def assemble(cut, problem, params=None):
    """Assemble the stabilized system over the active DOFs.

    Facet contributions are accumulated in ascending facet order, then face
    contributions in ascending face order, so the sparse structure and every
    entry are bitwise reproducible.
    """
    if params is None:
        params = AssemblyParams()
    if cut.n_facets == 0:
        raise MeshError("cannot assemble on an empty cut")

    dof_map = build_dof_map(cut)
    n = dof_map.n_dofs

    tet_ids, a_loc, b_loc = _facet_blocks(cut, problem, params)
    dofs = dof_map.dofs_of(tet_ids)  # (K, 4)

    rows = [np.broadcast_to(dofs[:, :, None], a_loc.shape).ravel()]
    cols = [np.broadcast_to(dofs[:, None, :], a_loc.shape).ravel()]
    data = [a_loc.ravel()]

    if len(cut.face_ids) and params.c_F != 0.0:
        jvids, jblocks = _jump_blocks(cut, params)
        jdofs = dof_map.dofs_of(jvids)
        rows.append(np.broadcast_to(jdofs[:, :, None], jblocks.shape).ravel())
        cols.append(np.broadcast_to(jdofs[:, None, :], jblocks.shape).ravel())
        data.append(jblocks.ravel())

    A = coo_matrix(
        (np.concatenate(data), (np.concatenate(rows), np.concatenate(cols))),
        shape=(n, n),
    ).tocsr()

    b = np.zeros(n)
    np.add.at(b, dofs, b_loc)

    return LinearSystem(A=A, b=b, dof_map=dof_map, h=cut.mesh.h, params=params)


def check_method_assumptions(cut, problem, params=None):
    """Evaluate the discrete coercivity margin and the conormal jumps.

    The velocity's surface divergence comes from the per-facet linear
    representation (fitted through quadrature values of the mode's
    transported field on the regular in-plane stencil) and is constant per
    facet; alpha is sampled at the facet quadrature points.  The conormal
    jump is evaluated at the endpoints and midpoint of every shared edge.
    """
    if params is None:
        params = AssemblyParams()
    rule = triangle_rule(params.projection_degree)
    pts = rule.physical_points(cut.facet_vertices)

    if params.coefficient_mode == PIOLA:
        field_at = lambda p: _piola_transported(problem, p, cut.facet_normals)
    else:
        field_at = lambda p: _beta_pointwise(problem, p, cut.facet_normals)
    linear = _linear_representation(cut, field_at, params.projection_degree)

    n_h = cut.facet_normals
    proj = np.eye(3) - np.einsum("ki,kj->kij", n_h, n_h)
    surf_jac = proj @ linear.jacobian @ proj
    div = np.trace(surf_jac, axis1=-2, axis2=-1)

    lifted = problem.surface.closest_point(pts.reshape(-1, 3)).reshape(pts.shape)
    alpha = problem.alpha(lifted)
    coercivity_min = float((alpha - 0.5 * div[:, None]).min())

    if cut.n_edges == 0:
        return AssumptionReport(
            coercivity_min=coercivity_min, edge_jump_max=None, n_edges=0
        )

    mids = cut.edge_points.mean(axis=1, keepdims=True)
    eval_pts = np.concatenate([cut.edge_points, mids], axis=1)  # (E, 3, 3)
    jump = np.zeros(eval_pts.shape[:2])
    piola_coeff = (
        _beta_piola_coeffs(cut, problem, params.projection_degree)
        if params.coefficient_mode == PIOLA
        else None
    )
    for side in (0, 1):
        fids = cut.edge_facets[:, side]
        if piola_coeff is not None:
            # the endpoints are facet vertices, so the barycentric weights
            # are unit vectors and the projection evaluates exactly
            bary = np.zeros(eval_pts.shape[:2] + (3,))
            rows = np.arange(len(fids))
            bary[rows, 0, cut.edge_slots[:, side, 0]] = 1.0
            bary[rows, 1, cut.edge_slots[:, side, 1]] = 1.0
            bary[:, 2, :] = 0.5 * (bary[:, 0, :] + bary[:, 1, :])
            vals = np.einsum("eqa,eai->eqi", bary, piola_coeff[fids])
        else:
            lifted_e = problem.surface.closest_point(
                eval_pts.reshape(-1, 3)
            ).reshape(eval_pts.shape)
            vals = _project_plane(
                problem.beta_field(lifted_e), cut.facet_normals[fids][:, None, :]
            )
        jump += np.einsum("eqd,ed->eq", vals, cut.edge_conormals[:, side])

    return AssumptionReport(
        coercivity_min=coercivity_min,
        edge_jump_max=float(np.abs(jump).max()),
        n_edges=cut.n_edges,
    )


def export_matrix_market(A, path):
    """Write the matrix in MatrixMarket coordinate format (1-based indices,
    17 significant digits)."""
    coo = A.tocoo()
    with open(path, "w") as fh:
        fh.write("%%MatrixMarket matrix coordinate real general\n")
        fh.write(f"{coo.shape[0]} {coo.shape[1]} {coo.nnz}\n")
        for i, j, v in zip(coo.row, coo.col, coo.data):
            fh.write(f"{i + 1} {j + 1} {v:.17g}\n")


def export_vector(v, path):
    """Write a dense vector as plain text, one value per line."""
    with open(path, "w") as fh:
        for x in v:
            fh.write(f"{x:.17g}\n")
