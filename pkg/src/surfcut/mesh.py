"""Structured tetrahedral background mesh and cut-surface extraction.

The background box is tiled by cubes, each split into six congruent
tetrahedra along the main diagonal (Kuhn subdivision).  The discrete
surface is the zero level set of the nodal interpolant of the signed
distance, extracted per tetrahedron as one triangle (1-3 sign split) or a
planar quad split into two triangles (2-2 split).

Extraction also builds the active topology: cut tetrahedra, the full
interior faces between them (stabilization support), and the segments
shared by cut polygons of face-adjacent tetrahedra (assumption
diagnostics only).
"""

from __future__ import annotations

from dataclasses import dataclass
from itertools import permutations

import numpy as np

from .errors import ConfigError, MeshError
from .quadrature import tet_gradients, triangle_rule

# local faces opposite each tet vertex
_TET_FACES = np.array([[1, 2, 3], [0, 2, 3], [0, 1, 3], [0, 1, 2]])
# canonical tet edge enumeration, used for quad diagonal tie-breaks
_TET_EDGES = [(0, 1), (0, 2), (0, 3), (1, 2), (1, 3), (2, 3)]
_EDGE_INDEX = {e: i for i, e in enumerate(_TET_EDGES)}


def _kuhn_patterns():
    """Vertex offset patterns of the six tets per cube, positively oriented."""
    patterns = []
    for perm in sorted(permutations(range(3))):
        offs = [np.zeros(3, dtype=np.int64)]
        for axis in perm:
            step = offs[-1].copy()
            step[axis] += 1
            offs.append(step)
        corners = np.array(offs)
        # fix orientation: odd permutations produce negative volume
        e = corners[1:] - corners[0]
        if np.linalg.det(e) < 0:
            corners[[2, 3]] = corners[[3, 2]]
        patterns.append(corners)
    return np.array(patterns)  # (6, 4, 3)


_KUHN = _kuhn_patterns()


@dataclass
class BackgroundMesh:
    """Structured tetrahedral mesh of a box.

    Vertices are ordered lexicographically by grid index (x-major), tets by
    cube index then Kuhn pattern.  ``faces`` holds each distinct triangle
    once as a sorted vertex triple; ``face_tets`` holds the owning tet and
    the neighbor tet (-1 on the box boundary).
    """

    box_min: np.ndarray
    box_max: np.ndarray
    cells: tuple
    h: float
    vertices: np.ndarray
    tets: np.ndarray
    faces: np.ndarray
    face_tets: np.ndarray

    @property
    def n_vertices(self):
        return len(self.vertices)

    @property
    def n_tets(self):
        return len(self.tets)


def build_background(box_min, box_max, cells):
    """Build the Kuhn-subdivided background mesh.

    Args:
        box_min, box_max: opposite box corners, length-3.
        cells: cells per axis, three positive integers producing the same
            spacing h on every axis.

    Raises:
        ConfigError: non-positive cell counts, empty box, or anisotropic h.
    """
    box_min = np.asarray(box_min, dtype=float)
    box_max = np.asarray(box_max, dtype=float)
    cells = tuple(int(n) for n in cells)
    if any(n < 1 for n in cells):
        raise ConfigError(f"cells per axis must be positive, got {cells}")
    lengths = box_max - box_min
    if np.any(lengths <= 0):
        raise ConfigError("box_max must exceed box_min on every axis")
    spacings = lengths / np.array(cells)
    h = float(spacings[0])
    if np.any(np.abs(spacings - h) > 1e-12 * h):
        raise ConfigError(
            f"anisotropic mesh spacing {spacings.tolist()}; the mesh parameter "
            "must be equal on all axes"
        )

    nx, ny, nz = cells
    axes = [np.linspace(box_min[d], box_max[d], cells[d] + 1) for d in range(3)]
    grid = np.meshgrid(*axes, indexing="ij")
    vertices = np.stack([g.reshape(-1) for g in grid], axis=-1)

    vy, vz = ny + 1, nz + 1
    ii, jj, kk = np.meshgrid(
        np.arange(nx), np.arange(ny), np.arange(nz), indexing="ij"
    )
    base = (ii * vy * vz + jj * vz + kk).reshape(-1)  # (cubes,)
    offsets = _KUHN[:, :, 0] * vy * vz + _KUHN[:, :, 1] * vz + _KUHN[:, :, 2]
    tets = (base[:, None, None] + offsets[None, :, :]).reshape(-1, 4)

    all_faces = np.sort(tets[:, _TET_FACES], axis=-1).reshape(-1, 3)
    faces, inverse = np.unique(all_faces, axis=0, return_inverse=True)
    order = np.argsort(inverse, kind="stable")
    counts = np.bincount(inverse, minlength=len(faces))
    if counts.max() > 2:
        raise MeshError("face shared by more than two tets")
    starts = np.concatenate([[0], np.cumsum(counts)])
    incident_tets = order // 4  # appearance order is ascending tet id
    face_tets = np.full((len(faces), 2), -1, dtype=np.int64)
    face_tets[:, 0] = incident_tets[starts[:-1]]
    second = counts == 2
    face_tets[second, 1] = incident_tets[starts[:-1][second] + 1]

    return BackgroundMesh(
        box_min=box_min,
        box_max=box_max,
        cells=cells,
        h=h,
        vertices=vertices,
        tets=tets,
        faces=faces,
        face_tets=face_tets,
    )


@dataclass
class LevelSetField:
    """Nodal values of the signed distance on the background vertices."""

    nodal_values: np.ndarray


def interpolate_levelset(mesh, surface):
    """Nodal interpolant of the signed distance with the zero-shift rule.

    Values with magnitude below 1e-12 h are replaced by +1e-12 h so no
    stored value is exactly zero and the extracted surface never coincides
    with mesh entities.
    """
    values = np.array(surface.sdf(mesh.vertices), dtype=float)
    shift = 1e-12 * mesh.h
    values[np.abs(values) < shift] = shift
    return LevelSetField(nodal_values=values)


@dataclass(frozen=True)
class CutFacet:
    """One triangle of the discrete surface inside its parent tet."""

    parent_tet: int
    vertices: np.ndarray
    normal: np.ndarray
    area: float


@dataclass
class CutSurfaceMesh:
    """Extracted discrete surface with its active topology.

    Facet triangles are grouped by parent tet in extraction order.  Faces
    are the full interior background faces between two active tets; edges
    are the segments shared by cut polygons of face-adjacent tets, with one
    in-plane outward conormal per side.
    """

    mesh: BackgroundMesh
    facet_tets: np.ndarray  # (K,) parent tet ids
    facet_vertices: np.ndarray  # (K, 3, 3)
    facet_normals: np.ndarray  # (K, 3)
    facet_areas: np.ndarray  # (K,)
    active_tets: np.ndarray  # ascending tet ids
    face_ids: np.ndarray  # (F,) indices into mesh.faces
    face_pairs: np.ndarray  # (F, 2) active tet ids per face
    face_normals: np.ndarray  # (F, 3)
    face_areas: np.ndarray  # (F,)
    edge_points: np.ndarray  # (E, 2, 3) segment endpoints
    edge_tets: np.ndarray  # (E, 2)
    edge_facets: np.ndarray  # (E, 2) facet indices per side
    edge_conormals: np.ndarray  # (E, 2, 3)
    edge_slots: np.ndarray  # (E, 2, 2) endpoint vertex slots in each side's facet

    @property
    def n_facets(self):
        return len(self.facet_tets)

    @property
    def n_edges(self):
        return len(self.edge_tets)

    def facet(self, i):
        return CutFacet(
            parent_tet=int(self.facet_tets[i]),
            vertices=self.facet_vertices[i],
            normal=self.facet_normals[i],
            area=float(self.facet_areas[i]),
        )

    def total_area(self):
        return float(self.facet_areas.sum())


def _crossing(vertices, values, ga, gb):
    """Zero crossing on the segment between global vertices ga and gb.

    Canonicalized to the lower vertex id first so the same edge yields a
    bitwise identical point from every incident tet and face.
    """
    if ga > gb:
        ga, gb = gb, ga
    t = values[ga] / (values[ga] - values[gb])
    return vertices[ga] + t * (vertices[gb] - vertices[ga])


def _oriented(p0, p1, p2, n_h):
    if np.dot(np.cross(p1 - p0, p2 - p0), n_h) < 0.0:
        p1, p2 = p2, p1
    return np.array([p0, p1, p2])


def _extract_tet_facets(gl, values, vertices, n_h):
    """Facet triangles of one cut tet, each as (local crossing edges, coords)."""
    local_vals = values[gl]
    neg = np.nonzero(local_vals < 0)[0]
    pos = np.nonzero(local_vals >= 0)[0]
    lone_side, other_side = (neg, pos) if len(neg) <= len(pos) else (pos, neg)

    if len(lone_side) == 1:
        a = lone_side[0]
        pts = [_crossing(vertices, values, gl[a], gl[o]) for o in other_side]
        return [_oriented(*pts, n_h)]

    (a, b), (c, d) = lone_side, other_side
    corners = [
        _crossing(vertices, values, gl[a], gl[c]),
        _crossing(vertices, values, gl[a], gl[d]),
        _crossing(vertices, values, gl[b], gl[d]),
        _crossing(vertices, values, gl[b], gl[c]),
    ]
    corner_edges = [(a, c), (a, d), (b, d), (b, c)]
    d02 = np.linalg.norm(corners[0] - corners[2])
    d13 = np.linalg.norm(corners[1] - corners[3])
    if d02 == d13:
        # tie: pick the diagonal containing the lowest-index crossing edge
        rank = [_EDGE_INDEX[tuple(sorted(e))] for e in corner_edges]
        use02 = min(rank[0], rank[2]) < min(rank[1], rank[3])
    else:
        use02 = d02 < d13
    q0, q1, q2, q3 = corners
    if use02:
        tris = [(q0, q1, q2), (q0, q2, q3)]
    else:
        tris = [(q1, q2, q3), (q1, q3, q0)]
    return [_oriented(*t, n_h) for t in tris]


def _face_geometry(mesh, face_ids):
    tri = mesh.vertices[mesh.faces[face_ids]]
    cr = np.cross(tri[:, 1] - tri[:, 0], tri[:, 2] - tri[:, 0])
    norms = np.linalg.norm(cr, axis=-1)
    return cr / norms[:, None], 0.5 * norms


def extract_cut_surface(mesh, field):
    """Extract the discrete surface and its active topology.

    Facets whose nodal sign pattern is 1-3 become one triangle through the
    edge crossings; 2-2 patterns become a planar quad split along the
    shorter diagonal.  Normals point toward positive level-set values.  No
    facet is culled however small; the stabilization term is the remedy for
    small cuts, not mesh filtering.
    """
    values = np.asarray(field.nodal_values, dtype=float)
    if np.any(values == 0.0):
        raise MeshError("level-set field contains exact zeros; apply the zero shift")

    tet_vals = values[mesh.tets]
    n_neg = (tet_vals < 0).sum(axis=1)
    active = np.nonzero((n_neg > 0) & (n_neg < 4))[0]

    if len(active) == 0:
        empty3 = np.zeros((0, 3))
        return CutSurfaceMesh(
            mesh=mesh,
            facet_tets=np.zeros(0, dtype=np.int64),
            facet_vertices=np.zeros((0, 3, 3)),
            facet_normals=empty3,
            facet_areas=np.zeros(0),
            active_tets=active,
            face_ids=np.zeros(0, dtype=np.int64),
            face_pairs=np.zeros((0, 2), dtype=np.int64),
            face_normals=empty3,
            face_areas=np.zeros(0),
            edge_points=np.zeros((0, 2, 3)),
            edge_tets=np.zeros((0, 2), dtype=np.int64),
            edge_facets=np.zeros((0, 2), dtype=np.int64),
            edge_conormals=np.zeros((0, 2, 3)),
            edge_slots=np.zeros((0, 2, 2), dtype=np.int64),
        )

    grads, _ = tet_gradients(mesh.vertices[mesh.tets[active]])
    grad_rho = np.einsum("ti,tid->td", tet_vals[active], grads)
    normals = grad_rho / np.linalg.norm(grad_rho, axis=-1, keepdims=True)

    facet_tets = []
    facet_tris = []
    facet_norms = []
    tet_facet_ids = {}
    for row, tid in enumerate(active):
        tris = _extract_tet_facets(mesh.tets[tid], values, mesh.vertices, normals[row])
        tet_facet_ids[tid] = list(range(len(facet_tets), len(facet_tets) + len(tris)))
        for tri in tris:
            facet_tets.append(tid)
            facet_tris.append(tri)
            facet_norms.append(normals[row])
    facet_vertices = np.array(facet_tris)
    facet_normals = np.array(facet_norms)
    cr = np.cross(
        facet_vertices[:, 1] - facet_vertices[:, 0],
        facet_vertices[:, 2] - facet_vertices[:, 0],
    )
    facet_areas = 0.5 * np.linalg.norm(cr, axis=-1)

    active_mask = np.zeros(mesh.n_tets, dtype=bool)
    active_mask[active] = True
    ft = mesh.face_tets
    both = (ft[:, 1] >= 0) & active_mask[ft[:, 0]] & active_mask[ft[:, 1]]
    face_ids = np.nonzero(both)[0]
    face_pairs = ft[face_ids]
    face_normals, face_areas = (
        _face_geometry(mesh, face_ids) if len(face_ids) else (np.zeros((0, 3)), np.zeros(0))
    )

    edges = _build_facet_edges(
        mesh, values, face_ids, face_pairs, tet_facet_ids,
        facet_vertices, facet_normals,
    )

    return CutSurfaceMesh(
        mesh=mesh,
        facet_tets=np.array(facet_tets, dtype=np.int64),
        facet_vertices=facet_vertices,
        facet_normals=facet_normals,
        facet_areas=facet_areas,
        active_tets=active,
        face_ids=face_ids,
        face_pairs=face_pairs,
        face_normals=face_normals,
        face_areas=face_areas,
        **edges,
    )


def _find_owning_facet(candidates, facet_vertices, e0, e1):
    """Facet triangle (among the parent tet's) containing both endpoints,
    plus the endpoints' vertex slots.  Matching is by exact coordinate
    equality: crossing points on a shared edge are bitwise identical."""
    for fid in candidates:
        tri = facet_vertices[fid]
        hits0 = np.nonzero(np.all(tri == e0, axis=1))[0]
        hits1 = np.nonzero(np.all(tri == e1, axis=1))[0]
        if len(hits0) and len(hits1):
            return fid, int(hits0[0]), int(hits1[0])
    return -1, -1, -1


def _build_facet_edges(mesh, values, face_ids, face_pairs, tet_facet_ids,
                       facet_vertices, facet_normals):
    """Shared cut-polygon segments across interior faces, with conormals.

    The segment direction is taken from the face data (zero line of the
    P1 restriction), which stays accurate for arbitrarily short segments;
    each side's conormal is oriented outward through the face.
    """
    edge_points = []
    edge_tets = []
    edge_facets = []
    edge_conormals = []
    edge_slots = []
    for fi, fid in enumerate(face_ids):
        tri_ids = mesh.faces[fid]
        vals3 = values[tri_ids]
        neg = np.nonzero(vals3 < 0)[0]
        if len(neg) in (0, 3):
            continue
        pos = np.nonzero(vals3 >= 0)[0]
        lone, others = (neg, pos) if len(neg) == 1 else (pos, neg)
        a = lone[0]
        e0 = _crossing(mesh.vertices, values, tri_ids[a], tri_ids[others[0]])
        e1 = _crossing(mesh.vertices, values, tri_ids[a], tri_ids[others[1]])

        # segment direction from the in-plane level-set gradient
        coords = mesh.vertices[tri_ids]
        g2, _ = np.linalg.lstsq(
            coords[1:] - coords[0], vals3[1:] - vals3[0], rcond=None
        )[:2]
        n_face = np.cross(coords[1] - coords[0], coords[2] - coords[0])
        n_face /= np.linalg.norm(n_face)
        t_e = np.cross(n_face, g2)
        t_e /= np.linalg.norm(t_e)

        sides_tets = face_pairs[fi]
        sides_facets = []
        sides_conormals = []
        sides_slots = []
        for tid in sides_tets:
            owner, slot0, slot1 = _find_owning_facet(
                tet_facet_ids[tid], facet_vertices, e0, e1
            )
            if owner < 0:
                raise MeshError(
                    f"cut polygons of face-adjacent tets {sides_tets.tolist()} "
                    "do not share the segment bitwise (watertightness violated)"
                )
            n_h = facet_normals[owner]
            co = np.cross(t_e, n_h)
            co /= np.linalg.norm(co)
            # orient outward: crossing the edge leaves the tet through this face
            opp = [v for v in mesh.tets[tid] if v not in tri_ids][0]
            w = coords.mean(axis=0) - mesh.vertices[opp]
            outward = n_face if np.dot(n_face, w) > 0 else -n_face
            side = np.dot(co, outward)
            if abs(side) < 1e-9:
                # facet nearly parallel to the face: use the polygon centroid
                side = np.dot(co, 0.5 * (e0 + e1) - facet_vertices[owner].mean(axis=0))
            if side < 0:
                co = -co
            sides_facets.append(owner)
            sides_conormals.append(co)
            sides_slots.append((slot0, slot1))

        edge_points.append((e0, e1))
        edge_tets.append(sides_tets)
        edge_facets.append(sides_facets)
        edge_conormals.append(sides_conormals)
        edge_slots.append(sides_slots)

    if not edge_points:
        return dict(
            edge_points=np.zeros((0, 2, 3)),
            edge_tets=np.zeros((0, 2), dtype=np.int64),
            edge_facets=np.zeros((0, 2), dtype=np.int64),
            edge_conormals=np.zeros((0, 2, 3)),
            edge_slots=np.zeros((0, 2, 2), dtype=np.int64),
        )
    return dict(
        edge_points=np.array(edge_points),
        edge_tets=np.array(edge_tets, dtype=np.int64),
        edge_facets=np.array(edge_facets, dtype=np.int64),
        edge_conormals=np.array(edge_conormals),
        edge_slots=np.array(edge_slots, dtype=np.int64),
    )


@dataclass(frozen=True)
class GeometryReport:
    """Discrete-surface approximation diagnostics."""

    h: float
    max_abs_sdf: float
    max_normal_deviation: float
    total_area: float


def geometry_report(cut, surface, degree=4):
    """Sample |rho| and |n - n_h| at facet quadrature points.

    Second order in h for the distance and first order for the normal on a
    sufficiently fine mesh.
    """
    if cut.n_facets == 0:
        raise MeshError("geometry report requires a nonempty cut")
    rule = triangle_rule(degree)
    pts = rule.physical_points(cut.facet_vertices)  # (K, q, 3)
    flat = pts.reshape(-1, 3)
    rho = surface.sdf(flat)
    n_exact = surface.normal(flat)
    n_h = np.repeat(cut.facet_normals, rule.points.shape[0], axis=0)
    dev = np.linalg.norm(n_exact - n_h, axis=-1)
    return GeometryReport(
        h=cut.mesh.h,
        max_abs_sdf=float(np.abs(rho).max()),
        max_normal_deviation=float(dev.max()),
        total_area=cut.total_area(),
    )


def export_obj(cut, path):
    """Write the facet triangulation as an ASCII OBJ file.

    Vertices are deduplicated by exact coordinate equality (crossing points
    on shared edges are bitwise identical) and written with 17 significant
    digits; faces are 1-based and oriented with the facet normals.
    """
    index = {}
    lines = []
    face_lines = []
    for tri in cut.facet_vertices:
        ids = []
        for p in tri:
            key = (p[0], p[1], p[2])
            vid = index.get(key)
            if vid is None:
                vid = len(index) + 1
                index[key] = vid
                lines.append(f"v {p[0]:.17g} {p[1]:.17g} {p[2]:.17g}")
            ids.append(vid)
        face_lines.append(f"f {ids[0]} {ids[1]} {ids[2]}")
    with open(path, "w") as fh:
        fh.write("\n".join(lines + face_lines))
        fh.write("\n")
