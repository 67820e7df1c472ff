"""Shared fixtures: the benchmark surface and cached torus cuts."""

import numpy as np
import pytest

from surfcut.geometry import ImplicitTorus, torus_benchmark
from surfcut.mesh import (
    BackgroundMesh,
    LevelSetField,
    build_background,
    extract_cut_surface,
    interpolate_levelset,
)

BOX_MIN = (-1.6, -1.6, -0.6)
BOX_MAX = (1.6, 1.6, 0.6)
GRIDS = {0.4: (8, 8, 3), 0.2: (16, 16, 6), 0.1: (32, 32, 12), 0.05: (64, 64, 24)}


@pytest.fixture(scope="session")
def torus():
    return ImplicitTorus()


@pytest.fixture(scope="session")
def benchmark(torus):
    return torus_benchmark(torus)


@pytest.fixture(scope="session")
def torus_cuts(torus):
    """Extracted torus cuts at the coarse study resolutions, built once."""

    cache = {}

    def build(h):
        if h not in cache:
            mesh = build_background(BOX_MIN, BOX_MAX, GRIDS[h])
            cache[h] = extract_cut_surface(mesh, interpolate_levelset(mesh, torus))
        return cache[h]

    return build


def make_single_tet_mesh(vertices, h=1.0):
    """Minimal one-tet background mesh for extraction unit tests."""
    vertices = np.asarray(vertices, dtype=float)
    tets = np.array([[0, 1, 2, 3]])
    faces = np.sort(
        np.array([[1, 2, 3], [0, 2, 3], [0, 1, 3], [0, 1, 2]]), axis=1
    )
    face_tets = np.array([[0, -1]] * 4)
    return BackgroundMesh(
        box_min=vertices.min(axis=0),
        box_max=vertices.max(axis=0),
        cells=(1, 1, 1),
        h=h,
        vertices=vertices,
        tets=tets,
        faces=faces,
        face_tets=face_tets,
    )


REFERENCE_TET = np.array(
    [[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]]
)


def cut_single_tet(values, vertices=REFERENCE_TET):
    mesh = make_single_tet_mesh(vertices)
    return extract_cut_surface(mesh, LevelSetField(np.asarray(values, dtype=float)))
