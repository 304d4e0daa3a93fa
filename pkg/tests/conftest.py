"""Shared fixtures: reference molecules, parametric meshes, label trackers."""

from __future__ import annotations

import numpy as np
import pytest

from amptcr.chemio import Atom, Molecule
from amptcr.surface import SurfaceMesh

ELEMENT_POOL = ("C", "N", "O", "S", "H")


def make_fixture20(seed: int = 7) -> Molecule:
    """20-atom chain with a strongly anisotropic, sign-unambiguous shape."""
    elems = ["C", "N", "O", "C", "S", "C", "O", "N", "C", "C",
             "N", "C", "O", "C", "C", "S", "C", "N", "C", "O"]
    rng = np.random.default_rng(seed)
    pts = [np.zeros(3)]
    while len(pts) < 20:
        step = rng.normal(size=3) * np.array([1.1, 0.75, 0.5])
        step *= 1.5 / np.linalg.norm(step)
        cand = pts[-1] + step
        if all(np.linalg.norm(cand - p) >= 1.0 for p in pts):
            pts.append(cand)
    atoms = tuple(Atom(element=e, position=p) for e, p in zip(elems, pts))
    return Molecule(name="fixture20", atoms=atoms)


def make_ring() -> Molecule:
    """Planar six-fold symmetric ring; degenerate covariance by construction."""
    atoms = []
    for radius, element in ((1.39, "C"), (2.48, "H")):
        for i in range(6):
            a = i * np.pi / 3
            atoms.append(Atom(element=element,
                              position=[radius * np.cos(a), radius * np.sin(a), 0.0]))
    return Molecule(name="ring", atoms=tuple(atoms))


def make_cluster(seed: int) -> Molecule:
    """Random 5-25 atom cluster with 1.5 A steps and a 1.0 A clash floor."""
    rng = np.random.default_rng(seed)
    n = int(rng.integers(5, 26))
    pts = [np.zeros(3)]
    while len(pts) < n:
        step = rng.normal(size=3)
        step *= 1.5 / np.linalg.norm(step)
        cand = pts[int(rng.integers(0, len(pts)))] + step
        if all(np.linalg.norm(cand - p) >= 1.0 for p in pts):
            pts.append(cand)
    elems = [ELEMENT_POOL[int(rng.integers(0, len(ELEMENT_POOL)))] for _ in range(n)]
    atoms = tuple(Atom(element=e, position=p) for e, p in zip(elems, pts))
    return Molecule(name=f"cluster{seed}", atoms=atoms)


def water() -> Molecule:
    return Molecule(name="water", atoms=(
        Atom(element="O", position=[0.0, 0.0, 0.0]),
        Atom(element="H", position=[0.9572, 0.0, 0.0]),
        Atom(element="H", position=[-0.2400, 0.9266, 0.0]),
    ))


def uv_sphere_mesh(radius: float = 1.0, n_lat: int = 40, n_lon: int = 80) -> SurfaceMesh:
    """Lat-long sphere triangulation with exact outward normals."""
    verts = [np.array([0.0, 0.0, radius]), np.array([0.0, 0.0, -radius])]
    rows = []
    for i in range(1, n_lat):
        theta = np.pi * i / n_lat
        row = []
        for j in range(n_lon):
            phi = 2.0 * np.pi * j / n_lon
            row.append(len(verts))
            verts.append(radius * np.array([
                np.sin(theta) * np.cos(phi),
                np.sin(theta) * np.sin(phi),
                np.cos(theta),
            ]))
        rows.append(row)
    tris = []
    top, bottom = 0, 1
    for j in range(n_lon):
        jn = (j + 1) % n_lon
        tris.append([top, rows[0][j], rows[0][jn]])
        tris.append([bottom, rows[-1][jn], rows[-1][j]])
    for i in range(len(rows) - 1):
        for j in range(n_lon):
            jn = (j + 1) % n_lon
            a, b = rows[i][j], rows[i][jn]
            c, d = rows[i + 1][j], rows[i + 1][jn]
            tris.append([a, c, d])
            tris.append([a, d, b])
    verts = np.array(verts)
    normals = verts / radius
    return SurfaceMesh(vertices=verts, triangles=np.array(tris, dtype=np.int64),
                       vertex_normals=normals, vertex_scalars=np.zeros(len(verts)))


def saddle_mesh(n: int = 41, half_width: float = 1.0) -> SurfaceMesh:
    """Grid mesh of z = (x^2 - y^2)/2 with exact unit normals."""
    xs = np.linspace(-half_width, half_width, n)
    ys = np.linspace(-half_width, half_width, n)
    verts, normals = [], []
    for y in ys:
        for x in xs:
            verts.append([x, y, 0.5 * (x * x - y * y)])
            nvec = np.array([-x, y, 1.0])
            normals.append(nvec / np.linalg.norm(nvec))
    tris = []
    for i in range(n - 1):
        for j in range(n - 1):
            a = i * n + j
            b = a + 1
            c = a + n
            d = c + 1
            tris.append([a, c, b])
            tris.append([b, c, d])
    return SurfaceMesh(vertices=np.array(verts),
                       triangles=np.array(tris, dtype=np.int64),
                       vertex_normals=np.array(normals),
                       vertex_scalars=np.zeros(n * n))


class AccessTrackingLabels:
    """Label sequence that records every index read, in order."""

    def __init__(self, values):
        self.values = [float(v) for v in values]
        self.reads: list[int] = []

    def __len__(self):
        return len(self.values)

    def __getitem__(self, i):
        self.reads.append(int(i))
        return self.values[int(i)]


@pytest.fixture
def fixture20() -> Molecule:
    return make_fixture20()


@pytest.fixture
def ring() -> Molecule:
    return make_ring()


@pytest.fixture
def water_mol() -> Molecule:
    return water()


@pytest.fixture(scope="session")
def sphere_mesh() -> SurfaceMesh:
    return uv_sphere_mesh()


@pytest.fixture(scope="session")
def saddle() -> SurfaceMesh:
    return saddle_mesh()
