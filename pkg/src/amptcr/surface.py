"""Isosurface extraction, per-vertex annotation, and farthest-point sampling.

Marching cubes over a ScalarGrid produces a triangle mesh whose vertices
live on grid edges; vertices are deduplicated by grid-edge identity so
shared cell faces stitch exactly. Normals are oriented outward, meaning
along the direction of decreasing density.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .fieldgen import ScalarGrid, trilinear_sample_many
from .mc_tables import TRI_TABLE

DEGENERATE_AREA = 1e-12


class EmptySurfaceError(ValueError):
    """Isovalue produced no surface."""


@dataclass(frozen=True)
class SurfaceMesh:
    """Triangle mesh with unit outward vertex normals and a scalar per vertex."""

    vertices: np.ndarray  # (V, 3) float64 A
    triangles: np.ndarray  # (T, 3) int64, indices into vertices
    vertex_normals: np.ndarray  # (V, 3) float64, unit
    vertex_scalars: np.ndarray  # (V,) float64

    def __post_init__(self):
        v = np.ascontiguousarray(self.vertices, dtype=np.float64)
        t = np.ascontiguousarray(self.triangles, dtype=np.int64)
        n = np.ascontiguousarray(self.vertex_normals, dtype=np.float64)
        s = np.ascontiguousarray(self.vertex_scalars, dtype=np.float64)
        if v.ndim != 2 or v.shape[1] != 3:
            raise ValueError("vertices must be (V, 3)")
        if t.ndim != 2 or t.shape[1] != 3:
            raise ValueError("triangles must be (T, 3)")
        if t.size and (t.min() < 0 or t.max() >= len(v)):
            raise ValueError("triangle indices out of range")
        if n.shape != v.shape:
            raise ValueError("vertex_normals must match vertices")
        if s.shape != (len(v),):
            raise ValueError("vertex_scalars must be (V,)")
        object.__setattr__(self, "vertices", v)
        object.__setattr__(self, "triangles", t)
        object.__setattr__(self, "vertex_normals", n)
        object.__setattr__(self, "vertex_scalars", s)

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_triangles(self) -> int:
        return len(self.triangles)


@dataclass(frozen=True)
class SampledSurface:
    """Farthest-point subset of a mesh, keeping per-point scalars."""

    positions: np.ndarray  # (N, 3) float64
    scalars: np.ndarray  # (N,) float64
    source_vertex: np.ndarray  # (N,) int64 indices into the source mesh

    def __post_init__(self):
        p = np.ascontiguousarray(self.positions, dtype=np.float64)
        s = np.ascontiguousarray(self.scalars, dtype=np.float64)
        sv = np.ascontiguousarray(self.source_vertex, dtype=np.int64)
        if p.ndim != 2 or p.shape[1] != 3:
            raise ValueError("positions must be (N, 3)")
        if s.shape != (len(p),) or sv.shape != (len(p),):
            raise ValueError("scalars and source_vertex must be (N,)")
        object.__setattr__(self, "positions", p)
        object.__setattr__(self, "scalars", s)
        object.__setattr__(self, "source_vertex", sv)

    @property
    def n_points(self) -> int:
        return len(self.positions)


def _triangle_areas(vertices: np.ndarray, triangles: np.ndarray) -> np.ndarray:
    a = vertices[triangles[:, 0]]
    b = vertices[triangles[:, 1]]
    c = vertices[triangles[:, 2]]
    return 0.5 * np.linalg.norm(np.cross(b - a, c - a), axis=1)


def mesh_area(mesh: SurfaceMesh) -> float:
    return float(_triangle_areas(mesh.vertices, mesh.triangles).sum())


def _vertex_normals(vertices: np.ndarray, triangles: np.ndarray) -> np.ndarray:
    # area-weighted triangle normals accumulated per vertex
    a = vertices[triangles[:, 0]]
    b = vertices[triangles[:, 1]]
    c = vertices[triangles[:, 2]]
    tnorm = np.cross(b - a, c - a)
    acc = np.zeros_like(vertices)
    for col in range(3):
        np.add.at(acc, triangles[:, col], tnorm)
    norms = np.linalg.norm(acc, axis=1)
    # isolated fold-over vertices can cancel exactly; give them a fixed axis
    bad = norms < 1e-300
    acc[bad] = (0.0, 0.0, 1.0)
    norms[bad] = 1.0
    return acc / norms[:, None]


def marching_cubes(grid: ScalarGrid, isovalue: float) -> SurfaceMesh:
    """Extract the isovalue surface of the grid as a stitched triangle mesh.

    The isovalue must lie strictly inside (min, max) of the grid values.
    Triangles below the degenerate-area threshold are dropped and unused
    vertices pruned.
    """
    vmin, vmax = float(grid.values.min()), float(grid.values.max())
    if not (vmin < isovalue < vmax):
        raise ValueError(
            f"isovalue {isovalue} outside the open value range ({vmin}, {vmax})"
        )
    arr = grid.grid3d()
    nx, ny, nz = grid.dims
    inside = arr < isovalue

    # 8-bit case index per cell, bit i set when corner i is below the isovalue
    case = np.zeros((nx - 1, ny - 1, nz - 1), dtype=np.int64)
    corner_slices = [
        (0, 0, 0), (1, 0, 0), (1, 1, 0), (0, 1, 0),
        (0, 0, 1), (1, 0, 1), (1, 1, 1), (0, 1, 1),
    ]
    for bit, (dx, dy, dz) in enumerate(corner_slices):
        case |= inside[dx:dx + nx - 1, dy:dy + ny - 1, dz:dz + nz - 1].astype(np.int64) << bit

    active = (case != 0) & (case != 255)
    if not active.any():
        raise EmptySurfaceError("no cells cross the isovalue")
    acells = np.argwhere(active)
    ci, cj, ck = acells[:, 0], acells[:, 1], acells[:, 2]

    # one vertex per crossed grid edge, interpolated to the isovalue
    def edge_vertices(axis):
        lo = [slice(None)] * 3
        hi = [slice(None)] * 3
        lo[axis] = slice(None, -1)
        hi[axis] = slice(1, None)
        v0 = arr[tuple(lo)]
        v1 = arr[tuple(hi)]
        cross = inside[tuple(lo)] != inside[tuple(hi)]
        base = np.argwhere(cross)
        t = (isovalue - v0[cross]) / (v1[cross] - v0[cross])
        pos = grid.origin + base * grid.spacing
        pos[:, axis] += t * grid.spacing
        ids = np.full(cross.shape, -1, dtype=np.int64)
        return cross, ids, pos

    cross_x, vid_x, pos_x = edge_vertices(0)
    cross_y, vid_y, pos_y = edge_vertices(1)
    cross_z, vid_z, pos_z = edge_vertices(2)
    n_x, n_y = len(pos_x), len(pos_y)
    vid_x[cross_x] = np.arange(n_x)
    vid_y[cross_y] = np.arange(n_y) + n_x
    vid_z[cross_z] = np.arange(len(pos_z)) + n_x + n_y
    vertices = np.concatenate([pos_x, pos_y, pos_z])

    # per-cell map from local edge index to global vertex id
    ev = np.empty((len(acells), 12), dtype=np.int64)
    ev[:, 0] = vid_x[ci, cj, ck]
    ev[:, 2] = vid_x[ci, cj + 1, ck]
    ev[:, 4] = vid_x[ci, cj, ck + 1]
    ev[:, 6] = vid_x[ci, cj + 1, ck + 1]
    ev[:, 3] = vid_y[ci, cj, ck]
    ev[:, 1] = vid_y[ci + 1, cj, ck]
    ev[:, 7] = vid_y[ci, cj, ck + 1]
    ev[:, 5] = vid_y[ci + 1, cj, ck + 1]
    ev[:, 8] = vid_z[ci, cj, ck]
    ev[:, 9] = vid_z[ci + 1, cj, ck]
    ev[:, 11] = vid_z[ci, cj + 1, ck]
    ev[:, 10] = vid_z[ci + 1, cj + 1, ck]

    rows = TRI_TABLE[case[active]]
    chunks = []
    for slot in range(5):
        local = rows[:, 3 * slot:3 * slot + 3]
        mask = local[:, 0] >= 0
        if not mask.any():
            continue
        chunks.append(np.take_along_axis(ev[mask], local[mask], axis=1))
    triangles = np.concatenate(chunks)
    if triangles.min() < 0:
        raise AssertionError("case table referenced an uncrossed edge")

    # drop degenerate slivers, then prune vertices they stranded
    areas = _triangle_areas(vertices, triangles)
    triangles = triangles[areas >= DEGENERATE_AREA]
    if len(triangles) == 0:
        raise EmptySurfaceError("all extracted triangles were degenerate")
    used = np.unique(triangles)
    remap = np.full(len(vertices), -1, dtype=np.int64)
    remap[used] = np.arange(len(used))
    vertices = vertices[used]
    triangles = remap[triangles]

    normals = _vertex_normals(vertices, triangles)
    return SurfaceMesh(vertices=vertices, triangles=triangles,
                       vertex_normals=normals,
                       vertex_scalars=np.zeros(len(vertices)))


def annotate_scalars(mesh: SurfaceMesh, grid: ScalarGrid) -> SurfaceMesh:
    """Sample the grid at each vertex into vertex_scalars (trilinear)."""
    return replace(mesh, vertex_scalars=trilinear_sample_many(grid, mesh.vertices))


def normalize_scalars(values: np.ndarray) -> np.ndarray:
    """Scale by 1/max|v| so values land in [-1, 1]; all-zero stays unchanged."""
    values = np.asarray(values, dtype=np.float64)
    peak = np.max(np.abs(values)) if values.size else 0.0
    if peak == 0.0:
        return values.copy()
    return values / peak


def farthest_point_sample(mesh: SurfaceMesh, n_points: int,
                          seed: int = 0) -> SampledSurface:
    """Greedy farthest-point subset of the mesh vertices.

    The first point is the vertex farthest from the vertex centroid; each
    following point maximizes the minimum Euclidean distance to the chosen
    set. Ties always resolve to the smallest vertex index, so the result
    is deterministic; seed is accepted for interface stability only.
    """
    del seed
    verts = mesh.vertices
    if n_points < 1:
        raise ValueError("n_points must be >= 1")
    if n_points > len(verts):
        raise ValueError(
            f"requested {n_points} points from a mesh with {len(verts)} vertices"
        )
    centroid = verts.mean(axis=0)
    chosen = np.empty(n_points, dtype=np.int64)
    first = int(np.argmax(np.linalg.norm(verts - centroid, axis=1)))
    chosen[0] = first
    mind = np.linalg.norm(verts - verts[first], axis=1)
    for i in range(1, n_points):
        nxt = int(np.argmax(mind))
        chosen[i] = nxt
        np.minimum(mind, np.linalg.norm(verts - verts[nxt], axis=1), out=mind)
    return SampledSurface(positions=verts[chosen],
                          scalars=mesh.vertex_scalars[chosen],
                          source_vertex=chosen)


def export_ply(mesh: SurfaceMesh) -> bytes:
    """ASCII PLY with per-vertex position, normal, and scalar.

    Floats are written with repr, which round-trips float64 exactly.
    """
    out = [
        "ply",
        "format ascii 1.0",
        f"element vertex {mesh.n_vertices}",
        "property double x",
        "property double y",
        "property double z",
        "property double nx",
        "property double ny",
        "property double nz",
        "property double scalar",
        f"element face {mesh.n_triangles}",
        "property list uchar int vertex_indices",
        "end_header",
    ]
    for v, n, s in zip(mesh.vertices, mesh.vertex_normals, mesh.vertex_scalars):
        row = (v[0], v[1], v[2], n[0], n[1], n[2], s)
        out.append(" ".join(repr(float(x)) for x in row))
    for t in mesh.triangles:
        out.append(f"3 {t[0]} {t[1]} {t[2]}")
    return ("\n".join(out) + "\n").encode("ascii")


def load_ply(data: bytes) -> SurfaceMesh:
    """Parse the ASCII PLY layout written by export_ply."""
    lines = data.decode("ascii").splitlines()
    if not lines or lines[0] != "ply":
        raise ValueError("not a PLY file")
    n_vert = n_face = None
    body = None
    for i, line in enumerate(lines):
        if line.startswith("element vertex "):
            n_vert = int(line.split()[-1])
        elif line.startswith("element face "):
            n_face = int(line.split()[-1])
        elif line == "end_header":
            body = i + 1
            break
    if body is None or n_vert is None or n_face is None:
        raise ValueError("malformed PLY header")
    vrows = np.array([[float(x) for x in lines[body + i].split()]
                      for i in range(n_vert)], dtype=np.float64).reshape(n_vert, 7)
    tris = np.array([[int(x) for x in lines[body + n_vert + i].split()[1:]]
                     for i in range(n_face)], dtype=np.int64).reshape(n_face, 3)
    return SurfaceMesh(vertices=vrows[:, 0:3], triangles=tris,
                       vertex_normals=vrows[:, 3:6], vertex_scalars=vrows[:, 6])
