"""Surface-topology descriptors: geodesic rings and quadric curvature.

Geodesics run over the mesh edge graph augmented with triangle-diagonal
edges (opposite vertices of each edge shared by two triangles), which
trims the worst-case overshoot of pure edge paths. Curvature comes from
a least-squares quadric fit over the 2-ring in the vertex tangent frame.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple, Sequence

import numpy as np
from scipy.sparse import coo_matrix, csr_matrix
from scipy.sparse.csgraph import dijkstra

from .surface import SurfaceMesh

GEODESIC_CUTOFF_DEFAULT = 3.0
RADII_DEFAULT = (1.0, 2.0)
RING_BAND = (0.8, 1.2)  # ring at radius r collects vertices in [0.8 r, 1.2 r]
_MIN_FIT_POINTS = 5
_RANK_RCOND = 1e-10


class CurvatureFitError(ValueError):
    """Quadric fit is underdetermined at this vertex."""


@dataclass(frozen=True)
class GeodesicField:
    """Geodesic distances from one source vertex; unreached entries are inf."""

    source: int
    cutoff: float
    distances: np.ndarray  # (V,) float64


class CurvatureEstimate(NamedTuple):
    mean: float  # 1/A
    gaussian: float  # 1/A^2
    dir1: np.ndarray  # (3,) unit, major principal direction
    kappa1: float  # signed curvature along dir1


@dataclass(frozen=True)
class TopoDescriptor:
    """Per-point surface descriptor; channels() flattens it for storage."""

    t1: np.ndarray  # (3,) unit normal
    t2: np.ndarray  # (3,) major principal direction scaled by kappa1
    ring_height_mean: np.ndarray  # (R,) per radius
    ring_height_spread: np.ndarray  # (R,) per radius
    mean_curvature: float
    gaussian_curvature: float
    flags: tuple[str, ...] = ()

    def channels(self) -> np.ndarray:
        return np.concatenate([
            self.t1, self.t2, self.ring_height_mean, self.ring_height_spread,
            [self.mean_curvature, self.gaussian_curvature],
        ])


def channel_names(radii: Sequence[float]) -> tuple[str, ...]:
    names = ["t1_x", "t1_y", "t1_z", "t2_x", "t2_y", "t2_z"]
    names += [f"ring_mean_r{r:g}" for r in radii]
    names += [f"ring_spread_r{r:g}" for r in radii]
    names += ["mean_curvature", "gaussian_curvature"]
    return tuple(names)


def vector_spans(radii: Sequence[float]) -> tuple[tuple[int, int], ...]:
    """Index spans of 3-vector channels that must rotate with the cloud."""
    del radii
    return ((0, 3), (3, 6))


def n_channels(radii: Sequence[float]) -> int:
    return 8 + 2 * len(radii)


def mesh_adjacency(mesh: SurfaceMesh) -> list[np.ndarray]:
    """Sorted 1-ring neighbor ids per vertex, from triangle edges only."""
    t = mesh.triangles
    pairs = np.concatenate([t[:, [0, 1]], t[:, [1, 2]], t[:, [2, 0]]])
    pairs = np.concatenate([pairs, pairs[:, ::-1]])
    pairs = np.unique(pairs, axis=0)
    split = np.searchsorted(pairs[:, 0], np.arange(mesh.n_vertices + 1))
    return [pairs[split[i]:split[i + 1], 1] for i in range(mesh.n_vertices)]


def build_edge_graph(mesh: SurfaceMesh) -> csr_matrix:
    """Symmetric weighted graph: mesh edges plus triangle-diagonal edges."""
    t = mesh.triangles
    edges = np.concatenate([t[:, [0, 1]], t[:, [1, 2]], t[:, [2, 0]]])
    edges = np.sort(edges, axis=1)
    edges = np.unique(edges, axis=0)

    # opposite vertices across each shared edge
    opposite: dict[tuple[int, int], list[int]] = {}
    for a, b, c in t:
        for (u, v, w) in ((a, b, c), (b, c, a), (c, a, b)):
            key = (u, v) if u < v else (v, u)
            opposite.setdefault(key, []).append(w)
    diag = set()
    for verts in opposite.values():
        for i in range(len(verts)):
            for j in range(i + 1, len(verts)):
                u, v = verts[i], verts[j]
                if u != v:
                    diag.add((u, v) if u < v else (v, u))
    if diag:
        edges = np.unique(np.concatenate([edges, np.array(sorted(diag))]), axis=0)

    w = np.linalg.norm(mesh.vertices[edges[:, 0]] - mesh.vertices[edges[:, 1]], axis=1)
    n = mesh.n_vertices
    mat = coo_matrix(
        (np.concatenate([w, w]),
         (np.concatenate([edges[:, 0], edges[:, 1]]),
          np.concatenate([edges[:, 1], edges[:, 0]]))),
        shape=(n, n),
    )
    return mat.tocsr()


def geodesic_distances(mesh: SurfaceMesh, source: int,
                       cutoff: float = GEODESIC_CUTOFF_DEFAULT,
                       graph: csr_matrix | None = None) -> GeodesicField:
    if not 0 <= source < mesh.n_vertices:
        raise ValueError(f"source vertex {source} out of range")
    if cutoff <= 0:
        raise ValueError("cutoff must be positive")
    if graph is None:
        graph = build_edge_graph(mesh)
    dist = dijkstra(graph, directed=True, indices=source, limit=cutoff)
    return GeodesicField(source=source, cutoff=cutoff, distances=dist)


def _geodesic_matrix(graph: csr_matrix, sources: np.ndarray,
                     cutoff: float) -> np.ndarray:
    return dijkstra(graph, directed=True, indices=sources, limit=cutoff)


def _tangent_basis(normal: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    axis = np.zeros(3)
    axis[int(np.argmin(np.abs(normal)))] = 1.0
    e1 = axis - np.dot(axis, normal) * normal
    e1 /= np.linalg.norm(e1)
    e2 = np.cross(normal, e1)
    return e1, e2


def _canonical_sign(d: np.ndarray) -> np.ndarray:
    # principal directions are lines; fix the sign deterministically
    idx = int(np.argmax(np.abs(d)))
    return -d if d[idx] < 0 else d


def _fit_quadric(offsets: np.ndarray, normal: np.ndarray) -> CurvatureEstimate:
    if len(offsets) < _MIN_FIT_POINTS:
        raise CurvatureFitError(
            f"need at least {_MIN_FIT_POINTS} neighbors, have {len(offsets)}"
        )
    e1, e2 = _tangent_basis(normal)
    u = offsets @ e1
    w = offsets @ e2
    # heights along the inward normal so a convex sphere fits positive curvature
    h = -(offsets @ normal)
    design = np.column_stack([u * u, u * w, w * w])
    coef, _, rank, _ = np.linalg.lstsq(design, h, rcond=_RANK_RCOND)
    if rank < 3:
        raise CurvatureFitError("neighborhood is rank deficient for a quadric fit")
    a, b, c = coef
    mean = a + c
    gaussian = 4.0 * a * c - b * b
    shape_op = np.array([[2.0 * a, b], [b, 2.0 * c]])
    evals, evecs = np.linalg.eigh(shape_op)
    major = int(np.argmax(np.abs(evals)))
    kappa1 = float(evals[major])
    d2 = evecs[:, major]
    dir1 = _canonical_sign(d2[0] * e1 + d2[1] * e2)
    return CurvatureEstimate(mean=float(mean), gaussian=float(gaussian),
                             dir1=dir1, kappa1=kappa1)


def estimate_curvature(mesh: SurfaceMesh, vertex: int,
                       adjacency: list[np.ndarray] | None = None) -> CurvatureEstimate:
    """Quadric curvature at one vertex from its 2-ring neighborhood."""
    if adjacency is None:
        adjacency = mesh_adjacency(mesh)
    ring1 = adjacency[vertex]
    ring2 = {int(v) for n in ring1 for v in adjacency[n]}
    ring2.update(int(v) for v in ring1)
    ring2.discard(int(vertex))
    nbrs = np.array(sorted(ring2), dtype=np.int64)
    offsets = mesh.vertices[nbrs] - mesh.vertices[vertex]
    return _fit_quadric(offsets, mesh.vertex_normals[vertex])


def topology_vectors(mesh: SurfaceMesh, vertex: int,
                     radii: Sequence[float] = RADII_DEFAULT,
                     geodesic_cutoff: float = GEODESIC_CUTOFF_DEFAULT) -> TopoDescriptor:
    """Descriptor for a single vertex; see topology_field for batches."""
    field = topology_field(mesh, np.array([vertex]), radii, geodesic_cutoff)
    return field[0]


def topology_field(mesh: SurfaceMesh, vertex_ids: np.ndarray,
                   radii: Sequence[float] = RADII_DEFAULT,
                   geodesic_cutoff: float = GEODESIC_CUTOFF_DEFAULT) -> list[TopoDescriptor]:
    """Descriptors for many vertices with one multi-source geodesic solve."""
    radii = tuple(float(r) for r in radii)
    if not radii:
        raise ValueError("radii must be non-empty")
    if any(r <= 0 for r in radii):
        raise ValueError("radii must be positive")
    if max(radii) * RING_BAND[1] > geodesic_cutoff:
        raise ValueError(
            f"cutoff {geodesic_cutoff} too small for ring band at radius {max(radii)}"
        )
    vertex_ids = np.asarray(vertex_ids, dtype=np.int64)
    if vertex_ids.size and (vertex_ids.min() < 0 or vertex_ids.max() >= mesh.n_vertices):
        raise ValueError("vertex id out of range")

    graph = build_edge_graph(mesh)
    dists = _geodesic_matrix(graph, vertex_ids, geodesic_cutoff)
    adjacency = mesh_adjacency(mesh)

    out = []
    for row, vid in enumerate(vertex_ids):
        vid = int(vid)
        p = mesh.vertices[vid]
        n = mesh.vertex_normals[vid]
        flags: list[str] = []
        try:
            curv = estimate_curvature(mesh, vid, adjacency)
            t2 = curv.dir1 * curv.kappa1
            mean_c, gauss_c = curv.mean, curv.gaussian
        except CurvatureFitError:
            flags.append("curvature_failed")
            t2 = np.zeros(3)
            mean_c = gauss_c = 0.0
        d = dists[row]
        ring_mean = np.zeros(len(radii))
        ring_spread = np.zeros(len(radii))
        for k, r in enumerate(radii):
            mask = (d >= RING_BAND[0] * r) & (d <= RING_BAND[1] * r)
            if not mask.any():
                flags.append(f"empty_ring_r{r:g}")
                continue
            heights = (mesh.vertices[mask] - p) @ n
            ring_mean[k] = heights.mean()
            ring_spread[k] = heights.std()
        out.append(TopoDescriptor(
            t1=n.copy(), t2=t2, ring_height_mean=ring_mean,
            ring_height_spread=ring_spread, mean_curvature=mean_c,
            gaussian_curvature=gauss_c, flags=tuple(flags),
        ))
    return out
