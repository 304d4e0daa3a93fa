"""Axis-aligned scalar grids: pseudo-density, ESP, and a dual-Fukui surrogate.

The density field is a sum of atom-centered Gaussians (sigma = vdW/2,
weight = atomic number) and exists purely to be isosurfaced. Property
fields (ESP, Fukui) share the same grid geometry and are later sampled
onto mesh vertices.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import elements
from .chemio import Molecule

SPACING_DEFAULT = 0.4
PADDING_DEFAULT = 4.0
ESP_SOFTENING = 0.1  # Angstrom; clamps the Coulomb singularity at nuclei
FUKUI_DELTA_DEFAULT = 0.1
VOXEL_BUDGET_DEFAULT = 10_000_000

GRID_KINDS = ("density", "esp", "fukui_dual")


class GridBudgetError(ValueError):
    """Requested grid would exceed the voxel budget."""


@dataclass(frozen=True)
class ScalarGrid:
    """Uniform axis-aligned voxel field.

    values is flat in x-fastest order: index = ix + nx*(iy + ny*iz).
    """

    origin: np.ndarray  # (3,) A
    spacing: float
    dims: tuple[int, int, int]
    values: np.ndarray  # (nx*ny*nz,) float64
    kind: str
    warnings: tuple[str, ...] = field(default_factory=tuple)

    def __post_init__(self):
        if self.spacing <= 0:
            raise ValueError("grid spacing must be positive")
        if self.kind not in GRID_KINDS:
            raise ValueError(f"unknown grid kind: {self.kind!r}")
        dims = tuple(int(d) for d in self.dims)
        if len(dims) != 3 or any(d < 2 for d in dims):
            raise ValueError(f"grid dims must be three values >= 2, got {dims}")
        origin = np.asarray(self.origin, dtype=np.float64)
        values = np.ascontiguousarray(self.values, dtype=np.float64).ravel()
        if values.size != dims[0] * dims[1] * dims[2]:
            raise ValueError("value count does not match dims")
        if not np.all(np.isfinite(values)):
            raise ValueError("grid values must be finite")
        object.__setattr__(self, "origin", origin)
        object.__setattr__(self, "dims", dims)
        object.__setattr__(self, "values", values)

    def grid3d(self) -> np.ndarray:
        """View of values indexed as arr[ix, iy, iz]."""
        nx, ny, nz = self.dims
        return self.values.reshape(nz, ny, nx).transpose(2, 1, 0)

    def max_corner(self) -> np.ndarray:
        return self.origin + self.spacing * (np.array(self.dims) - 1)

    def axis_coords(self, axis: int) -> np.ndarray:
        return self.origin[axis] + self.spacing * np.arange(self.dims[axis])


def _grid_geometry(mol: Molecule, spacing: float, padding: float,
                   voxel_budget: int) -> tuple[np.ndarray, tuple[int, int, int]]:
    pos = mol.positions()
    lo = pos.min(axis=0) - padding
    hi = pos.max(axis=0) + padding
    dims = tuple(max(2, int(np.ceil((hi[a] - lo[a]) / spacing)) + 1) for a in range(3))
    n_voxels = dims[0] * dims[1] * dims[2]
    if n_voxels > voxel_budget:
        raise GridBudgetError(
            f"grid of {dims} = {n_voxels} voxels exceeds budget {voxel_budget}"
        )
    return lo, dims


def _flatten(arr3d: np.ndarray) -> np.ndarray:
    # arr[ix, iy, iz] -> flat x-fastest
    return np.ascontiguousarray(arr3d.transpose(2, 1, 0)).ravel()


def build_density_grid(mol: Molecule, spacing: float = SPACING_DEFAULT,
                       padding: float = PADDING_DEFAULT,
                       voxel_budget: int = VOXEL_BUDGET_DEFAULT) -> ScalarGrid:
    """Gaussian-superposition pseudo-density on the molecule AABB + padding.

    value(x) = sum_a Z_a * exp(-|x - r_a|^2 / (2 sigma_a^2)), sigma_a = vdW/2.
    """
    origin, dims = _grid_geometry(mol, spacing, padding, voxel_budget)
    xs = origin[0] + spacing * np.arange(dims[0])
    ys = origin[1] + spacing * np.arange(dims[1])
    zs = origin[2] + spacing * np.arange(dims[2])
    acc = np.zeros(dims, dtype=np.float64)
    for atom in mol.atoms:
        sigma = elements.vdw_radius(atom.element) / 2.0
        w = float(elements.atomic_number(atom.element))
        inv2s2 = 1.0 / (2.0 * sigma * sigma)
        ex = np.exp(-((xs - atom.position[0]) ** 2) * inv2s2)
        ey = np.exp(-((ys - atom.position[1]) ** 2) * inv2s2)
        ez = np.exp(-((zs - atom.position[2]) ** 2) * inv2s2)
        acc += w * np.einsum("i,j,k->ijk", ex, ey, ez)
    return ScalarGrid(origin=origin, spacing=spacing, dims=dims,
                      values=_flatten(acc), kind="density")


def _esp_values(grid_geom: ScalarGrid, positions: np.ndarray,
                charges: np.ndarray) -> np.ndarray:
    xs = grid_geom.axis_coords(0)[:, None, None]
    ys = grid_geom.axis_coords(1)[None, :, None]
    zs = grid_geom.axis_coords(2)[None, None, :]
    acc = np.zeros(grid_geom.dims, dtype=np.float64)
    for (px, py, pz), q in zip(positions, charges):
        if q == 0.0:
            continue
        r = np.sqrt((xs - px) ** 2 + (ys - py) ** 2 + (zs - pz) ** 2)
        acc += q / np.maximum(r, ESP_SOFTENING)
    return _flatten(acc)


def build_esp_grid(mol: Molecule, grid_geom: ScalarGrid) -> ScalarGrid:
    """Coulomb potential of the partial charges, in e/A, on grid_geom's lattice.

    All-zero charges are legal but flagged in the grid warnings.
    """
    charges = mol.partial_charges()
    warnings = ()
    if np.all(charges == 0.0):
        warnings = ("all_zero_charges",)
    values = _esp_values(grid_geom, mol.positions(), charges)
    return ScalarGrid(origin=grid_geom.origin, spacing=grid_geom.spacing,
                      dims=grid_geom.dims, values=values, kind="esp",
                      warnings=warnings)


def _shift_weights(charges: np.ndarray) -> np.ndarray:
    mags = np.abs(charges)
    total = mags.sum()
    if total > 0.0:
        return mags / total
    return np.full(charges.shape, 1.0 / charges.size)


def perturbed_charges(charges: np.ndarray, delta: float) -> np.ndarray:
    """Shift the total charge by delta, distributed proportionally to |q|.

    Applied in two half-steps with the weights recomputed in between, so
    the redistribution responds to the perturbation itself. A single
    linear step would make the second difference below vanish identically.
    """
    charges = np.asarray(charges, dtype=np.float64)
    half = charges + (delta / 2.0) * _shift_weights(charges)
    return half + (delta / 2.0) * _shift_weights(half)


def build_fukui_dual_grid(mol: Molecule, grid_geom: ScalarGrid,
                          delta: float = FUKUI_DELTA_DEFAULT) -> ScalarGrid:
    """Dual-Fukui surrogate: discrete second charge-derivative of the ESP.

    F2(x) = [V(+delta) - 2 V(0) + V(-delta)] / delta^2 over the three
    perturbed-charge ESP grids.
    """
    if delta <= 0:
        raise ValueError("delta must be positive")
    charges = mol.partial_charges()
    warnings = ()
    if np.all(charges == 0.0):
        warnings = ("all_zero_charges",)
    pos = mol.positions()
    v0 = _esp_values(grid_geom, pos, charges)
    vp = _esp_values(grid_geom, pos, perturbed_charges(charges, +delta))
    vm = _esp_values(grid_geom, pos, perturbed_charges(charges, -delta))
    values = (vp - 2.0 * v0 + vm) / (delta * delta)
    return ScalarGrid(origin=grid_geom.origin, spacing=grid_geom.spacing,
                      dims=grid_geom.dims, values=values, kind="fukui_dual",
                      warnings=warnings)


def trilinear_sample_many(grid: ScalarGrid, points: np.ndarray) -> np.ndarray:
    """Trilinear interpolation of the grid at (M, 3) points (must be in the AABB)."""
    points = np.atleast_2d(np.asarray(points, dtype=np.float64))
    rel = (points - grid.origin) / grid.spacing
    upper = np.array(grid.dims, dtype=np.float64) - 1.0
    tol = 1e-9
    if np.any(rel < -tol) or np.any(rel > upper + tol):
        bad = np.where((rel < -tol) | (rel > upper + tol))[0][0]
        raise ValueError(
            f"point {points[bad]} lies outside the grid AABB "
            f"[{grid.origin}, {grid.max_corner()}]"
        )
    rel = np.clip(rel, 0.0, upper)
    base = np.minimum(rel.astype(np.int64), np.array(grid.dims) - 2)
    t = rel - base
    arr = grid.grid3d()
    ix, iy, iz = base[:, 0], base[:, 1], base[:, 2]
    tx, ty, tz = t[:, 0], t[:, 1], t[:, 2]
    c = 0.0
    for dx in (0, 1):
        wx = tx if dx else 1.0 - tx
        for dy in (0, 1):
            wy = ty if dy else 1.0 - ty
            for dz in (0, 1):
                wz = tz if dz else 1.0 - tz
                c = c + arr[ix + dx, iy + dy, iz + dz] * wx * wy * wz
    return c


def trilinear_sample(grid: ScalarGrid, point) -> float:
    return float(trilinear_sample_many(grid, np.asarray(point))[0])
