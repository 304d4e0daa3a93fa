"""Scalar grids: density, ESP, dual-Fukui surrogate, trilinear sampling."""

import numpy as np
import pytest

from amptcr import elements
from amptcr.chemio import Atom, Molecule, transform_molecule
from amptcr.fieldgen import (ESP_SOFTENING, GridBudgetError, build_density_grid,
                             build_esp_grid, build_fukui_dual_grid,
                             perturbed_charges, trilinear_sample,
                             trilinear_sample_many)
from conftest import water


def carbon_atom():
    return Molecule(name="c", atoms=(Atom(element="C", position=[0.0, 0.0, 0.0]),))


def grid_points(grid):
    """Node coordinates in the grid's flat order (x fastest, then y, then z)."""
    xs, ys, zs = (grid.axis_coords(a) for a in range(3))
    gx, gy, gz = np.meshgrid(xs, ys, zs, indexing="ij")
    return np.stack([gx.ravel(order="F"), gy.ravel(order="F"),
                     gz.ravel(order="F")], axis=1)


class TestDensity:
    def test_single_atom_gaussian_values(self):
        mol = carbon_atom()
        grid = build_density_grid(mol, spacing=0.5, padding=3.0)
        pts = grid_points(grid)
        sigma = elements.vdw_radius("C") / 2.0
        expected = 6.0 * np.exp(-np.sum(pts**2, axis=1) / (2.0 * sigma**2))
        got = np.array([trilinear_sample(grid, p) for p in pts[:50]])
        assert got == pytest.approx(expected[:50], abs=1e-12)

    def test_density_additive_over_atoms(self):
        mol = Molecule(name="cc", atoms=(
            Atom(element="C", position=[0.0, 0.0, 0.0]),
            Atom(element="C", position=[1.5, 0.0, 0.0]),
        ))
        grid = build_density_grid(mol, spacing=0.5, padding=3.0)
        single = build_density_grid(carbon_atom(), spacing=0.5, padding=3.0)
        # peak of the pair exceeds the single-atom peak
        assert grid.values.max() > single.values.max()

    def test_grid_covers_molecule_with_padding(self):
        grid = build_density_grid(water(), spacing=0.4, padding=4.0)
        pos = water().positions()
        assert np.all(grid.origin <= pos.min(axis=0) - 3.99)
        assert np.all(grid.max_corner() >= pos.max(axis=0) + 3.99)

    def test_translation_covariance(self):
        mol = carbon_atom()
        shift = np.array([1.2, -0.4, 0.8])
        moved = transform_molecule(mol, translation=shift)
        g1 = build_density_grid(mol, spacing=0.4, padding=3.0)
        g2 = build_density_grid(moved, spacing=0.4, padding=3.0)
        assert g2.origin == pytest.approx(g1.origin + shift, abs=1e-12)
        assert g2.values == pytest.approx(g1.values, abs=1e-12)

    def test_voxel_budget_enforced(self):
        with pytest.raises(GridBudgetError):
            build_density_grid(carbon_atom(), spacing=0.01, padding=10.0,
                               voxel_budget=1000)


class TestEsp:
    def test_esp_matches_direct_charge_sum(self):
        mol = Molecule(name="pair", atoms=(
            Atom(element="O", position=[0.0, 0.0, 0.0], partial_charge=-0.6),
            Atom(element="H", position=[1.0, 0.2, -0.1], partial_charge=0.6),
        ))
        geom = build_density_grid(mol, spacing=0.5, padding=3.0)
        grid = build_esp_grid(mol, geom)
        rng = np.random.default_rng(0)
        pts = grid_points(grid)
        sample = pts[rng.choice(len(pts), size=100, replace=False)]
        got = trilinear_sample_many(grid, sample)
        expected = np.zeros(len(sample))
        for atom in mol.atoms:
            r = np.linalg.norm(sample - atom.position, axis=1)
            expected += atom.partial_charge / np.maximum(r, ESP_SOFTENING)
        assert got == pytest.approx(expected, abs=1e-12)

    def test_esp_zero_charges_flagged(self):
        mol = carbon_atom()
        geom = build_density_grid(mol, spacing=0.5, padding=3.0)
        grid = build_esp_grid(mol, geom)
        assert np.all(grid.values == 0.0)
        assert "all_zero_charges" in grid.warnings

    def test_softening_caps_near_singularity(self):
        mol = Molecule(name="q", atoms=(
            Atom(element="H", position=[0.0, 0.0, 0.0], partial_charge=1.0),))
        geom = build_density_grid(mol, spacing=0.5, padding=2.0)
        grid = build_esp_grid(mol, geom)
        assert grid.values.max() <= 1.0 / ESP_SOFTENING + 1e-12


class TestFukui:
    def test_matches_three_grid_second_difference(self):
        mol = Molecule(name="trio", atoms=(
            Atom(element="O", position=[0.0, 0.0, 0.0], partial_charge=-0.4),
            Atom(element="H", position=[0.9, 0.0, 0.0], partial_charge=0.3),
            Atom(element="H", position=[-0.3, 0.9, 0.0], partial_charge=0.1),
        ))
        geom = build_density_grid(mol, spacing=0.5, padding=3.0)
        delta = 0.1
        grid = build_fukui_dual_grid(mol, geom, delta=delta)
        charges = mol.partial_charges()
        pos = mol.positions()
        pts = grid_points(geom)

        def esp_of(q):
            vals = np.zeros(len(pts))
            for qi, pi in zip(q, pos):
                r = np.linalg.norm(pts - pi, axis=1)
                vals += qi / np.maximum(r, ESP_SOFTENING)
            return vals

        v0 = esp_of(charges)
        vp = esp_of(perturbed_charges(charges, +delta))
        vm = esp_of(perturbed_charges(charges, -delta))
        expected = (vp - 2.0 * v0 + vm) / delta**2
        assert grid.values == pytest.approx(expected, abs=1e-10)

    def test_fukui_nonzero_for_uneven_charges(self):
        mol = Molecule(name="duo", atoms=(
            Atom(element="O", position=[0.0, 0.0, 0.0], partial_charge=-0.5),
            Atom(element="H", position=[1.0, 0.0, 0.0], partial_charge=0.5),
        ))
        geom = build_density_grid(mol, spacing=0.5, padding=2.0)
        grid = build_fukui_dual_grid(mol, geom)
        assert np.max(np.abs(grid.values)) > 0.0

    def test_perturbed_charges_redistribute_by_magnitude(self):
        q = np.array([-0.5, 0.3, 0.2])
        qp = perturbed_charges(q, 0.1)
        assert qp.sum() == pytest.approx(q.sum() + 0.1, abs=1e-12)
        # the weights are |q|-proportional, so the biggest charge moves most
        assert abs(qp[0] - q[0]) > abs(qp[2] - q[2])

    def test_nonpositive_delta_rejected(self):
        mol = carbon_atom()
        geom = build_density_grid(mol, spacing=0.5, padding=2.0)
        with pytest.raises(ValueError):
            build_fukui_dual_grid(mol, geom, delta=0.0)


class TestTrilinear:
    def test_exact_at_grid_nodes(self):
        grid = build_density_grid(water(), spacing=0.5, padding=2.0)
        xs, ys, zs = (grid.axis_coords(a) for a in range(3))
        view = grid.grid3d()
        for idx in [(0, 0, 0), (2, 1, 3), (1, 2, 0)]:
            p = np.array([xs[idx[0]], ys[idx[1]], zs[idx[2]]])
            assert trilinear_sample(grid, p) == pytest.approx(view[idx], abs=1e-12)

    def test_linear_field_interpolated_exactly(self):
        # trilinear interpolation reproduces any affine field exactly
        mol = carbon_atom()
        grid = build_density_grid(mol, spacing=0.5, padding=2.0)
        pts = grid_points(grid)
        lin = 2.0 * pts[:, 0] - 0.5 * pts[:, 1] + 0.25 * pts[:, 2] + 1.0
        from dataclasses import replace
        lingrid = replace(grid, values=np.ascontiguousarray(lin))
        rng = np.random.default_rng(1)
        lo, hi = grid.origin, grid.max_corner()
        probes = rng.uniform(lo, hi, size=(40, 3))
        got = trilinear_sample_many(lingrid, probes)
        expected = (2.0 * probes[:, 0] - 0.5 * probes[:, 1]
                    + 0.25 * probes[:, 2] + 1.0)
        assert got == pytest.approx(expected, abs=1e-9)

    def test_out_of_bounds_rejected(self):
        grid = build_density_grid(carbon_atom(), spacing=0.5, padding=2.0)
        with pytest.raises(ValueError):
            trilinear_sample(grid, grid.origin - 1.0)
