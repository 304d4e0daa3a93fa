"""Canonical frames, rigid transforms, and rotation-stability challenges."""

from dataclasses import dataclass, replace

import numpy as np
import pytest

from amptcr.alignment import (AmbiguousAlignmentError, CanonicalFrame,
                              ChallengeReport, apply_frame, canonical_frame,
                              identity_frame, nn_rmsd, random_rotation,
                              rotation_challenge)
from amptcr.chemio import Atom, Molecule


@dataclass(frozen=True)
class PointSet:
    positions: np.ndarray
    scalars: np.ndarray


def asymmetric_cloud(seed=0, n=40):
    rng = np.random.default_rng(seed)
    pos = rng.normal(size=(n, 3)) * np.array([2.0, 1.3, 0.7])
    pos += 0.3 * pos**2 / (1.0 + np.abs(pos))  # break the moment symmetry
    return PointSet(positions=pos, scalars=rng.normal(size=n))


class TestCanonicalFrame:
    def test_idempotent(self):
        cloud = asymmetric_cloud()
        frame = canonical_frame(cloud)
        aligned = apply_frame(cloud, frame)
        again = canonical_frame(aligned)
        assert again.rotation == pytest.approx(np.eye(3), abs=1e-9)
        assert again.translation == pytest.approx(np.zeros(3), abs=1e-9)

    def test_rotation_invariance(self):
        cloud = asymmetric_cloud(seed=4)
        base = apply_frame(cloud, canonical_frame(cloud))
        rng = np.random.default_rng(11)
        for _ in range(5):
            rot = random_rotation(rng)
            shifted = replace(cloud, positions=cloud.positions @ rot.T + 1.7)
            aligned = apply_frame(shifted, canonical_frame(shifted))
            err = np.abs(aligned.positions - base.positions).max()
            radius = np.linalg.norm(base.positions, axis=1).max()
            assert err < 1e-6 * radius

    def test_rotation_is_proper(self):
        frame = canonical_frame(asymmetric_cloud(seed=2))
        assert np.linalg.det(frame.rotation) == pytest.approx(1.0, abs=1e-12)
        assert frame.rotation @ frame.rotation.T == pytest.approx(
            np.eye(3), abs=1e-12)

    def test_centroid_removed(self):
        cloud = asymmetric_cloud(seed=3)
        aligned = apply_frame(cloud, canonical_frame(cloud))
        assert aligned.positions.mean(axis=0) == pytest.approx(
            np.zeros(3), abs=1e-12)

    def test_axes_ordered_by_variance(self):
        cloud = asymmetric_cloud(seed=5)
        aligned = apply_frame(cloud, canonical_frame(cloud))
        var = aligned.positions.var(axis=0)
        assert var[0] >= var[1] >= var[2]

    def test_scalar_moment_fixes_sign(self):
        # mirror-symmetric positions, scalars break the tie along x
        pos = np.array([[1.0, 0, 0], [-1.0, 0, 0], [2.0, 0.5, 0.2],
                        [-2.0, -0.5, -0.2], [0.5, 1.5, -0.3], [-0.5, -1.5, 0.3]])
        scalars = np.array([1.0, -1.0, 2.0, -2.0, 0.5, -0.5])
        fplus = canonical_frame(PointSet(pos, scalars))
        fminus = canonical_frame(PointSet(pos, -scalars))
        aplus = fplus.transform(pos)
        aminus = fminus.transform(pos)
        # flipping every scalar flips the canonical x axis
        assert np.abs(aplus[:, 0] + aminus[:, 0]).max() < 1e-9

    def test_degenerate_cloud_rejected(self):
        # perfect sphere sampling: all eigenvalues equal
        u = np.linspace(0, 2 * np.pi, 7, endpoint=False)
        ring = np.stack([np.cos(u), np.sin(u), np.zeros_like(u)], axis=1)
        cloud = PointSet(
            positions=np.concatenate([ring, ring @ np.diag([1.0, 1.0, 1.0])]),
            scalars=np.zeros(14),
        )
        with pytest.raises(AmbiguousAlignmentError):
            canonical_frame(cloud)

    def test_too_few_points(self):
        with pytest.raises(ValueError):
            canonical_frame(PointSet(np.zeros((1, 3)), np.zeros(1)))


class TestFrameObject:
    def test_transform_matches_formula(self):
        frame = canonical_frame(asymmetric_cloud(seed=6))
        pts = np.random.default_rng(0).normal(size=(5, 3))
        manual = (pts + frame.translation) @ frame.rotation.T
        assert frame.transform(pts) == pytest.approx(manual, abs=0)

    def test_identity_frame(self):
        f = identity_frame()
        pts = np.arange(12.0).reshape(4, 3)
        assert f.transform(pts) == pytest.approx(pts, abs=0)

    def test_invalid_rotation_rejected(self):
        with pytest.raises(ValueError):
            CanonicalFrame(rotation=np.eye(3) * 2.0, translation=np.zeros(3))
        with pytest.raises(ValueError):
            CanonicalFrame(rotation=np.diag([1.0, 1.0, -1.0]),
                           translation=np.zeros(3))

    def test_apply_frame_rotates_vector_channels(self):
        @dataclass(frozen=True)
        class Layout:
            vector_spans: tuple

        @dataclass(frozen=True)
        class Cloud:
            positions: np.ndarray
            scalars: np.ndarray
            topo: np.ndarray
            layout: Layout

        base = asymmetric_cloud(seed=7)
        vecs = np.random.default_rng(1).normal(size=(len(base.positions), 3))
        extra = np.random.default_rng(2).normal(size=(len(base.positions), 2))
        topo = np.concatenate([vecs, extra], axis=1)
        cloud = Cloud(base.positions, base.scalars, topo,
                      Layout(vector_spans=((0, 3),)))
        frame = canonical_frame(cloud)
        out = apply_frame(cloud, frame)
        assert out.topo[:, :3] == pytest.approx(vecs @ frame.rotation.T)
        assert out.topo[:, 3:] == pytest.approx(extra, abs=0)


class TestRmsd:
    def test_identical_sets_zero(self):
        pts = asymmetric_cloud().positions
        assert nn_rmsd(pts, pts) == 0.0

    def test_symmetric(self):
        a = asymmetric_cloud(seed=1).positions
        b = asymmetric_cloud(seed=2).positions
        assert nn_rmsd(a, b) == pytest.approx(nn_rmsd(b, a), abs=0)

    def test_known_offset(self):
        a = np.zeros((1, 3))
        b = np.array([[3.0, 4.0, 0.0]])
        assert nn_rmsd(a, b) == pytest.approx(5.0)


class TestRandomRotation:
    def test_proper_orthonormal(self):
        rng = np.random.default_rng(9)
        for _ in range(20):
            r = random_rotation(rng)
            assert r @ r.T == pytest.approx(np.eye(3), abs=1e-12)
            assert np.linalg.det(r) == pytest.approx(1.0, abs=1e-12)

    def test_seeded_stream_reproducible(self):
        a = random_rotation(np.random.default_rng(5))
        b = random_rotation(np.random.default_rng(5))
        assert a == pytest.approx(b, abs=0)


class TestChallenge:
    @staticmethod
    def _cloud_from_mol(mol):
        pos = np.array([a.position for a in mol.atoms])
        scalars = np.array([a.partial_charge for a in mol.atoms])
        return PointSet(positions=pos, scalars=scalars)

    @staticmethod
    def _mol(seed=0, n=15):
        rng = np.random.default_rng(seed)
        pos = rng.normal(size=(n, 3)) * np.array([2.0, 1.2, 0.8]) * 1.5
        atoms = tuple(
            Atom(element="C", position=p, partial_charge=float(rng.normal()))
            for p in pos)
        return Molecule(name="m", atoms=atoms)

    def test_aligning_build_recovers_pose(self):
        mol = self._mol(seed=3)

        def build(m):
            cloud = self._cloud_from_mol(m)
            frame = canonical_frame(cloud)
            return apply_frame(cloud, frame), frame

        report = rotation_challenge(mol, build, n_trials=8, seed=21)
        assert report.trials == 8
        assert report.failures == 0
        assert report.max_rmsd < 1e-9
        assert report.success_rate == 1.0

    def test_non_aligning_build_fails(self):
        mol = self._mol(seed=4)

        def build(m):
            return self._cloud_from_mol(m), identity_frame()

        report = rotation_challenge(mol, build, n_trials=6, seed=2)
        assert report.mean_rmsd > 0.05
        assert report.success_rate < 1.0

    def test_failures_counted_and_excluded(self):
        mol = self._mol(seed=5)
        calls = {"n": 0}

        def build(m):
            calls["n"] += 1
            if calls["n"] % 2 == 0:
                raise ValueError("synthetic build failure")
            cloud = self._cloud_from_mol(m)
            frame = canonical_frame(cloud)
            return apply_frame(cloud, frame), frame

        report = rotation_challenge(mol, build, n_trials=6, seed=1)
        assert report.failures == 3
        assert report.max_rmsd < 1e-9

    def test_all_failures_raises(self):
        mol = self._mol(seed=6)

        def build(m):
            raise ValueError("always fails")

        with pytest.raises(ValueError):
            rotation_challenge(mol, build, n_trials=4, seed=0)

    def test_too_few_trials(self):
        mol = self._mol(seed=7)
        with pytest.raises(ValueError):
            rotation_challenge(mol, lambda m: None, n_trials=1, seed=0)

    def test_report_json_schema(self):
        report = ChallengeReport(
            trials=5, mean_rmsd=0.01, max_rmsd=0.02, sign_flips=(1, 0, 2),
            success_rate=0.9, rmsd_threshold=0.05, failures=1)
        d = report.to_json_dict()
        assert d == {
            "trials": 5, "mean_rmsd": 0.01, "max_rmsd": 0.02,
            "sign_flips": [1, 0, 2], "success_rate": 0.9,
            "rmsd_threshold": 0.05, "failures": 1,
        }
