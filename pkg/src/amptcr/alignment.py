"""Canonical pose for surface clouds, and a rotation-robustness challenge.

The canonical frame translates the cloud centroid to the origin and
rotates onto the covariance eigenbasis (descending eigenvalue order).
Axis signs come from the scalar-weighted third moment along each axis,
falling back to the unweighted geometric moment, then to +1; the frame
is forced right-handed by flipping the last axis if needed.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Callable, Sequence

import numpy as np
from scipy.spatial import cKDTree

EIGEN_GAP_MIN = 1e-12
MOMENT_TIEBREAK = 1e-9


class AmbiguousAlignmentError(ValueError):
    """Covariance spectrum is too degenerate to define a canonical frame."""


@dataclass(frozen=True)
class CanonicalFrame:
    """Rigid map x -> rotation @ (x + translation)."""

    rotation: np.ndarray  # (3, 3) right-handed orthonormal rows
    translation: np.ndarray  # (3,)

    def __post_init__(self):
        r = np.ascontiguousarray(self.rotation, dtype=np.float64)
        t = np.ascontiguousarray(self.translation, dtype=np.float64)
        if r.shape != (3, 3) or t.shape != (3,):
            raise ValueError("rotation must be (3, 3) and translation (3,)")
        if not np.allclose(r @ r.T, np.eye(3), atol=1e-9):
            raise ValueError("rotation is not orthonormal")
        if np.linalg.det(r) < 0:
            raise ValueError("rotation is not right-handed")
        object.__setattr__(self, "rotation", r)
        object.__setattr__(self, "translation", t)

    def transform(self, points: np.ndarray) -> np.ndarray:
        return (np.asarray(points, dtype=np.float64) + self.translation) @ self.rotation.T

    def rotate_vectors(self, vectors: np.ndarray) -> np.ndarray:
        return np.asarray(vectors, dtype=np.float64) @ self.rotation.T


def identity_frame() -> CanonicalFrame:
    return CanonicalFrame(rotation=np.eye(3), translation=np.zeros(3))


def _axis_sign(centered: np.ndarray, scalars: np.ndarray, axis: np.ndarray) -> float:
    proj = centered @ axis
    cubes = proj ** 3
    weighted = float(np.sum(scalars * cubes))
    if abs(weighted) >= MOMENT_TIEBREAK:
        return 1.0 if weighted > 0 else -1.0
    geometric = float(np.sum(cubes))
    if abs(geometric) >= MOMENT_TIEBREAK:
        return 1.0 if geometric > 0 else -1.0
    return 1.0


def canonical_frame(cloud) -> CanonicalFrame:
    """Frame for any object with .positions (N, 3) and .scalars (N,).

    Raises AmbiguousAlignmentError when the smallest covariance eigen-gap
    falls below 1e-12 (the eigenbasis is then numerically arbitrary).
    """
    positions = np.asarray(cloud.positions, dtype=np.float64)
    scalars = np.asarray(cloud.scalars, dtype=np.float64)
    if positions.ndim != 2 or positions.shape[1] != 3 or len(positions) < 2:
        raise ValueError("need at least two 3D positions")
    centroid = positions.mean(axis=0)
    centered = positions - centroid
    cov = centered.T @ centered / len(centered)
    evals, evecs = np.linalg.eigh(cov)  # ascending
    order = np.argsort(evals)[::-1]
    evals = evals[order]
    evecs = evecs[:, order]
    gaps = np.diff(evals[::-1])
    if np.min(gaps) < EIGEN_GAP_MIN:
        raise AmbiguousAlignmentError(
            f"covariance eigen-gap {np.min(gaps):.3e} below {EIGEN_GAP_MIN:g}"
        )
    axes = []
    for k in range(3):
        e = evecs[:, k]
        axes.append(_axis_sign(centered, scalars, e) * e)
    rot = np.stack(axes)
    if np.linalg.det(rot) < 0:
        rot[2] = -rot[2]
    return CanonicalFrame(rotation=rot, translation=-centroid)


def apply_frame(cloud, frame: CanonicalFrame):
    """Return a copy of the cloud with positions mapped and vector channels rotated.

    Works on any frozen dataclass with .positions; objects that also carry
    .topo and a layout with vector spans get those spans rotated too.
    """
    updates = {"positions": frame.transform(cloud.positions)}
    if hasattr(cloud, "topo") and hasattr(cloud, "layout"):
        topo = np.array(cloud.topo, dtype=np.float64)
        for start, stop in cloud.layout.vector_spans:
            topo[:, start:stop] = frame.rotate_vectors(topo[:, start:stop])
        updates["topo"] = topo
    return replace(cloud, **updates)


def random_rotation(rng: np.random.Generator) -> np.ndarray:
    """Uniform random rotation matrix from a normalized 4-normal quaternion."""
    q = rng.normal(size=4)
    q /= np.linalg.norm(q)
    w, x, y, z = q
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
        [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
        [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
    ])


def nn_rmsd(a: np.ndarray, b: np.ndarray) -> float:
    """Symmetric nearest-neighbor RMSD between two point sets."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    d_ab, _ = cKDTree(b).query(a)
    d_ba, _ = cKDTree(a).query(b)
    return float(np.sqrt((np.sum(d_ab ** 2) + np.sum(d_ba ** 2)) / (len(a) + len(b))))


@dataclass(frozen=True)
class ChallengeReport:
    trials: int
    mean_rmsd: float
    max_rmsd: float
    sign_flips: tuple[int, int, int]  # per canonical axis, relative to trial 0
    success_rate: float
    rmsd_threshold: float
    failures: int = 0

    def to_json_dict(self) -> dict:
        return {
            "trials": self.trials,
            "mean_rmsd": self.mean_rmsd,
            "max_rmsd": self.max_rmsd,
            "sign_flips": list(self.sign_flips),
            "success_rate": self.success_rate,
            "rmsd_threshold": self.rmsd_threshold,
            "failures": self.failures,
        }


def rotation_challenge(mol, build_fn: Callable, n_trials: int, seed: int,
                       rmsd_threshold: float = 0.05) -> ChallengeReport:
    """Rebuild the cloud under random rigid poses and compare trials pairwise.

    build_fn(molecule) must return (cloud, frame) where cloud has canonical
    .positions and frame is the CanonicalFrame the build applied. RMSD
    statistics and the success rate run over the nearest-neighbor RMSD of
    every unordered pair of successful trials; sign flips count, per axis,
    trials whose effective rotation row opposes the first successful
    trial's. Trials whose build raises are excluded and counted.
    """
    from .chemio import transform_molecule

    if n_trials < 2:
        raise ValueError("need at least two trials")
    rng = np.random.default_rng(seed)
    clouds = []
    effective = []
    failures = 0
    for _ in range(n_trials):
        pose = random_rotation(rng)
        posed = transform_molecule(mol, rotation=pose)
        try:
            cloud, frame = build_fn(posed)
        except (ValueError, ArithmeticError):
            failures += 1
            continue
        clouds.append(np.asarray(cloud.positions, dtype=np.float64))
        effective.append(frame.rotation @ pose)

    if len(clouds) < 2:
        raise ValueError(f"only {len(clouds)} trials succeeded; need two for pairs")
    flips = [0, 0, 0]
    for m in effective[1:]:
        for axis in range(3):
            if float(np.dot(m[axis], effective[0][axis])) < 0:
                flips[axis] += 1
    rmsds = np.array([nn_rmsd(clouds[i], clouds[j])
                      for i in range(len(clouds))
                      for j in range(i + 1, len(clouds))])
    return ChallengeReport(
        trials=n_trials,
        mean_rmsd=float(rmsds.mean()),
        max_rmsd=float(rmsds.max()),
        sign_flips=(flips[0], flips[1], flips[2]),
        success_rate=float(np.mean(rmsds < rmsd_threshold)),
        rmsd_threshold=rmsd_threshold,
        failures=failures,
    )
