"""Structure file to aligned annotated cloud, end to end.

The build runs in two alignment stages. Stage one poses the molecule by
the canonical frame of its atoms (positions weighted by partial charge
for axis signs) whenever the atomic covariance spectrum is cleanly
non-degenerate. Grid, mesh, and sampling then happen in that pose, so
the chaotic greedy steps (farthest-point picks, voxel placement) see
bit-identical inputs regardless of the original orientation. Stage two
applies the cloud-level canonical frame to the sampled points; for
degenerate molecules (planar rings, near-spherical tops) stage one is
skipped and stage two alone decides the pose, which can flip axis signs
between rebuilds. The returned frame composes both stages, mapping
original molecule coordinates into the canonical cloud frame.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, replace
from typing import Callable

import numpy as np

from . import alignment, cloudstore, fieldgen, surface, topology
from .chemio import Molecule, assign_charges, derive_bonds, transform_molecule
from .evalkit import FoldPlan
from .fingerprint import Fingerprint, fnv1a64, morgan_fingerprint
from .neuralcore import ModelConfig

ATOM_GAP_MIN = 1e-6  # eigen-gap below this: skip the atom-level pre-pose
SCALAR_KINDS = ("esp", "fukui_dual")


@dataclass(frozen=True)
class PipelineConfig:
    spacing: float = 0.4
    padding: float = 4.0
    isovalue_factor: float = 0.04
    n_points: int = 1024
    scalar_kind: str = "esp"
    radii: tuple[float, ...] = (1.0, 2.0)
    geodesic_cutoff: float = 3.0
    bond_tolerance: float = 1.2
    fukui_delta: float = 0.1
    fp_nbits: int = 2048
    fp_radius: int = 2
    jitter_rot_sigma_deg: float = 5.0
    voxel_budget: int = fieldgen.VOXEL_BUDGET_DEFAULT
    seed: int = 0
    model: ModelConfig = field(default_factory=ModelConfig)
    folds: FoldPlan = field(default_factory=lambda: FoldPlan(mode="kfold_partition", folds=5))

    def __post_init__(self):
        if self.spacing <= 0 or self.padding < 0:
            raise ValueError("spacing must be positive and padding non-negative")
        if not 0.0 < self.isovalue_factor < 1.0:
            raise ValueError("isovalue_factor must be in (0, 1)")
        if self.n_points < 1:
            raise ValueError("n_points must be >= 1")
        if self.scalar_kind not in SCALAR_KINDS:
            raise ValueError(f"scalar_kind must be one of {SCALAR_KINDS}")
        radii = tuple(float(r) for r in self.radii)
        if not radii or any(r <= 0 for r in radii):
            raise ValueError("radii must be non-empty and positive")
        if max(radii) * topology.RING_BAND[1] > self.geodesic_cutoff:
            raise ValueError("geodesic_cutoff too small for the ring band")
        if self.bond_tolerance <= 0 or self.fukui_delta <= 0:
            raise ValueError("bond_tolerance and fukui_delta must be positive")
        object.__setattr__(self, "radii", radii)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["radii"] = list(self.radii)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "PipelineConfig":
        d = dict(d)
        if "model" in d and isinstance(d["model"], dict):
            d["model"] = ModelConfig(**d["model"])
        if "folds" in d and isinstance(d["folds"], dict):
            d["folds"] = FoldPlan(**d["folds"])
        if "radii" in d:
            d["radii"] = tuple(d["radii"])
        return cls(**d)


def config_hash(config: PipelineConfig) -> str:
    """64-bit FNV-1a of the canonical-JSON config, as 16 hex digits."""
    canonical = json.dumps(config.to_dict(), sort_keys=True,
                           separators=(",", ":")).encode("utf-8")
    return f"{fnv1a64(canonical):016x}"


def prepare_molecule(mol: Molecule, config: PipelineConfig) -> Molecule:
    """Derive bonds and ensure partial charges.

    Charges already present in the input (PQR) are kept; otherwise
    electronegativity equalization fills them in.
    """
    mol = derive_bonds(mol, tolerance=config.bond_tolerance)
    scheme = "none" if np.any(mol.partial_charges() != 0.0) else "electronegativity"
    return assign_charges(mol, scheme=scheme)


class _AtomCloudView:
    """Adapter so atoms can feed the cloud-level canonical frame."""

    def __init__(self, mol: Molecule):
        self.positions = mol.positions()
        self.scalars = mol.partial_charges()


def atom_prepose(mol: Molecule) -> alignment.CanonicalFrame | None:
    """Canonical frame of the atom positions, or None when degenerate.

    The frame is exactly rotation-equivariant because it never touches
    the voxel grid; requiring a clear covariance eigen-gap keeps it
    stable under floating-point noise.
    """
    pos = mol.positions()
    if len(pos) < 2:
        return None
    centered = pos - pos.mean(axis=0)
    cov = centered.T @ centered / len(centered)
    evals = np.linalg.eigvalsh(cov)
    if np.min(np.diff(evals)) < ATOM_GAP_MIN:
        return None
    try:
        return alignment.canonical_frame(_AtomCloudView(mol))
    except alignment.AmbiguousAlignmentError:
        return None


@dataclass(frozen=True)
class BuildResult:
    cloud: cloudstore.AmptcrCloud
    frame: alignment.CanonicalFrame  # original molecule coords -> canonical
    mesh: surface.SurfaceMesh  # already in the canonical frame


def _compose_frames(pre: alignment.CanonicalFrame | None,
                    post: alignment.CanonicalFrame) -> alignment.CanonicalFrame:
    if pre is None:
        return post
    rotation = post.rotation @ pre.rotation
    translation = pre.translation + pre.rotation.T @ post.translation
    return alignment.CanonicalFrame(rotation=rotation, translation=translation)


def build_cloud(mol: Molecule, config: PipelineConfig, name: str | None = None,
                with_topology: bool = True) -> BuildResult:
    """Full build: charges, fields, mesh, sampling, topology, alignment."""
    warnings: list[str] = []
    mol = prepare_molecule(mol, config)
    pre = atom_prepose(mol)
    if pre is None:
        warnings.append("atom_frame_skipped")
    else:
        mol = transform_molecule(mol, rotation=pre.rotation,
                                 translation=pre.rotation @ pre.translation)

    density = fieldgen.build_density_grid(mol, spacing=config.spacing,
                                          padding=config.padding,
                                          voxel_budget=config.voxel_budget)
    isovalue = config.isovalue_factor * float(density.values.max())
    mesh = surface.marching_cubes(density, isovalue)

    if config.scalar_kind == "esp":
        scalar_grid = fieldgen.build_esp_grid(mol, density)
    else:
        scalar_grid = fieldgen.build_fukui_dual_grid(mol, density,
                                                     delta=config.fukui_delta)
    warnings.extend(scalar_grid.warnings)
    mesh = surface.annotate_scalars(mesh, scalar_grid)
    mesh = replace(mesh, vertex_scalars=surface.normalize_scalars(mesh.vertex_scalars))

    sampled = surface.farthest_point_sample(mesh, config.n_points)

    layout = cloudstore.ChannelLayout(names=topology.channel_names(config.radii),
                                      vector_spans=topology.vector_spans(config.radii))
    if with_topology:
        descs = topology.topology_field(mesh, sampled.source_vertex,
                                        radii=config.radii,
                                        geodesic_cutoff=config.geodesic_cutoff)
        topo = np.stack([d.channels() for d in descs])
        flags = sorted({f for d in descs for f in d.flags})
        warnings.extend(flags)
    else:
        topo = np.zeros((config.n_points, layout.n_channels))
        warnings.append("topology_skipped")

    try:
        post = alignment.canonical_frame(sampled)
    except alignment.AmbiguousAlignmentError:
        warnings.append("ambiguous_alignment")
        post = alignment.identity_frame()

    fp = morgan_fingerprint(mol, radius=config.fp_radius, nbits=config.fp_nbits)
    meta = cloudstore.CloudMeta(
        name=name if name is not None else mol.name,
        scalar_kind=config.scalar_kind,
        n_points=config.n_points,
        layout=layout,
        config_hash=config_hash(config),
        warnings=tuple(warnings),
        fp_hex=fp.hex(),
        fp_nbits=fp.nbits,
        fp_radius=fp.radius,
    )
    cloud = cloudstore.AmptcrCloud(positions=sampled.positions,
                                   scalars=sampled.scalars, topo=topo, meta=meta)
    cloud = alignment.apply_frame(cloud, post)
    cloud.validate()
    aligned_mesh = replace(mesh, vertices=post.transform(mesh.vertices),
                           vertex_normals=post.rotate_vectors(mesh.vertex_normals))
    return BuildResult(cloud=cloud, frame=_compose_frames(pre, post),
                       mesh=aligned_mesh)


def cloud_fingerprint(cloud: cloudstore.AmptcrCloud) -> Fingerprint:
    """Fingerprint stored in the cloud metadata."""
    meta = cloud.meta
    if not meta.fp_hex or meta.fp_nbits <= 0:
        raise ValueError(f"cloud {meta.name!r} carries no fingerprint")
    return Fingerprint.from_hex(meta.fp_hex, meta.fp_nbits, meta.fp_radius)


def challenge_build_fn(config: PipelineConfig) -> Callable:
    """build_fn for rotation challenges; skips topology for speed."""

    def build(mol: Molecule):
        result = build_cloud(mol, config, with_topology=False)
        return result.cloud, result.frame

    return build


def run_challenge(mol: Molecule, config: PipelineConfig, n_trials: int,
                  seed: int, rmsd_threshold: float = 0.05) -> alignment.ChallengeReport:
    return alignment.rotation_challenge(mol, challenge_build_fn(config),
                                        n_trials=n_trials, seed=seed,
                                        rmsd_threshold=rmsd_threshold)
