"""Aligned, property-annotated molecular surface point clouds.

Pipeline: structure ingestion -> scalar fields -> isosurface -> annotated,
canonically aligned point clouds -> archives, plus a point-cloud network
and an evaluation kit on top.
"""

from .alignment import (AmbiguousAlignmentError, CanonicalFrame, ChallengeReport,
                        canonical_frame, nn_rmsd, rotation_challenge)
from .chemio import (Atom, ChargeConvergenceError, Molecule, StructureParseError,
                     assign_charges, derive_bonds, molecular_weight,
                     parse_structure, transform_molecule)
from .cloudstore import (AmptcrCloud, ArchiveFormatError, ChannelLayout, CloudMeta,
                         jitter, read_archive, write_archive)
from .evalkit import (CalibrationError, CalibrationParams, FoldPlan, FoldRunSummary,
                      binarize_mic, calibrate, fold_runner, metrics, ols_fit,
                      roc_auc, roc_points)
from .fieldgen import (GridBudgetError, ScalarGrid, build_density_grid,
                       build_esp_grid, build_fukui_dual_grid, trilinear_sample)
from .fingerprint import Fingerprint, morgan_fingerprint, tanimoto
from .neuralcore import (AmptcrModel, ModelConfig, TrainingDivergedError,
                         grad_check, knn_graph, load_model, predict, save_model,
                         train)
from .pipeline import BuildResult, PipelineConfig, build_cloud, config_hash, run_challenge
from .surface import (EmptySurfaceError, SampledSurface, SurfaceMesh,
                      farthest_point_sample, marching_cubes, mesh_area)
from .topology import GeodesicField, TopoDescriptor, geodesic_distances, topology_field

__version__ = "0.1.0"

__all__ = [
    "AmbiguousAlignmentError", "AmptcrCloud", "AmptcrModel", "ArchiveFormatError",
    "Atom", "BuildResult", "CalibrationError", "CalibrationParams",
    "CanonicalFrame", "ChallengeReport", "ChannelLayout", "ChargeConvergenceError",
    "CloudMeta", "EmptySurfaceError", "Fingerprint", "FoldPlan", "FoldRunSummary",
    "GeodesicField", "GridBudgetError", "ModelConfig", "Molecule",
    "PipelineConfig", "SampledSurface", "ScalarGrid", "StructureParseError",
    "SurfaceMesh", "TopoDescriptor", "TrainingDivergedError", "assign_charges",
    "binarize_mic", "build_cloud", "build_density_grid", "build_esp_grid",
    "build_fukui_dual_grid", "calibrate", "canonical_frame", "config_hash",
    "derive_bonds", "farthest_point_sample", "fold_runner", "geodesic_distances",
    "grad_check", "jitter", "knn_graph", "load_model", "marching_cubes",
    "mesh_area", "metrics", "molecular_weight", "morgan_fingerprint", "nn_rmsd",
    "ols_fit", "parse_structure", "predict", "read_archive", "roc_auc",
    "roc_points", "rotation_challenge", "run_challenge", "save_model", "tanimoto",
    "topology_field", "train", "transform_molecule", "trilinear_sample",
    "write_archive",
]
