"""Point-cloud archives and training-time jitter.

Archives are ZIP containers holding NPY-format arrays (positions.npy,
scalars.npy, topo.npy) plus a meta.json, written by a self-contained
NPY/ZIP emitter so the byte layout is fully pinned: little-endian
float32, C order, version 1.0 headers padded to 64 bytes, stored (not
deflated) members with a fixed timestamp. Identical clouds therefore
produce byte-identical files, and any NPZ-aware tool can read them.
"""

from __future__ import annotations

import io
import json
import struct
import zipfile
from dataclasses import dataclass, field, replace
from typing import Mapping, Sequence

import numpy as np

_MAGIC = b"\x93NUMPY"
_VERSION = bytes([1, 0])
_HEADER_ALIGN = 64
_ZIP_DATE = (1980, 1, 1, 0, 0, 0)
_ARRAY_MEMBERS = ("positions", "scalars", "topo")

JITTER_ROT_SIGMA_DEG_DEFAULT = 5.0
JITTER_POS_FRACTION = 0.01  # of the cloud bounding radius, when sigma_pos is None


class ArchiveFormatError(ValueError):
    """Archive member is missing or malformed."""


@dataclass(frozen=True)
class ChannelLayout:
    """Names of topology channels plus index spans of 3-vector channels."""

    names: tuple[str, ...]
    vector_spans: tuple[tuple[int, int], ...]

    def __post_init__(self):
        names = tuple(str(n) for n in self.names)
        spans = tuple((int(a), int(b)) for a, b in self.vector_spans)
        for a, b in spans:
            if not (0 <= a < b <= len(names)):
                raise ValueError(f"vector span ({a}, {b}) out of channel range")
            if b - a != 3:
                raise ValueError("vector spans must cover exactly 3 channels")
        object.__setattr__(self, "names", names)
        object.__setattr__(self, "vector_spans", spans)

    @property
    def n_channels(self) -> int:
        return len(self.names)

    def to_dict(self) -> dict:
        return {"names": list(self.names),
                "vector_spans": [list(s) for s in self.vector_spans]}

    @classmethod
    def from_dict(cls, d: Mapping) -> "ChannelLayout":
        return cls(names=tuple(d["names"]),
                   vector_spans=tuple(tuple(s) for s in d["vector_spans"]))


@dataclass(frozen=True)
class CloudMeta:
    name: str
    scalar_kind: str
    n_points: int
    layout: ChannelLayout
    config_hash: str
    warnings: tuple[str, ...] = field(default_factory=tuple)
    fp_hex: str = ""  # Morgan fingerprint bits, so archives are train-ready
    fp_nbits: int = 0
    fp_radius: int = 0

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "scalar_kind": self.scalar_kind,
            "n_points": self.n_points,
            "layout": self.layout.to_dict(),
            "config_hash": self.config_hash,
            "warnings": list(self.warnings),
            "fp_hex": self.fp_hex,
            "fp_nbits": self.fp_nbits,
            "fp_radius": self.fp_radius,
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "CloudMeta":
        return cls(name=d["name"], scalar_kind=d["scalar_kind"],
                   n_points=int(d["n_points"]),
                   layout=ChannelLayout.from_dict(d["layout"]),
                   config_hash=d["config_hash"],
                   warnings=tuple(d.get("warnings", ())),
                   fp_hex=d.get("fp_hex", ""),
                   fp_nbits=int(d.get("fp_nbits", 0)),
                   fp_radius=int(d.get("fp_radius", 0)))


@dataclass(frozen=True)
class AmptcrCloud:
    """Aligned, annotated surface cloud ready for storage or training.

    Arrays may be float64 in memory; archives store float32.
    """

    positions: np.ndarray  # (N, 3)
    scalars: np.ndarray  # (N,) in [-1, 1]
    topo: np.ndarray  # (N, C) per ChannelLayout
    meta: CloudMeta

    def __post_init__(self):
        p = np.ascontiguousarray(self.positions)
        s = np.ascontiguousarray(self.scalars)
        t = np.ascontiguousarray(self.topo)
        object.__setattr__(self, "positions", p)
        object.__setattr__(self, "scalars", s)
        object.__setattr__(self, "topo", t)

    @property
    def layout(self) -> ChannelLayout:
        return self.meta.layout

    @property
    def n_points(self) -> int:
        return len(self.positions)

    def validate(self):
        n = len(self.positions)
        if self.positions.shape != (n, 3):
            raise ArchiveFormatError("positions must be (N, 3)")
        if self.scalars.shape != (n,):
            raise ArchiveFormatError("scalars must be (N,)")
        if self.topo.shape != (n, self.layout.n_channels):
            raise ArchiveFormatError(
                f"topo must be (N, {self.layout.n_channels}), got {self.topo.shape}"
            )
        if self.meta.n_points != n:
            raise ArchiveFormatError("meta.n_points disagrees with array length")
        for name, arr in (("positions", self.positions), ("scalars", self.scalars),
                          ("topo", self.topo)):
            if not np.all(np.isfinite(arr)):
                raise ArchiveFormatError(f"{name} contains non-finite values")
        if self.scalars.size and np.max(np.abs(self.scalars)) > 1.0 + 1e-6:
            raise ArchiveFormatError("scalars exceed the normalized range [-1, 1]")


def npy_bytes(arr: np.ndarray) -> bytes:
    """Serialize to NPY version 1.0: little-endian float32, C order."""
    arr = np.ascontiguousarray(arr, dtype="<f4")
    header = ("{'descr': '<f4', 'fortran_order': False, 'shape': "
              f"{arr.shape!r}, }}")
    base = len(_MAGIC) + len(_VERSION) + 2 + len(header) + 1
    pad = (-base) % _HEADER_ALIGN
    header_bytes = (header + " " * pad + "\n").encode("latin1")
    return (_MAGIC + _VERSION + struct.pack("<H", len(header_bytes))
            + header_bytes + arr.tobytes())


def parse_npy(data: bytes, member: str = "<buffer>") -> np.ndarray:
    """Parse the NPY subset written by npy_bytes."""
    if data[:6] != _MAGIC:
        raise ArchiveFormatError(f"{member}: bad NPY magic")
    if data[6:8] != _VERSION:
        raise ArchiveFormatError(f"{member}: unsupported NPY version {data[6:8]!r}")
    (hlen,) = struct.unpack("<H", data[8:10])
    header = data[10:10 + hlen].decode("latin1")
    try:
        info = eval(header, {"__builtins__": {}}, {"False": False, "True": True})
    except Exception as exc:
        raise ArchiveFormatError(f"{member}: malformed NPY header") from exc
    if info.get("descr") != "<f4" or info.get("fortran_order"):
        raise ArchiveFormatError(f"{member}: expected little-endian float32 C-order")
    shape = tuple(int(x) for x in info["shape"])
    body = data[10 + hlen:]
    count = int(np.prod(shape)) if shape else 1
    if len(body) != 4 * count:
        raise ArchiveFormatError(f"{member}: payload size does not match shape {shape}")
    return np.frombuffer(body, dtype="<f4").reshape(shape).copy()


def _canonical_json(obj) -> bytes:
    return (json.dumps(obj, sort_keys=True, separators=(",", ":")) + "\n").encode("utf-8")


def _write_zip(path, members: Sequence[tuple[str, bytes]]):
    buf = io.BytesIO()
    with zipfile.ZipFile(buf, "w", compression=zipfile.ZIP_STORED) as zf:
        for name, data in members:
            info = zipfile.ZipInfo(name, date_time=_ZIP_DATE)
            zf.writestr(info, data)
    if hasattr(path, "write"):
        path.write(buf.getvalue())
    else:
        with open(path, "wb") as fh:
            fh.write(buf.getvalue())


def write_array_archive(path, arrays: Mapping[str, np.ndarray], meta: Mapping):
    """Generic archive: each array as <name>.npy (float32) plus meta.json."""
    members = [(f"{name}.npy", npy_bytes(arr)) for name, arr in arrays.items()]
    members.append(("meta.json", _canonical_json(dict(meta))))
    _write_zip(path, members)


def read_array_archive(path) -> tuple[dict[str, np.ndarray], dict]:
    arrays = {}
    meta = None
    with zipfile.ZipFile(path, "r") as zf:
        for name in zf.namelist():
            data = zf.read(name)
            if name.endswith(".npy"):
                arrays[name[:-4]] = parse_npy(data, member=name)
            elif name == "meta.json":
                meta = json.loads(data.decode("utf-8"))
    if meta is None:
        raise ArchiveFormatError("archive has no meta.json")
    return arrays, meta


def write_archive(cloud: AmptcrCloud, path):
    """Write the cloud; identical clouds yield byte-identical files."""
    cloud.validate()
    arrays = {"positions": cloud.positions, "scalars": cloud.scalars,
              "topo": cloud.topo}
    write_array_archive(path, arrays, cloud.meta.to_dict())


def read_archive(path) -> AmptcrCloud:
    arrays, meta_dict = read_array_archive(path)
    missing = [m for m in _ARRAY_MEMBERS if m not in arrays]
    if missing:
        raise ArchiveFormatError(f"archive missing members: {missing}")
    meta = CloudMeta.from_dict(meta_dict)
    cloud = AmptcrCloud(positions=arrays["positions"].astype(np.float64),
                        scalars=arrays["scalars"].astype(np.float64),
                        topo=arrays["topo"].astype(np.float64), meta=meta)
    cloud.validate()
    return cloud


def bounding_radius(positions: np.ndarray) -> float:
    positions = np.asarray(positions, dtype=np.float64)
    centroid = positions.mean(axis=0)
    return float(np.linalg.norm(positions - centroid, axis=1).max())


def _rotation_about(axis: np.ndarray, angle: float) -> np.ndarray:
    k = np.array([[0.0, -axis[2], axis[1]],
                  [axis[2], 0.0, -axis[0]],
                  [-axis[1], axis[0], 0.0]])
    return np.eye(3) + np.sin(angle) * k + (1.0 - np.cos(angle)) * (k @ k)


def jitter(cloud: AmptcrCloud, sigma_pos: float | None = None,
           rot_sigma_deg: float = JITTER_ROT_SIGMA_DEG_DEFAULT,
           seed: int = 0) -> AmptcrCloud:
    """Training augmentation: per-point gaussian noise plus one global rotation.

    sigma_pos defaults to 1% of the cloud bounding radius. Scalars are
    untouched; the 3-vector topology spans rotate with the cloud, so t1
    stays unit length.
    """
    rng = np.random.default_rng(seed)
    pos = np.asarray(cloud.positions, dtype=np.float64)
    if sigma_pos is None:
        sigma_pos = JITTER_POS_FRACTION * bounding_radius(pos)
    noise = rng.normal(scale=sigma_pos, size=pos.shape) if sigma_pos > 0 else 0.0
    axis = rng.normal(size=3)
    while np.linalg.norm(axis) < 1e-12:
        axis = rng.normal(size=3)
    axis /= np.linalg.norm(axis)
    angle = rng.normal(scale=np.deg2rad(rot_sigma_deg)) if rot_sigma_deg > 0 else 0.0
    rot = _rotation_about(axis, angle)
    new_pos = (pos + noise) @ rot.T
    topo = np.array(cloud.topo, dtype=np.float64)
    for a, b in cloud.layout.vector_spans:
        topo[:, a:b] = topo[:, a:b] @ rot.T
    return replace(cloud, positions=new_pos, topo=topo)
