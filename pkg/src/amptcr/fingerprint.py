"""Circular substructure fingerprints and Tanimoto similarity.

Each atom starts from a hashed invariant tuple (atomic number, heavy
degree, formal charge, hydrogen count); every iteration rehashes the
atom with its sorted neighbor invariants and sets one bit per (atom,
radius) pair. Atom order therefore never affects the result, and every
bit present at radius r-1 is present at radius r.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import elements
from .chemio import Molecule

NBITS_DEFAULT = 2048
RADIUS_DEFAULT = 2

_FNV_OFFSET = 0xCBF29CE484222325
_FNV_PRIME = 0x100000001B3
_MASK64 = 0xFFFFFFFFFFFFFFFF

_TAG_SEED = 0
_TAG_ITER = 1
_BOND_PLACEHOLDER = 1  # single bond order stand-in; bond typing is out of scope


def fnv1a64(data: bytes) -> int:
    """64-bit FNV-1a hash."""
    h = _FNV_OFFSET
    for byte in data:
        h = ((h ^ byte) * _FNV_PRIME) & _MASK64
    return h


def hash_ints(*values: int) -> int:
    """Hash integers through a canonical little-endian 8-byte encoding."""
    buf = b"".join((v & _MASK64).to_bytes(8, "little") for v in values)
    return fnv1a64(buf)


@dataclass(frozen=True)
class Fingerprint:
    """Fixed-length bitset; bit k lives at byte k >> 3, bit k & 7 (LSB first)."""

    bits: bytes
    nbits: int
    radius: int

    def __post_init__(self):
        if self.nbits <= 0 or self.nbits & (self.nbits - 1):
            raise ValueError(f"nbits must be a power of two, got {self.nbits}")
        if self.nbits % 8 or len(self.bits) != self.nbits // 8:
            raise ValueError("bits length does not match nbits")
        if self.radius < 0:
            raise ValueError("radius must be >= 0")

    def on_bits(self) -> np.ndarray:
        return np.flatnonzero(self.to_array())

    def to_array(self) -> np.ndarray:
        """Dense 0/1 float array of length nbits."""
        raw = np.frombuffer(self.bits, dtype=np.uint8)
        return np.unpackbits(raw, bitorder="little").astype(np.float64)

    def popcount(self) -> int:
        return int.from_bytes(self.bits, "little").bit_count()

    def hex(self) -> str:
        return self.bits.hex()

    @classmethod
    def from_hex(cls, text: str, nbits: int, radius: int) -> "Fingerprint":
        return cls(bits=bytes.fromhex(text), nbits=nbits, radius=radius)


def _bits_from_set(on: set[int], nbits: int) -> bytes:
    acc = 0
    for b in on:
        acc |= 1 << b
    return acc.to_bytes(nbits // 8, "little")


def morgan_fingerprint(mol: Molecule, radius: int = RADIUS_DEFAULT,
                       nbits: int = NBITS_DEFAULT) -> Fingerprint:
    """Circular fingerprint over the molecule's bond graph.

    Invariant under any relabeling of the atoms: neighbor invariants are
    sorted before hashing, and bit positions depend only on hashes.
    """
    if radius < 0:
        raise ValueError("radius must be >= 0")
    n = mol.n_atoms
    nbrs: list[list[int]] = [[] for _ in range(n)]
    for i, j in mol.bonds:
        nbrs[i].append(j)
        nbrs[j].append(i)

    h_count = [sum(1 for j in nbrs[i] if mol.atoms[j].element == "H")
               for i in range(n)]
    inv = [
        hash_ints(_TAG_SEED, elements.atomic_number(a.element), len(nbrs[i]),
                  a.formal_charge, h_count[i])
        for i, a in enumerate(mol.atoms)
    ]
    on = {v % nbits for v in inv}
    for _ in range(radius):
        nxt = []
        for i in range(n):
            env = sorted((_BOND_PLACEHOLDER, inv[j]) for j in nbrs[i])
            flat = [x for pair in env for x in pair]
            nxt.append(hash_ints(_TAG_ITER, inv[i], *flat))
        inv = nxt
        on.update(v % nbits for v in inv)
    return Fingerprint(bits=_bits_from_set(on, nbits), nbits=nbits, radius=radius)


def tanimoto(a: Fingerprint, b: Fingerprint) -> float:
    """|a AND b| / |a OR b|; two empty fingerprints count as identical (1.0)."""
    if a.nbits != b.nbits:
        raise ValueError(f"fingerprint lengths differ: {a.nbits} vs {b.nbits}")
    x = int.from_bytes(a.bits, "little")
    y = int.from_bytes(b.bits, "little")
    union = (x | y).bit_count()
    if union == 0:
        return 1.0
    return (x & y).bit_count() / union
