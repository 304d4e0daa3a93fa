"""Molecular structure I/O and basic molecular properties.

Supports fixed-column PDB/PQR records and XYZ files. Bonds are always
derived geometrically from covalent radii (CONECT records are ignored);
partial charges come either from the PQR charge column or from a simple
electronegativity-equalization scheme over the bond graph.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from . import elements
from .elements import UnknownElementError

BOND_TOLERANCE_DEFAULT = 1.2

_CHARGE_MAX_SWEEPS = 500
_CHARGE_CONVERGENCE = 1e-6
# Uniform chemical hardness for the equalization scheme, in the same
# (Pauling) units as the electronegativities. Gives ~0.2-0.45 e charges
# for typical polar bonds.
_CHARGE_HARDNESS = 1.0


class StructureParseError(ValueError):
    """Malformed structure file; carries the 1-based line number."""

    def __init__(self, line_number: int, message: str):
        super().__init__(f"line {line_number}: {message}")
        self.line_number = line_number


class ChargeConvergenceError(RuntimeError):
    """Electronegativity equalization failed to converge."""


@dataclass(frozen=True)
class Atom:
    element: str
    position: np.ndarray  # (3,) float64, Angstrom
    partial_charge: float = 0.0
    formal_charge: int = 0

    def __post_init__(self):
        object.__setattr__(self, "element", elements.normalize_symbol(self.element))
        pos = np.asarray(self.position, dtype=np.float64)
        if pos.shape != (3,):
            raise ValueError(f"atom position must be a 3-vector, got shape {pos.shape}")
        if not np.all(np.isfinite(pos)):
            raise ValueError("atom position must be finite")
        object.__setattr__(self, "position", pos)


@dataclass(frozen=True)
class Molecule:
    name: str
    atoms: tuple[Atom, ...]
    bonds: tuple[tuple[int, int], ...] = field(default_factory=tuple)

    def __post_init__(self):
        atoms = tuple(self.atoms)
        if not atoms:
            raise ValueError("molecule must contain at least one atom")
        bonds = tuple(tuple(b) for b in self.bonds)
        seen = set()
        for i, j in bonds:
            if not (0 <= i < len(atoms)) or not (0 <= j < len(atoms)):
                raise ValueError(f"bond ({i}, {j}) references a missing atom")
            if i == j:
                raise ValueError(f"self-bond on atom {i}")
            if i >= j:
                raise ValueError(f"bond ({i}, {j}) must be ordered i < j")
            if (i, j) in seen:
                raise ValueError(f"duplicate bond ({i}, {j})")
            seen.add((i, j))
        object.__setattr__(self, "atoms", atoms)
        object.__setattr__(self, "bonds", bonds)

    @property
    def n_atoms(self) -> int:
        return len(self.atoms)

    def positions(self) -> np.ndarray:
        """All atom positions as an (N, 3) float64 array."""
        return np.array([a.position for a in self.atoms], dtype=np.float64)

    def partial_charges(self) -> np.ndarray:
        return np.array([a.partial_charge for a in self.atoms], dtype=np.float64)


def _float_field(line: str, start: int, end: int, line_number: int, what: str) -> float:
    raw = line[start:end]
    try:
        return float(raw)
    except ValueError:
        raise StructureParseError(line_number, f"malformed {what} field: {raw!r}") from None


def _element_from_record(line: str, line_number: int) -> str:
    sym = line[76:78].strip()
    if not sym:
        # Fall back to the atom-name column with digits stripped; try the
        # two-letter reading first ("CL1" -> Cl), then one letter.
        name = line[12:16].strip()
        sym = "".join(c for c in name if c.isalpha())[:2]
        if len(sym) == 2:
            try:
                return elements.normalize_symbol(sym)
            except UnknownElementError:
                sym = sym[:1]
    if not sym:
        raise StructureParseError(line_number, "record has no element symbol")
    try:
        return elements.normalize_symbol(sym)
    except UnknownElementError as exc:
        raise StructureParseError(line_number, str(exc)) from None


def _parse_formal_charge(line: str) -> int:
    raw = line[78:80].strip()
    if not raw:
        return 0
    # PDB writes e.g. "1+" / "2-"; tolerate plain "+1" / "-2" too.
    if raw[-1] in "+-":
        raw = raw[-1] + raw[:-1]
    try:
        return int(raw)
    except ValueError:
        return 0


def _parse_pdb_like(text: str, with_charge_radius: bool) -> list[Atom]:
    atoms = []
    for line_number, line in enumerate(text.splitlines(), start=1):
        if not line.startswith(("ATOM  ", "HETATM")):
            continue
        if len(line) < 54:
            raise StructureParseError(line_number, "record shorter than coordinate columns")
        x = _float_field(line, 30, 38, line_number, "x")
        y = _float_field(line, 38, 46, line_number, "y")
        z = _float_field(line, 46, 54, line_number, "z")
        charge = 0.0
        if with_charge_radius:
            # PQR convention: occupancy column holds the partial charge,
            # B-factor column the radius (radius is not retained).
            charge = _float_field(line, 54, 62, line_number, "charge")
        atoms.append(
            Atom(
                element=_element_from_record(line, line_number),
                position=np.array([x, y, z]),
                partial_charge=charge,
                formal_charge=_parse_formal_charge(line),
            )
        )
    return atoms


def _parse_xyz(text: str) -> list[Atom]:
    lines = text.splitlines()
    if not lines:
        raise StructureParseError(1, "empty xyz file")
    try:
        count = int(lines[0].split()[0])
    except (IndexError, ValueError):
        raise StructureParseError(1, f"bad atom count: {lines[0]!r}") from None
    atoms = []
    for offset in range(count):
        line_number = offset + 3
        if offset + 2 >= len(lines):
            raise StructureParseError(line_number, "fewer coordinate lines than declared")
        parts = lines[offset + 2].split()
        if len(parts) < 4:
            raise StructureParseError(line_number, "expected: element x y z")
        token = parts[0]
        try:
            sym = elements.symbol_for_number(int(token)) if token.isdigit() else token
            element = elements.normalize_symbol(sym)
        except UnknownElementError as exc:
            raise StructureParseError(line_number, str(exc)) from None
        try:
            pos = np.array([float(parts[1]), float(parts[2]), float(parts[3])])
        except ValueError:
            raise StructureParseError(line_number, "malformed coordinates") from None
        atoms.append(Atom(element=element, position=pos))
    return atoms


def parse_structure(text: str, fmt: str, name: str = "") -> Molecule:
    """Parse PDB, PQR, or XYZ file contents into a Molecule.

    PDB/PQR records are read with fixed columns (serial 7-11, name 13-16,
    x/y/z 31-54, element 77-78); for PQR the occupancy and B columns are
    read as partial charge and radius. Bonds are not populated here; call
    derive_bonds.
    """
    if not text.strip():
        raise StructureParseError(1, "empty input")
    fmt = fmt.lower()
    if fmt == "pdb":
        atoms = _parse_pdb_like(text, with_charge_radius=False)
    elif fmt == "pqr":
        atoms = _parse_pdb_like(text, with_charge_radius=True)
    elif fmt == "xyz":
        atoms = _parse_xyz(text)
    else:
        raise ValueError(f"unsupported format: {fmt!r} (expected pdb, pqr, or xyz)")
    if not atoms:
        raise StructureParseError(1, f"no atom records found in {fmt} input")
    return Molecule(name=name, atoms=tuple(atoms))


def derive_bonds(mol: Molecule, tolerance: float = BOND_TOLERANCE_DEFAULT) -> Molecule:
    """Bond (i, j) iff distance <= tolerance * (cov_radius_i + cov_radius_j)."""
    pos = mol.positions()
    radii = np.array([elements.covalent_radius(a.element) for a in mol.atoms])
    diff = pos[:, None, :] - pos[None, :, :]
    dist = np.sqrt((diff**2).sum(axis=2))
    cutoff = tolerance * (radii[:, None] + radii[None, :])
    bonds = []
    for i in range(mol.n_atoms):
        for j in range(i + 1, mol.n_atoms):
            if dist[i, j] <= cutoff[i, j]:
                bonds.append((i, j))
    return replace(mol, bonds=tuple(bonds))


def assign_charges(mol: Molecule, scheme: str = "electronegativity") -> Molecule:
    """Assign partial charges.

    scheme "none" leaves existing charges (e.g. from a PQR file) untouched.
    scheme "electronegativity" runs iterative charge equalization over the
    bond graph: each sweep moves charge across every bond to equalize the
    charge-adjusted electronegativity chi + 2*eta*q, until the largest
    per-atom update falls below 1e-6. Total charge is conserved exactly;
    the result does not depend on atom coordinates.
    """
    if scheme == "none":
        return mol
    if scheme != "electronegativity":
        raise ValueError(f"unknown charge scheme: {scheme!r}")

    chi = np.array([elements.electronegativity(a.element) for a in mol.atoms])
    q = mol.partial_charges()
    if np.all(q == 0.0):
        q = np.array([float(a.formal_charge) for a in mol.atoms])
    eta = _CHARGE_HARDNESS

    for _ in range(_CHARGE_MAX_SWEEPS):
        delta = np.zeros_like(q)
        for i, j in mol.bonds:
            # Exact line minimum of the quadratic equalization energy for
            # a single transfer t from i to j.
            t = ((chi[i] + 2 * eta * q[i]) - (chi[j] + 2 * eta * q[j])) / (4 * eta)
            q[i] -= t
            q[j] += t
            delta[i] += abs(t)
            delta[j] += abs(t)
        if delta.max(initial=0.0) < _CHARGE_CONVERGENCE:
            atoms = tuple(
                replace(a, partial_charge=float(qa)) for a, qa in zip(mol.atoms, q)
            )
            return replace(mol, atoms=atoms)
    raise ChargeConvergenceError(
        f"charge equalization did not converge in {_CHARGE_MAX_SWEEPS} sweeps"
    )


def molecular_weight(mol: Molecule) -> float:
    """Sum of standard atomic masses, in amu."""
    return float(sum(elements.atomic_mass(a.element) for a in mol.atoms))


def transform_molecule(mol: Molecule, rotation: np.ndarray | None = None,
                       translation: np.ndarray | None = None) -> Molecule:
    """Rigidly move every atom: x -> rotation @ x + translation."""
    pos = mol.positions()
    if rotation is not None:
        pos = pos @ np.asarray(rotation, dtype=np.float64).T
    if translation is not None:
        pos = pos + np.asarray(translation, dtype=np.float64)
    atoms = tuple(replace(a, position=p) for a, p in zip(mol.atoms, pos))
    return replace(mol, atoms=atoms)
