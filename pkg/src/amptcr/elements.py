"""Periodic-table data: symbols, masses, radii, electronegativities.

Masses are CIAAW standard atomic weights (mass number of the most stable
isotope for elements without one). Covalent radii follow Cordero et al.,
van der Waals radii Bondi/Alvarez. Missing radii and electronegativities
fall back to neutral defaults; they only matter for exotic elements.
"""

from __future__ import annotations

_FALLBACK_COVALENT = 1.60
_FALLBACK_VDW = 2.00
_FALLBACK_ELECTRONEG = 1.60

# (symbol, mass [amu], covalent radius [A], vdW radius [A], Pauling electronegativity)
_ELEMENTS = [
    ("H", 1.008, 0.31, 1.20, 2.20),
    ("He", 4.0026, 0.28, 1.40, None),
    ("Li", 6.94, 1.28, 1.82, 0.98),
    ("Be", 9.0122, 0.96, 1.53, 1.57),
    ("B", 10.81, 0.84, 1.92, 2.04),
    ("C", 12.011, 0.76, 1.70, 2.55),
    ("N", 14.007, 0.71, 1.55, 3.04),
    ("O", 15.999, 0.66, 1.52, 3.44),
    ("F", 18.998, 0.57, 1.47, 3.98),
    ("Ne", 20.180, 0.58, 1.54, None),
    ("Na", 22.990, 1.66, 2.27, 0.93),
    ("Mg", 24.305, 1.41, 1.73, 1.31),
    ("Al", 26.982, 1.21, 1.84, 1.61),
    ("Si", 28.085, 1.11, 2.10, 1.90),
    ("P", 30.974, 1.07, 1.80, 2.19),
    ("S", 32.06, 1.05, 1.80, 2.58),
    ("Cl", 35.45, 1.02, 1.75, 3.16),
    ("Ar", 39.95, 1.06, 1.88, None),
    ("K", 39.098, 2.03, 2.75, 0.82),
    ("Ca", 40.078, 1.76, 2.31, 1.00),
    ("Sc", 44.956, 1.70, 2.11, 1.36),
    ("Ti", 47.867, 1.60, None, 1.54),
    ("V", 50.942, 1.53, None, 1.63),
    ("Cr", 51.996, 1.39, None, 1.66),
    ("Mn", 54.938, 1.39, None, 1.55),
    ("Fe", 55.845, 1.32, None, 1.83),
    ("Co", 58.933, 1.26, None, 1.88),
    ("Ni", 58.693, 1.24, 1.63, 1.91),
    ("Cu", 63.546, 1.32, 1.40, 1.90),
    ("Zn", 65.38, 1.22, 1.39, 1.65),
    ("Ga", 69.723, 1.22, 1.87, 1.81),
    ("Ge", 72.630, 1.20, 2.11, 2.01),
    ("As", 74.922, 1.19, 1.85, 2.18),
    ("Se", 78.971, 1.20, 1.90, 2.55),
    ("Br", 79.904, 1.20, 1.85, 2.96),
    ("Kr", 83.798, 1.16, 2.02, 3.00),
    ("Rb", 85.468, 2.20, 3.03, 0.82),
    ("Sr", 87.62, 1.95, 2.49, 0.95),
    ("Y", 88.906, 1.90, None, 1.22),
    ("Zr", 91.224, 1.75, None, 1.33),
    ("Nb", 92.906, 1.64, None, 1.60),
    ("Mo", 95.95, 1.54, None, 2.16),
    ("Tc", 97.907, 1.47, None, 1.90),
    ("Ru", 101.07, 1.46, None, 2.20),
    ("Rh", 102.91, 1.42, None, 2.28),
    ("Pd", 106.42, 1.39, 1.63, 2.20),
    ("Ag", 107.87, 1.45, 1.72, 1.93),
    ("Cd", 112.41, 1.44, 1.58, 1.69),
    ("In", 114.82, 1.42, 1.93, 1.78),
    ("Sn", 118.71, 1.39, 2.17, 1.96),
    ("Sb", 121.76, 1.39, 2.06, 2.05),
    ("Te", 127.60, 1.38, 2.06, 2.10),
    ("I", 126.90, 1.39, 1.98, 2.66),
    ("Xe", 131.29, 1.40, 2.16, 2.60),
    ("Cs", 132.91, 2.44, 3.43, 0.79),
    ("Ba", 137.33, 2.15, 2.68, 0.89),
    ("La", 138.91, 2.07, None, 1.10),
    ("Ce", 140.12, 2.04, None, 1.12),
    ("Pr", 140.91, 2.03, None, 1.13),
    ("Nd", 144.24, 2.01, None, 1.14),
    ("Pm", 144.91, 1.99, None, 1.13),
    ("Sm", 150.36, 1.98, None, 1.17),
    ("Eu", 151.96, 1.98, None, 1.20),
    ("Gd", 157.25, 1.96, None, 1.20),
    ("Tb", 158.93, 1.94, None, 1.22),
    ("Dy", 162.50, 1.92, None, 1.23),
    ("Ho", 164.93, 1.92, None, 1.24),
    ("Er", 167.26, 1.89, None, 1.24),
    ("Tm", 168.93, 1.90, None, 1.25),
    ("Yb", 173.05, 1.87, None, 1.10),
    ("Lu", 174.97, 1.87, None, 1.27),
    ("Hf", 178.49, 1.75, None, 1.30),
    ("Ta", 180.95, 1.70, None, 1.50),
    ("W", 183.84, 1.62, None, 2.36),
    ("Re", 186.21, 1.51, None, 1.90),
    ("Os", 190.23, 1.44, None, 2.20),
    ("Ir", 192.22, 1.41, None, 2.20),
    ("Pt", 195.08, 1.36, 1.75, 2.28),
    ("Au", 196.97, 1.36, 1.66, 2.54),
    ("Hg", 200.59, 1.32, 1.55, 2.00),
    ("Tl", 204.38, 1.45, 1.96, 1.62),
    ("Pb", 207.2, 1.46, 2.02, 2.33),
    ("Bi", 208.98, 1.48, 2.07, 2.02),
    ("Po", 208.98, 1.40, 1.97, 2.00),
    ("At", 209.99, 1.50, 2.02, 2.20),
    ("Rn", 222.02, 1.50, 2.20, None),
    ("Fr", 223.02, 2.60, 3.48, 0.70),
    ("Ra", 226.03, 2.21, 2.83, 0.90),
    ("Ac", 227.03, 2.15, None, 1.10),
    ("Th", 232.04, 2.06, None, 1.30),
    ("Pa", 231.04, 2.00, None, 1.50),
    ("U", 238.03, 1.96, 1.86, 1.38),
    ("Np", 237.05, 1.90, None, 1.36),
    ("Pu", 244.06, 1.87, None, 1.28),
    ("Am", 243.06, 1.80, None, 1.30),
    ("Cm", 247.07, 1.69, None, 1.30),
    ("Bk", 247.07, None, None, 1.30),
    ("Cf", 251.08, None, None, 1.30),
    ("Es", 252.08, None, None, 1.30),
    ("Fm", 257.10, None, None, 1.30),
    ("Md", 258.10, None, None, 1.30),
    ("No", 259.10, None, None, 1.30),
    ("Lr", 266.12, None, None, None),
    ("Rf", 267.12, None, None, None),
    ("Db", 268.13, None, None, None),
    ("Sg", 269.13, None, None, None),
    ("Bh", 270.13, None, None, None),
    ("Hs", 269.13, None, None, None),
    ("Mt", 278.16, None, None, None),
    ("Ds", 281.17, None, None, None),
    ("Rg", 282.17, None, None, None),
    ("Cn", 285.18, None, None, None),
    ("Nh", 286.18, None, None, None),
    ("Fl", 289.19, None, None, None),
    ("Mc", 290.20, None, None, None),
    ("Lv", 293.20, None, None, None),
    ("Ts", 294.21, None, None, None),
    ("Og", 294.21, None, None, None),
]

SYMBOLS = tuple(sym for sym, *_ in _ELEMENTS)
ATOMIC_NUMBER = {sym: z for z, sym in enumerate(SYMBOLS, start=1)}

_MASS = {sym: mass for sym, mass, *_ in _ELEMENTS}
_COVALENT = {sym: r for sym, _, r, *_ in _ELEMENTS}
_VDW = {sym: r for sym, _, _, r, _ in _ELEMENTS}
_ELECTRONEG = {sym: x for sym, _, _, _, x in _ELEMENTS}


class UnknownElementError(ValueError):
    """Raised when an element symbol is not in the periodic table."""


def normalize_symbol(raw: str) -> str:
    """Return the canonical symbol for ``raw`` (case-insensitive).

    Raises UnknownElementError if the symbol is not H..Og.
    """
    sym = raw.strip().capitalize()
    if sym not in ATOMIC_NUMBER:
        raise UnknownElementError(f"unknown element symbol: {raw.strip()!r}")
    return sym


def atomic_number(symbol: str) -> int:
    return ATOMIC_NUMBER[normalize_symbol(symbol)]


def symbol_for_number(z: int) -> str:
    if not 1 <= z <= len(SYMBOLS):
        raise UnknownElementError(f"atomic number out of range: {z}")
    return SYMBOLS[z - 1]


def atomic_mass(symbol: str) -> float:
    return _MASS[normalize_symbol(symbol)]


def covalent_radius(symbol: str) -> float:
    r = _COVALENT[normalize_symbol(symbol)]
    return _FALLBACK_COVALENT if r is None else r


def vdw_radius(symbol: str) -> float:
    r = _VDW[normalize_symbol(symbol)]
    return _FALLBACK_VDW if r is None else r


def electronegativity(symbol: str) -> float:
    x = _ELECTRONEG[normalize_symbol(symbol)]
    return _FALLBACK_ELECTRONEG if x is None else x
