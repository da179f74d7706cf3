"""Reaction-network data model, the ``.mech`` text format and stoichiometry.

A mechanism file is line oriented::

    # comment
    species: H2 O2 H O OH
    H2 + O2 -> 2 OH ; k=0.5
    2 H + H2 -> 2 H2 ; k=12.0
    -> H ; k=1e-3 ; source

Coefficients default to 1 and must be positive integers.  A reaction with no
reactants must carry the ``source`` flag.  Reversible steps are written as two
irreversible reactions.
"""

from __future__ import annotations

import hashlib
import math
import re
from dataclasses import dataclass, field
from typing import Iterable

import numpy as np

__all__ = [
    "MechanismError",
    "Species",
    "Reaction",
    "Mechanism",
    "parse_mechanism",
    "load_mechanism",
    "serialize_mechanism",
    "build_stoichiometric_matrix",
    "restrict",
    "mechanism_digest",
]

_NAME = r"[A-Za-z_][A-Za-z0-9_]*"
_NAME_RE = re.compile(rf"^{_NAME}$")
_TERM_RE = re.compile(rf"^(?:(?P<coef>[0-9.][0-9.]*)\s*(?=[A-Za-z_]))?(?P<name>{_NAME})$")


class MechanismError(ValueError):
    """Invalid mechanism text or an inconsistent mechanism."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


@dataclass(frozen=True)
class Species:
    name: str
    index: int


@dataclass(frozen=True)
class Reaction:
    """One irreversible mass-action reaction.

    ``reactants`` and ``products`` map species index to a positive integer
    coefficient.  The reactant coefficients double as the kinetic orders.
    """

    id: int
    reactants: dict[int, int]
    products: dict[int, int]
    rate_constant: float
    source: bool = False

    def __post_init__(self):
        if not (math.isfinite(self.rate_constant) and self.rate_constant > 0):
            raise MechanismError(f"reaction {self.id}: rate constant must be positive, got {self.rate_constant}")
        for side in (self.reactants, self.products):
            for s, c in side.items():
                if not isinstance(c, (int, np.integer)) or c <= 0:
                    raise MechanismError(f"reaction {self.id}: coefficient of species {s} must be a positive integer")
        if not self.reactants and not self.source:
            raise MechanismError(f"reaction {self.id}: no reactants (flag it as a source reaction)")


@dataclass(frozen=True, eq=False)
class Mechanism:
    species: tuple[Species, ...]
    reactions: tuple[Reaction, ...]
    M: np.ndarray = field(repr=False)

    def __post_init__(self):
        names = [s.name for s in self.species]
        if len(set(names)) != len(names):
            raise MechanismError("duplicate species names")
        for i, s in enumerate(self.species):
            if s.index != i:
                raise MechanismError(f"species {s.name!r} has index {s.index}, expected {i}")
        if self.M.shape != (len(self.species), len(self.reactions)):
            raise MechanismError(f"stoichiometric matrix has shape {self.M.shape}")
        self.M.setflags(write=False)

    @classmethod
    def from_parts(cls, species: Iterable[str], reactions: Iterable[Reaction]) -> "Mechanism":
        sp = tuple(Species(name, i) for i, name in enumerate(species))
        rx = tuple(reactions)
        for i, r in enumerate(rx):
            if r.id != i:
                raise MechanismError(f"reaction at position {i} has id {r.id}")
            for s in (*r.reactants, *r.products):
                if not 0 <= s < len(sp):
                    raise MechanismError(f"reaction {r.id}: species index {s} out of range")
        return cls(sp, rx, build_stoichiometric_matrix(sp, rx))

    @property
    def n_species(self) -> int:
        return len(self.species)

    @property
    def n_reactions(self) -> int:
        return len(self.reactions)

    @property
    def species_names(self) -> list[str]:
        return [s.name for s in self.species]

    @property
    def rate_constants(self) -> np.ndarray:
        return np.array([r.rate_constant for r in self.reactions], dtype=float)

    @property
    def reactant_orders(self) -> np.ndarray:
        """Integer matrix (Nr, Ns) of reactant coefficients."""
        nu = np.zeros((self.n_reactions, self.n_species), dtype=np.int64)
        for r in self.reactions:
            for s, c in r.reactants.items():
                nu[r.id, s] = c
        return nu

    def index(self, name: str) -> int:
        for s in self.species:
            if s.name == name:
                return s.index
        raise KeyError(name)

    def __eq__(self, other):
        if not isinstance(other, Mechanism):
            return NotImplemented
        return (
            self.species == other.species
            and self.reactions == other.reactions
            and np.array_equal(self.M, other.M)
        )

    __hash__ = None


def build_stoichiometric_matrix(species, reactions) -> np.ndarray:
    """Net stoichiometry, ``M[s, i] = products[s] - reactants[s]`` of reaction ``i``."""
    M = np.zeros((len(species), len(reactions)), dtype=np.int64)
    for i, r in enumerate(reactions):
        for s, c in r.reactants.items():
            M[s, i] -= c
        for s, c in r.products.items():
            M[s, i] += c
    return M


def _parse_side(text: str, lookup: dict[str, int], lineno: int) -> dict[int, int]:
    out: dict[int, int] = {}
    text = text.strip()
    if not text:
        return out
    for term in text.split("+"):
        term = " ".join(term.split())
        m = _TERM_RE.match(term)
        if m is None:
            raise MechanismError(f"cannot parse term {term!r}", lineno)
        coef_txt, name = m.group("coef"), m.group("name")
        if coef_txt is None:
            coef = 1
        else:
            if not coef_txt.isdigit():
                raise MechanismError(f"coefficient {coef_txt!r} of {name} is not a positive integer", lineno)
            coef = int(coef_txt)
            if coef == 0:
                raise MechanismError(f"zero coefficient for {name}", lineno)
        if name not in lookup:
            raise MechanismError(f"unknown species {name!r}", lineno)
        s = lookup[name]
        out[s] = out.get(s, 0) + coef
    return out


def parse_mechanism(text: str) -> Mechanism:
    """Parse mechanism-file text.

    Raises
    ------
    MechanismError
        On syntax errors, unknown or duplicate species, fractional
        coefficients or non-positive rate constants.  The message carries the
        1-based line number.
    """
    species: list[str] | None = None
    lookup: dict[str, int] = {}
    reactions: list[Reaction] = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("species:"):
            if species is not None:
                raise MechanismError("species declared twice", lineno)
            species = line[len("species:"):].split()
            for name in species:
                if not _NAME_RE.match(name):
                    raise MechanismError(f"invalid species name {name!r}", lineno)
                if name in lookup:
                    raise MechanismError(f"duplicate species {name!r}", lineno)
                lookup[name] = len(lookup)
            continue
        if species is None:
            raise MechanismError("reaction before species declaration", lineno)
        parts = [p.strip() for p in line.split(";")]
        equation, attrs = parts[0], parts[1:]
        if equation.count("->") != 1:
            raise MechanismError("reaction needs exactly one '->'", lineno)
        lhs, rhs = equation.split("->")
        k = None
        source = False
        for attr in attrs:
            if attr == "source":
                source = True
            elif attr.startswith("k="):
                try:
                    k = float(attr[2:])
                except ValueError:
                    raise MechanismError(f"bad rate constant {attr[2:]!r}", lineno) from None
            elif attr:
                raise MechanismError(f"unknown attribute {attr!r}", lineno)
        if k is None:
            raise MechanismError("missing rate constant 'k='", lineno)
        if not (math.isfinite(k) and k > 0):
            raise MechanismError(f"rate constant must be positive, got {k!r}", lineno)
        reactants = _parse_side(lhs, lookup, lineno)
        products = _parse_side(rhs, lookup, lineno)
        if not reactants and not source:
            raise MechanismError("reaction has no reactants (add '; source')", lineno)
        reactions.append(Reaction(len(reactions), reactants, products, k, source))
    if species is None:
        raise MechanismError("no species declaration")
    return Mechanism.from_parts(species, reactions)


def load_mechanism(path) -> Mechanism:
    with open(path, encoding="utf-8") as fh:
        return parse_mechanism(fh.read())


def _format_side(side: dict[int, int], names: list[str]) -> str:
    terms = []
    for s, c in side.items():
        terms.append(names[s] if c == 1 else f"{c} {names[s]}")
    return " + ".join(terms)


def serialize_mechanism(mech: Mechanism) -> str:
    """Inverse of :func:`parse_mechanism`; floats use shortest round-trip repr."""
    names = mech.species_names
    lines = ["species: " + " ".join(names)]
    for r in mech.reactions:
        eq = f"{_format_side(r.reactants, names)} -> {_format_side(r.products, names)}".strip()
        line = f"{eq} ; k={r.rate_constant!r}"
        if r.source:
            line += " ; source"
        lines.append(line)
    return "\n".join(lines) + "\n"


def mechanism_digest(mech: Mechanism) -> str:
    return hashlib.sha256(serialize_mechanism(mech).encode("utf-8")).hexdigest()


def restrict(mech: Mechanism, support) -> tuple[Mechanism, dict[int, int]]:
    """Keep only the reactions in ``support``.

    Species are untouched and reaction order is preserved.  Returns the
    reduced mechanism and the old-id to new-id mapping.
    """
    ids = sorted({int(i) for i in support})
    for i in ids:
        if not 0 <= i < mech.n_reactions:
            raise IndexError(f"reaction id {i} out of range for {mech.n_reactions} reactions")
    mapping = {old: new for new, old in enumerate(ids)}
    reactions = [
        Reaction(mapping[r.id], dict(r.reactants), dict(r.products), r.rate_constant, r.source)
        for r in (mech.reactions[i] for i in ids)
    ]
    return Mechanism.from_parts(mech.species_names, reactions), mapping
