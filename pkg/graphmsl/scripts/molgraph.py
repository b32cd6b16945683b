"""
SMILES parsing and molecular graph featurization.

The parser covers the subset of SMILES used by drug-like benchmark molecules:
the organic subset (B, C, N, O, P, S, F, Cl, Br, I and aromatic b, c, n, o, p,
s), bracket atoms with isotope / chirality / hydrogen count / charge / class,
bond symbols ``- = # :``, branches, ring closures up to ``%99`` and the
fragment separator ``.``. Stereo marks (``/ \\ @``) are accepted and ignored.

Hydrogens are never materialized as atoms: organic-subset atoms receive an
implicit hydrogen count from standard valence tables, bracket atoms carry the
explicit count written inside the brackets.

Example:
    >>> graph = parse_smiles("CCO")
    >>> heavy_atom_count(graph), len(graph.bonds), len(graph.directed_edges)
    (3, 2, 4)
"""

import enum
from dataclasses import dataclass, field
from typing import NamedTuple, Sequence

import networkx as nx
import numpy as np

from graphmsl.scripts.errors import (
    DataError,
    FragmentError,
    RingClosureError,
    SmilesSyntaxError,
    UnknownElementError,
    ValenceError,
)

# Element symbols indexed by atomic number - 1
ELEMENTS = (
    "H He Li Be B C N O F Ne Na Mg Al Si P S Cl Ar K Ca Sc Ti V Cr Mn Fe Co Ni Cu Zn "
    "Ga Ge As Se Br Kr Rb Sr Y Zr Nb Mo Tc Ru Rh Pd Ag Cd In Sn Sb Te I Xe Cs Ba La Ce "
    "Pr Nd Pm Sm Eu Gd Tb Dy Ho Er Tm Yb Lu Hf Ta W Re Os Ir Pt Au Hg Tl Pb Bi Po At Rn "
    "Fr Ra Ac Th Pa U Np Pu Am Cm Bk Cf Es Fm Md No Lr Rf Db Sg Bh Hs Mt Ds Rg Cn Nh Fl "
    "Mc Lv Ts Og"
).split()
ATOMIC_NUMBER = {symbol: number for number, symbol in enumerate(ELEMENTS, start=1)}

ORGANIC_SUBSET = ("B", "C", "N", "O", "P", "S", "F", "Cl", "Br", "I")
AROMATIC_ORGANIC = ("b", "c", "n", "o", "p", "s")
AROMATIC_BRACKET = ("se", "as", "te", "b", "c", "n", "o", "p", "s")

# Normal valences used to derive implicit hydrogen counts
DEFAULT_VALENCES = {
    "B": (3,),
    "C": (4,),
    "N": (3, 5),
    "O": (2,),
    "P": (3, 5),
    "S": (2, 4, 6),
    "F": (1,),
    "Cl": (1,),
    "Br": (1,),
    "I": (1,),
}

MAX_EXPLICIT_H = 8
MAX_RING_NUMBER = 99

FEATURIZATION_VERSION = 1
FEATURE_ELEMENTS = ORGANIC_SUBSET  # + "other"
ATOM_FEATURE_DIM = len(FEATURE_ELEMENTS) + 1 + 6 + 5 + 1 + 5  # 28
BOND_FEATURE_DIM = 4 + 1  # 5


class BondOrder(enum.Enum):
    """Chemical bond order; the value is its contribution to atom valence."""

    SINGLE = 1
    DOUBLE = 2
    TRIPLE = 3
    AROMATIC = 4

    @property
    def valence(self) -> int:
        # Aromatic bonds count as 1; the aromatic atom itself adds the extra electron
        return 1 if self is BondOrder.AROMATIC else self.value


BOND_SYMBOLS = {
    "-": BondOrder.SINGLE,
    "=": BondOrder.DOUBLE,
    "#": BondOrder.TRIPLE,
    ":": BondOrder.AROMATIC,
    "/": BondOrder.SINGLE,
    "\\": BondOrder.SINGLE,
}


@dataclass(frozen=True)
class Atom:
    """
    A heavy atom of a molecular graph.

    Attributes:
        element (str): Element symbol with canonical capitalization (e.g. "C", "Cl")
        aromatic (bool): Written as an aromatic (lowercase) atom
        formal_charge (int): Formal charge
        explicit_h (int): Hydrogens written inside a bracket atom
        implicit_h (int): Hydrogens derived from the valence table (organic subset only)
        isotope (int | None): Isotope mass number, when written
    """

    element: str
    aromatic: bool = False
    formal_charge: int = 0
    explicit_h: int = 0
    implicit_h: int = 0
    isotope: int | None = None

    def __post_init__(self):
        if self.element not in ATOMIC_NUMBER:
            raise UnknownElementError(f"unknown element '{self.element}'")
        if not 0 <= self.explicit_h <= MAX_EXPLICIT_H:
            raise SmilesSyntaxError(f"explicit hydrogen count {self.explicit_h} outside 0..8")

    @property
    def atomic_number(self) -> int:
        return ATOMIC_NUMBER[self.element]

    @property
    def total_h(self) -> int:
        return self.explicit_h + self.implicit_h


@dataclass(frozen=True)
class Bond:
    """
    An undirected bond between atoms ``a`` and ``b``.

    Attributes:
        a (int): First atom index
        b (int): Second atom index
        order (BondOrder): Bond order
        in_ring (bool): True when the bond lies on a cycle
    """

    a: int
    b: int
    order: BondOrder = BondOrder.SINGLE
    in_ring: bool = False


class DirectedEdge(NamedTuple):
    source: int
    target: int
    reverse: int


@dataclass(frozen=True)
class MolecularGraph:
    """
    Heavy-atom molecular graph with the directed-edge structure used for message passing.

    Bond ``k`` produces directed edges ``2k`` (a -> b) and ``2k + 1`` (b -> a), so
    the reverse of edge ``e`` is always ``e ^ 1``.

    Attributes:
        atoms (tuple[Atom, ...]): Atoms in SMILES appearance order
        bonds (tuple[Bond, ...]): Bonds in SMILES appearance order
        directed_edges (tuple[DirectedEdge, ...]): Two entries per bond
        multi_fragment (bool): The source had several fragments and only the largest was kept
        smiles (str): Source string
    """

    atoms: tuple[Atom, ...]
    bonds: tuple[Bond, ...]
    directed_edges: tuple[DirectedEdge, ...] = field(default=())
    multi_fragment: bool = False
    smiles: str = ""

    def __post_init__(self):
        n_atoms = len(self.atoms)
        seen = set()
        for bond in self.bonds:
            if bond.a == bond.b:
                raise DataError(f"bond joins atom {bond.a} to itself")
            if not (0 <= bond.a < n_atoms and 0 <= bond.b < n_atoms):
                raise DataError(f"bond ({bond.a}, {bond.b}) references a missing atom")
            key = frozenset((bond.a, bond.b))
            if key in seen:
                raise DataError(f"duplicate bond between atoms {bond.a} and {bond.b}")
            seen.add(key)
        if not self.directed_edges:
            object.__setattr__(self, "directed_edges", _directed_edges(self.bonds))
        if len(self.directed_edges) != 2 * len(self.bonds):
            raise DataError("directed edge list must hold exactly two entries per bond")

    def neighbors(self, atom: int) -> list[int]:
        return [edge.target for edge in self.directed_edges if edge.source == atom]

    def degree(self, atom: int) -> int:
        return sum(1 for bond in self.bonds if atom in (bond.a, bond.b))


@dataclass(frozen=True, eq=False)
class FeaturizedGraph:
    """
    Numeric view of a molecular graph consumed by the encoder.

    Attributes:
        atom_features (np.ndarray): ``|atoms| x ATOM_FEATURE_DIM`` one-hot rows
        bond_features (np.ndarray): ``|bonds| x BOND_FEATURE_DIM`` rows
        incidence (tuple[tuple[int, ...], ...]): Incoming directed-edge indices per atom
        edge_sources (tuple[int, ...]): Source atom of every directed edge
        edge_bonds (tuple[int, ...]): Bond index of every directed edge
        edge_reverse (tuple[int, ...]): Reverse edge index of every directed edge
        version (int): Featurization scheme version
    """

    atom_features: np.ndarray
    bond_features: np.ndarray
    incidence: tuple[tuple[int, ...], ...]
    edge_sources: tuple[int, ...]
    edge_bonds: tuple[int, ...]
    edge_reverse: tuple[int, ...]
    version: int = FEATURIZATION_VERSION

    @property
    def atom_count(self) -> int:
        return self.atom_features.shape[0]

    @property
    def edge_count(self) -> int:
        return len(self.edge_sources)


def _directed_edges(bonds: Sequence[Bond]) -> tuple[DirectedEdge, ...]:
    edges = []
    for k, bond in enumerate(bonds):
        edges.append(DirectedEdge(bond.a, bond.b, 2 * k + 1))
        edges.append(DirectedEdge(bond.b, bond.a, 2 * k))
    return tuple(edges)


class _AtomDraft:
    """Mutable atom record used while the parser is still collecting bonds."""

    __slots__ = ("element", "aromatic", "charge", "hcount", "isotope", "bracket")

    def __init__(self, element, aromatic, charge=0, hcount=0, isotope=None, bracket=False):
        self.element = element
        self.aromatic = aromatic
        self.charge = charge
        self.hcount = hcount
        self.isotope = isotope
        self.bracket = bracket


def _canonical_symbol(symbol: str) -> str:
    return symbol[0].upper() + symbol[1:]


def _parse_bracket(body: str, position: int) -> _AtomDraft:
    """
    Parse the inside of a bracket atom, e.g. ``13CH3+`` or ``nH`` or ``C@@H``.

    Args:
        body (str): Text between ``[`` and ``]``
        position (int): Offset of ``[`` in the SMILES string, for messages

    Returns:
        _AtomDraft: The parsed atom
    """
    i = 0
    n = len(body)

    isotope = None
    start = i
    while i < n and body[i].isdigit():
        i += 1
    if i > start:
        isotope = int(body[start:i])

    if i >= n:
        raise SmilesSyntaxError(f"empty bracket atom at position {position}")

    # Aromatic symbols are lowercase; element symbols are one uppercase letter plus
    # an optional lowercase letter
    symbol = None
    aromatic = False
    for candidate in AROMATIC_BRACKET:
        if body.startswith(candidate, i):
            symbol, aromatic = candidate, True
            break
    if symbol is None:
        if not body[i].isalpha() or not body[i].isupper():
            if body[i] == "*":
                raise UnknownElementError(f"wildcard atom at position {position} is not supported")
            raise UnknownElementError(f"bad element symbol in '[{body}]'")
        two = body[i : i + 2]
        if len(two) == 2 and two[1].islower() and two in ATOMIC_NUMBER:
            symbol = two
        else:
            symbol = body[i]
    i += len(symbol)
    element = _canonical_symbol(symbol)
    if element not in ATOMIC_NUMBER:
        raise UnknownElementError(f"unknown element '{symbol}' at position {position}")

    # Chirality is accepted and ignored
    while i < n and body[i] == "@":
        i += 1
    if i < n and body[i : i + 2] in ("TH", "AL", "SP", "TB", "OH"):
        i += 2
        while i < n and body[i].isdigit():
            i += 1

    hcount = 0
    if i < n and body[i] == "H":
        i += 1
        start = i
        while i < n and body[i].isdigit():
            i += 1
        hcount = int(body[start:i]) if i > start else 1
        if hcount > MAX_EXPLICIT_H:
            raise SmilesSyntaxError(f"hydrogen count {hcount} in '[{body}]' exceeds {MAX_EXPLICIT_H}")

    charge = 0
    if i < n and body[i] in "+-":
        sign = 1 if body[i] == "+" else -1
        i += 1
        start = i
        while i < n and body[i].isdigit():
            i += 1
        if i > start:
            charge = sign * int(body[start:i])
        else:
            charge = sign
            # '++' and '--' repeat the sign
            while i < n and body[i] == ("+" if sign > 0 else "-"):
                charge += sign
                i += 1

    if i < n and body[i] == ":":
        i += 1
        start = i
        while i < n and body[i].isdigit():
            i += 1
        if i == start:
            raise SmilesSyntaxError(f"empty atom class in '[{body}]'")

    if i != n:
        raise SmilesSyntaxError(f"unexpected '{body[i:]}' in bracket atom '[{body}]'")

    return _AtomDraft(element, aromatic, charge, hcount, isotope, bracket=True)


def _tokenize(smiles: str):
    """
    Iterate over a SMILES string, yielding ``(kind, value, position)`` tuples.

    Kinds are ``atom``, ``bond``, ``open``, ``close``, ``ring`` and ``dot``.
    """
    i = 0
    n = len(smiles)
    while i < n:
        char = smiles[i]
        if char == "[":
            end = smiles.find("]", i + 1)
            if end < 0:
                raise SmilesSyntaxError(f"unclosed bracket atom at position {i}")
            body = smiles[i + 1 : end]
            if "[" in body:
                raise SmilesSyntaxError(f"nested '[' at position {i}")
            yield "atom", _parse_bracket(body, i), i
            i = end + 1
        elif char == "]":
            raise SmilesSyntaxError(f"unmatched ']' at position {i}")
        elif smiles.startswith(("Cl", "Br"), i):
            yield "atom", _AtomDraft(smiles[i : i + 2], False), i
            i += 2
        elif char in ORGANIC_SUBSET:
            yield "atom", _AtomDraft(char, False), i
            i += 1
        elif char in AROMATIC_ORGANIC:
            yield "atom", _AtomDraft(char.upper(), True), i
            i += 1
        elif char in BOND_SYMBOLS:
            yield "bond", BOND_SYMBOLS[char], i
            i += 1
        elif char == "(":
            yield "open", None, i
            i += 1
        elif char == ")":
            yield "close", None, i
            i += 1
        elif char == ".":
            yield "dot", None, i
            i += 1
        elif char == "%":
            digits = smiles[i + 1 : i + 3]
            if len(digits) != 2 or not digits.isdigit():
                raise SmilesSyntaxError(f"'%' must be followed by two digits at position {i}")
            yield "ring", int(digits), i
            i += 3
        elif char.isdigit():
            yield "ring", int(char), i
            i += 1
        elif char.isalpha() or char == "*":
            raise UnknownElementError(f"unknown or unsupported atom '{char}' at position {i}")
        else:
            raise SmilesSyntaxError(f"unexpected character '{char}' at position {i}")


def _default_order(left: _AtomDraft, right: _AtomDraft) -> BondOrder:
    if left.aromatic and right.aromatic:
        return BondOrder.AROMATIC
    return BondOrder.SINGLE


def _implicit_hydrogens(draft: _AtomDraft, bond_sum: int, strict: bool, index: int) -> int:
    """
    Derive the implicit hydrogen count of an organic-subset atom.

    Args:
        draft: The atom
        bond_sum (int): Sum of bond valence contributions
        strict (bool): Raise ValenceError when bonds exceed every normal valence
        index (int): Atom index, for messages

    Returns:
        int: Implicit hydrogen count (bracket atoms always get 0)
    """
    if draft.bracket:
        return 0
    valences = DEFAULT_VALENCES[draft.element]
    if strict and bond_sum > valences[-1]:
        raise ValenceError(
            f"atom {index} ({draft.element}) has bond order sum {bond_sum} > {valences[-1]}"
        )
    # Aromatic atoms donate one electron to the ring
    used = bond_sum + (1 if draft.aromatic else 0)
    for valence in valences:
        if valence >= used:
            return valence - used
    return 0


def parse_smiles(
    text: str, strict_valence: bool = False, keep_largest_fragment: bool = False
) -> MolecularGraph:
    """
    Parse a SMILES string into a heavy-atom molecular graph.

    Args:
        text (str): Non-empty ASCII SMILES string
        strict_valence (bool): Reject organic-subset atoms whose bonds exceed
            their largest normal valence
        keep_largest_fragment (bool): For multi-fragment input, keep the largest
            fragment instead of raising FragmentError

    Returns:
        MolecularGraph: Atoms in left-to-right appearance order

    Raises:
        SmilesSyntaxError: Unbalanced parentheses/brackets or malformed tokens
        RingClosureError: Unmatched or inconsistent ring-closure digits
        UnknownElementError: Unknown element symbols
        ValenceError: Valence violation in strict mode
        FragmentError: Multiple fragments while not permitted
    """
    if not text:
        raise SmilesSyntaxError("empty SMILES string")
    if not text.isascii():
        raise SmilesSyntaxError("SMILES must be ASCII")
    if any(char.isspace() for char in text):
        raise SmilesSyntaxError("SMILES must not contain whitespace")

    drafts: list[_AtomDraft] = []
    # bond entries: [a, b, order or None when implicit]
    bond_list: list[list] = []
    bond_keys: set[frozenset] = set()
    anchor = None
    pending = None
    branches: list[int | None] = []
    open_rings: dict[int, tuple[int, BondOrder | None]] = {}
    saw_dot = False

    def add_bond(a: int, b: int, order: BondOrder | None, position: int, ring: bool):
        key = frozenset((a, b))
        if key in bond_keys:
            error = RingClosureError if ring else SmilesSyntaxError
            raise error(f"duplicate bond between atoms {a} and {b} at position {position}")
        bond_keys.add(key)
        bond_list.append([a, b, order])

    for kind, value, position in _tokenize(text):
        if kind == "atom":
            index = len(drafts)
            drafts.append(value)
            if anchor is not None:
                add_bond(anchor, index, pending, position, ring=False)
            elif pending is not None:
                raise SmilesSyntaxError(f"bond symbol without a preceding atom at position {position}")
            pending = None
            anchor = index
        elif kind == "bond":
            if anchor is None:
                raise SmilesSyntaxError(f"bond symbol without a preceding atom at position {position}")
            if pending is not None:
                raise SmilesSyntaxError(f"two consecutive bond symbols at position {position}")
            pending = value
        elif kind == "open":
            if anchor is None or pending is not None:
                raise SmilesSyntaxError(f"misplaced '(' at position {position}")
            branches.append(anchor)
        elif kind == "close":
            if not branches:
                raise SmilesSyntaxError(f"unbalanced ')' at position {position}")
            if pending is not None:
                raise SmilesSyntaxError(f"dangling bond before ')' at position {position}")
            anchor = branches.pop()
        elif kind == "ring":
            if anchor is None:
                raise RingClosureError(f"ring digit {value} before any atom at position {position}")
            if value in open_rings:
                partner, order = open_rings.pop(value)
                if partner == anchor:
                    raise RingClosureError(f"ring digit {value} closes atom {anchor} onto itself")
                if order is not None and pending is not None and order != pending:
                    raise RingClosureError(f"conflicting bond orders on ring digit {value}")
                add_bond(partner, anchor, pending or order, position, ring=True)
            else:
                open_rings[value] = (anchor, pending)
            pending = None
        elif kind == "dot":
            if anchor is None or pending is not None or branches:
                raise SmilesSyntaxError(f"misplaced '.' at position {position}")
            saw_dot = True
            anchor = None

    if branches:
        raise SmilesSyntaxError("unbalanced '(' in SMILES")
    if pending is not None:
        raise SmilesSyntaxError("SMILES ends with a bond symbol")
    if open_rings:
        digits = ", ".join(str(d) for d in sorted(open_rings))
        raise RingClosureError(f"unmatched ring closure digit(s): {digits}")
    if not drafts:
        raise SmilesSyntaxError("SMILES contains no atoms")

    # Ring membership decides how implicit aromatic-aromatic bonds are read
    graph = nx.Graph()
    graph.add_nodes_from(range(len(drafts)))
    graph.add_edges_from((a, b) for a, b, _ in bond_list)
    bridges = {frozenset(edge) for edge in nx.bridges(graph)}

    resolved: list[tuple[int, int, BondOrder, bool]] = []
    for a, b, order in bond_list:
        in_ring = frozenset((a, b)) not in bridges
        if order is None:
            order = _default_order(drafts[a], drafts[b])
            # Aromatic atoms joined outside a ring (biphenyl-style) share a single bond
            if order is BondOrder.AROMATIC and not in_ring:
                order = BondOrder.SINGLE
        resolved.append((a, b, order, in_ring))

    bond_sums = [0] * len(drafts)
    for a, b, order, _ in resolved:
        bond_sums[a] += order.valence
        bond_sums[b] += order.valence

    atoms = [
        Atom(
            element=draft.element,
            aromatic=draft.aromatic,
            formal_charge=draft.charge,
            explicit_h=draft.hcount,
            implicit_h=_implicit_hydrogens(draft, bond_sums[i], strict_valence, i),
            isotope=draft.isotope,
        )
        for i, draft in enumerate(drafts)
    ]
    bonds = [Bond(a, b, order, in_ring) for a, b, order, in_ring in resolved]

    multi_fragment = False
    components = list(nx.connected_components(graph))
    if saw_dot and len(components) > 1:
        if not keep_largest_fragment:
            raise FragmentError(f"'{text}' has {len(components)} fragments")
        # Largest fragment wins; ties go to the fragment that appears first
        keep = sorted(max(components, key=lambda c: (len(c), -min(c))))
        remap = {old: new for new, old in enumerate(keep)}
        atoms = [atoms[old] for old in keep]
        bonds = [
            Bond(remap[bond.a], remap[bond.b], bond.order, bond.in_ring)
            for bond in bonds
            if bond.a in remap
        ]
        multi_fragment = True

    return MolecularGraph(
        atoms=tuple(atoms), bonds=tuple(bonds), multi_fragment=multi_fragment, smiles=text
    )


def heavy_atom_count(g: MolecularGraph) -> int:
    """Number of (heavy) atoms in the graph."""
    return len(g.atoms)


def permute_atoms(g: MolecularGraph, order: Sequence[int]) -> MolecularGraph:
    """
    Renumber the atoms of a graph.

    Args:
        g: Source graph
        order: ``order[new_index] = old_index``; must be a permutation

    Returns:
        MolecularGraph: The same molecule with atoms in the new order
    """
    if sorted(order) != list(range(len(g.atoms))):
        raise DataError("atom order must be a permutation of the atom indices")
    remap = {old: new for new, old in enumerate(order)}
    atoms = tuple(g.atoms[old] for old in order)
    bonds = tuple(Bond(remap[b.a], remap[b.b], b.order, b.in_ring) for b in g.bonds)
    return MolecularGraph(atoms=atoms, bonds=bonds, multi_fragment=g.multi_fragment, smiles=g.smiles)


def _one_hot(index: int, size: int) -> list[float]:
    row = [0.0] * size
    row[index] = 1.0
    return row


def atom_feature_vector(g: MolecularGraph, index: int) -> list[float]:
    """
    Feature row of one atom.

    Layout (28 columns): element one-hot over B, C, N, O, P, S, F, Cl, Br, I plus
    "other" (11) | heavy-atom degree 0..5 (6) | formal charge clamped to -2..2 (5)
    | aromatic flag (1) | hydrogen count 0..4 (5).
    """
    atom = g.atoms[index]
    element = (
        FEATURE_ELEMENTS.index(atom.element)
        if atom.element in FEATURE_ELEMENTS
        else len(FEATURE_ELEMENTS)
    )
    degree = min(g.degree(index), 5)
    charge = max(-2, min(2, atom.formal_charge)) + 2
    hydrogens = min(atom.total_h, 4)
    return (
        _one_hot(element, len(FEATURE_ELEMENTS) + 1)
        + _one_hot(degree, 6)
        + _one_hot(charge, 5)
        + [1.0 if atom.aromatic else 0.0]
        + _one_hot(hydrogens, 5)
    )


def bond_feature_vector(bond: Bond) -> list[float]:
    """Feature row of one bond: order one-hot (4) | in-ring flag (1)."""
    order = [BondOrder.SINGLE, BondOrder.DOUBLE, BondOrder.TRIPLE, BondOrder.AROMATIC]
    return _one_hot(order.index(bond.order), 4) + [1.0 if bond.in_ring else 0.0]


def featurize(g: MolecularGraph) -> FeaturizedGraph:
    """
    Convert a molecular graph into feature matrices and incidence lists.

    Args:
        g (MolecularGraph): Parsed molecule

    Returns:
        FeaturizedGraph: Deterministic, read-only feature view of the molecule
    """
    atom_features = np.array(
        [atom_feature_vector(g, i) for i in range(len(g.atoms))], dtype=np.float64
    ).reshape(len(g.atoms), ATOM_FEATURE_DIM)
    bond_features = np.array(
        [bond_feature_vector(bond) for bond in g.bonds], dtype=np.float64
    ).reshape(len(g.bonds), BOND_FEATURE_DIM)
    atom_features.flags.writeable = False
    bond_features.flags.writeable = False

    incoming: list[list[int]] = [[] for _ in g.atoms]
    for e, edge in enumerate(g.directed_edges):
        incoming[edge.target].append(e)

    return FeaturizedGraph(
        atom_features=atom_features,
        bond_features=bond_features,
        incidence=tuple(tuple(edges) for edges in incoming),
        edge_sources=tuple(edge.source for edge in g.directed_edges),
        edge_bonds=tuple(e // 2 for e in range(len(g.directed_edges))),
        edge_reverse=tuple(edge.reverse for edge in g.directed_edges),
    )


def graph_stats(g: MolecularGraph) -> dict:
    """Summary counts printed by ``parse --stats``."""
    return {
        "atoms": len(g.atoms),
        "bonds": len(g.bonds),
        "directed_edges": len(g.directed_edges),
        "aromatic_atoms": sum(1 for atom in g.atoms if atom.aromatic),
        # Cyclomatic number of a connected graph
        "rings": len(g.bonds) - len(g.atoms) + 1,
        "implicit_h": sum(atom.implicit_h for atom in g.atoms),
    }
