"""SMILES tokenization and parsing.

The tokenizer splits a SMILES string into lexical tokens whose texts
concatenate back to the input.  The parser turns the token stream into a
plain molecular graph: atoms with their bracket properties, and bonds with
an order.  Stereo marks (``/``, ``\\``, ``@``) are kept in the token stream
but carry no graph semantics, and no aromaticity perception is attempted:
lowercase atoms are aromatic, everything else is not.

Supported grammar
-----------------
- organic subset atoms ``B C N O S P F Cl Br I`` and aromatic ``b c n o s p``
- bracket atoms ``[isotope? symbol chirality? Hcount? charge? class?]``
- bonds ``- = # :`` plus the directional ``/`` and ``\\``
- branches ``(`` ``)``, ring closures ``0-9`` and ``%nn``, and ``.``
"""

from __future__ import annotations

import enum
import re
from dataclasses import dataclass, field

__all__ = [
    "ELEMENTS",
    "Atom",
    "Bond",
    "BondOrder",
    "InvalidBracketAtom",
    "Molecule",
    "SmilesError",
    "SmilesSyntaxError",
    "SmilesToken",
    "TokenKind",
    "UnbalancedParenthesis",
    "UnknownCharacter",
    "UnmatchedRingClosure",
    "UnterminatedBracket",
    "atomic_number",
    "implicit_hydrogens",
    "parse",
    "symbols",
    "tokenize",
]

# fmt: off
ELEMENTS = (
    "H", "He", "Li", "Be", "B", "C", "N", "O", "F", "Ne", "Na", "Mg", "Al",
    "Si", "P", "S", "Cl", "Ar", "K", "Ca", "Sc", "Ti", "V", "Cr", "Mn", "Fe",
    "Co", "Ni", "Cu", "Zn", "Ga", "Ge", "As", "Se", "Br", "Kr", "Rb", "Sr",
    "Y", "Zr", "Nb", "Mo", "Tc", "Ru", "Rh", "Pd", "Ag", "Cd", "In", "Sn",
    "Sb", "Te", "I", "Xe", "Cs", "Ba", "La", "Ce", "Pr", "Nd", "Pm", "Sm",
    "Eu", "Gd", "Tb", "Dy", "Ho", "Er", "Tm", "Yb", "Lu", "Hf", "Ta", "W",
    "Re", "Os", "Ir", "Pt", "Au", "Hg", "Tl", "Pb", "Bi", "Po", "At", "Rn",
    "Fr", "Ra", "Ac", "Th", "Pa", "U", "Np", "Pu", "Am", "Cm", "Bk", "Cf",
    "Es", "Fm", "Md", "No", "Lr", "Rf", "Db", "Sg", "Bh", "Hs", "Mt", "Ds",
    "Rg", "Cn", "Nh", "Fl", "Mc", "Lv", "Ts", "Og",
)
# fmt: on
_ATOMIC_NUMBER = {sym: i + 1 for i, sym in enumerate(ELEMENTS)}

ORGANIC = ("Cl", "Br", "B", "C", "N", "O", "S", "P", "F", "I")
AROMATIC = ("b", "c", "n", "o", "s", "p")
# lowercase symbols allowed inside brackets
BRACKET_AROMATIC = ("se", "as", "te", "b", "c", "n", "o", "s", "p")

DEFAULT_VALENCE = {"B": 3, "C": 4, "N": 3, "O": 2, "P": 3, "S": 2,
                   "F": 1, "Cl": 1, "Br": 1, "I": 1}

BOND_CHARS = "-=#:/\\"

_BRACKET_RE = re.compile(
    r"""
    (?P<isotope>\d+)?
    (?P<symbol>se|as|te|[A-Z][a-z]?|[bcnosp])
    (?P<chiral>@@|@)?
    (?P<hydrogens>H\d*)?
    (?P<charge>\+\+|--|[+-]\d*)?
    (?::(?P<mapclass>\d+))?
    $""",
    re.VERBOSE,
)


class SmilesError(ValueError):
    """Base class for tokenizer and parser failures."""

    def __init__(self, message: str, position: int | None = None):
        super().__init__(message)
        self.position = position


class UnknownCharacter(SmilesError):
    pass


class UnterminatedBracket(SmilesError):
    pass


class UnmatchedRingClosure(SmilesError):
    def __init__(self, index: int, position: int | None = None):
        super().__init__(f"ring closure {index} is never closed", position)
        self.index = index


class UnbalancedParenthesis(SmilesError):
    pass


class InvalidBracketAtom(SmilesError):
    pass


class SmilesSyntaxError(SmilesError):
    """Structural problem not covered by the more specific errors."""


class TokenKind(enum.Enum):
    ORGANIC_ATOM = "OrganicAtom"
    AROMATIC_ATOM = "AromaticAtom"
    BRACKET_ATOM = "BracketAtom"
    BOND = "Bond"
    BRANCH_OPEN = "BranchOpen"
    BRANCH_CLOSE = "BranchClose"
    RING_CLOSURE = "RingClosure"
    DOT = "Dot"


_ATOM_KINDS = (TokenKind.ORGANIC_ATOM, TokenKind.AROMATIC_ATOM, TokenKind.BRACKET_ATOM)


@dataclass(frozen=True)
class SmilesToken:
    kind: TokenKind
    text: str
    position: int

    @property
    def ring_index(self) -> int:
        """Numeric ring-closure label (``"%12"`` -> 12)."""
        if self.kind is not TokenKind.RING_CLOSURE:
            raise AttributeError("only ring-closure tokens carry an index")
        return int(self.text.lstrip("%"))


class BondOrder(enum.IntEnum):
    SINGLE = 1
    DOUBLE = 2
    TRIPLE = 3
    AROMATIC = 4

    @property
    def valence_contribution(self) -> float:
        return 1.5 if self is BondOrder.AROMATIC else float(self.value)


_BOND_SYMBOL = {"-": BondOrder.SINGLE, "=": BondOrder.DOUBLE,
                "#": BondOrder.TRIPLE, ":": BondOrder.AROMATIC}


@dataclass
class Atom:
    element: str
    aromatic: bool = False
    formal_charge: int = 0
    explicit_h_count: int | None = None
    isotope: int | None = None
    bracket: bool = False
    degree: int = 0

    @property
    def atomic_number(self) -> int:
        return _ATOMIC_NUMBER[self.element]


@dataclass(frozen=True)
class Bond:
    begin: int
    end: int
    order: BondOrder

    @property
    def endpoints(self) -> tuple[int, int]:
        return (self.begin, self.end)


@dataclass
class Molecule:
    atoms: list[Atom]
    bonds: list[Bond]
    source: str = ""
    _adjacency: list[list[tuple[int, BondOrder]]] | None = field(
        default=None, repr=False, compare=False)

    def __len__(self) -> int:
        return len(self.atoms)

    @property
    def adjacency(self) -> list[list[tuple[int, BondOrder]]]:
        """Per-atom list of ``(neighbor, bond order)`` in bond-list order."""
        if self._adjacency is None:
            adj: list[list[tuple[int, BondOrder]]] = [[] for _ in self.atoms]
            for b in self.bonds:
                adj[b.begin].append((b.end, b.order))
                adj[b.end].append((b.begin, b.order))
            self._adjacency = adj
        return self._adjacency


def atomic_number(symbol: str) -> int:
    return _ATOMIC_NUMBER[symbol.capitalize()]


def tokenize(smiles: str) -> list[SmilesToken]:
    """Split ``smiles`` into tokens.

    Raises
    ------
    UnknownCharacter
        For a character outside the supported alphabet (``&`` included).
    UnterminatedBracket
        If a ``[`` has no matching ``]``.
    """
    if not smiles:
        raise SmilesSyntaxError("empty SMILES string", 0)
    tokens: list[SmilesToken] = []
    i, n = 0, len(smiles)
    while i < n:
        c = smiles[i]
        if c == "[":
            j = smiles.find("]", i + 1)
            k = smiles.find("[", i + 1)
            if j < 0 or (0 <= k < j):
                raise UnterminatedBracket(f"unterminated bracket atom at {i}", i)
            tokens.append(SmilesToken(TokenKind.BRACKET_ATOM, smiles[i:j + 1], i))
            i = j + 1
            continue
        if smiles.startswith(("Cl", "Br"), i):
            tokens.append(SmilesToken(TokenKind.ORGANIC_ATOM, smiles[i:i + 2], i))
            i += 2
            continue
        if c in "BCNOSPFI":
            kind = TokenKind.ORGANIC_ATOM
        elif c in AROMATIC:
            kind = TokenKind.AROMATIC_ATOM
        elif c in BOND_CHARS:
            kind = TokenKind.BOND
        elif c == "(":
            kind = TokenKind.BRANCH_OPEN
        elif c == ")":
            kind = TokenKind.BRANCH_CLOSE
        elif c == ".":
            kind = TokenKind.DOT
        elif c.isdigit() and c.isascii():
            kind = TokenKind.RING_CLOSURE
        elif c == "%":
            digits = smiles[i + 1:i + 3]
            if len(digits) == 2 and digits.isascii() and digits.isdigit():
                tokens.append(SmilesToken(TokenKind.RING_CLOSURE, smiles[i:i + 3], i))
                i += 3
                continue
            raise UnknownCharacter(f"'%' at {i} must be followed by two digits", i)
        else:
            raise UnknownCharacter(f"unsupported character {c!r} at {i}", i)
        tokens.append(SmilesToken(kind, c, i))
        i += 1
    return tokens


def symbols(smiles: str) -> tuple[str, ...]:
    """Symbol sequence seen by the string kernel: one entry per token."""
    return tuple(t.text for t in tokenize(smiles))


def _parse_bracket(tok: SmilesToken) -> Atom:
    body = tok.text[1:-1]
    m = _BRACKET_RE.match(body)
    if m is None:
        raise InvalidBracketAtom(f"malformed bracket atom {tok.text!r} at {tok.position}",
                                 tok.position)
    symbol = m["symbol"]
    aromatic = symbol.islower()
    element = symbol.capitalize()
    if element not in _ATOMIC_NUMBER:
        raise InvalidBracketAtom(f"unknown element {symbol!r} at {tok.position}", tok.position)
    isotope = None
    if m["isotope"] is not None:
        isotope = int(m["isotope"])
        if isotope <= 0:
            raise InvalidBracketAtom(f"isotope must be positive at {tok.position}", tok.position)
    hyd = m["hydrogens"]
    h_count = 0 if hyd is None else (int(hyd[1:]) if len(hyd) > 1 else 1)
    charge = 0
    ch = m["charge"]
    if ch:
        sign = 1 if ch[0] == "+" else -1
        if ch in ("++", "--"):
            charge = 2 * sign
        elif len(ch) > 1:
            charge = sign * int(ch[1:])
        else:
            charge = sign
    return Atom(element=element, aromatic=aromatic, formal_charge=charge,
                explicit_h_count=h_count, isotope=isotope, bracket=True)


def parse(smiles: str) -> Molecule:
    """Parse ``smiles`` into a :class:`Molecule`.

    Ring closures bond the opening and closing atoms; an unspecified bond is
    aromatic between two aromatic atoms and single otherwise.  Any failure is
    raised as a :class:`SmilesError` subclass.
    """
    tokens = tokenize(smiles)
    atoms: list[Atom] = []
    bonds: list[Bond] = []
    seen_pairs: set[frozenset[int]] = set()
    branch_stack: list[tuple[int, int]] = []  # (atom index, position of '(')
    open_rings: dict[int, tuple[int, BondOrder | None, int]] = {}
    prev: int | None = None
    pending_bond: str | None = None
    pending_pos = 0

    def resolve(a: int, b: int, sym: str | None) -> BondOrder:
        if sym is not None and sym in _BOND_SYMBOL:
            return _BOND_SYMBOL[sym]
        if atoms[a].aromatic and atoms[b].aromatic:
            return BondOrder.AROMATIC
        return BondOrder.SINGLE

    def add_bond(a: int, b: int, order: BondOrder, pos: int) -> None:
        if a == b:
            raise SmilesSyntaxError(f"atom bonded to itself at {pos}", pos)
        key = frozenset((a, b))
        if key in seen_pairs:
            raise SmilesSyntaxError(f"duplicate bond between atoms {a} and {b} at {pos}", pos)
        seen_pairs.add(key)
        bonds.append(Bond(a, b, order))
        atoms[a].degree += 1
        atoms[b].degree += 1

    for tok in tokens:
        kind = tok.kind
        if kind in _ATOM_KINDS:
            if kind is TokenKind.BRACKET_ATOM:
                atom = _parse_bracket(tok)
            else:
                atom = Atom(element=tok.text.capitalize(),
                            aromatic=kind is TokenKind.AROMATIC_ATOM)
            atoms.append(atom)
            idx = len(atoms) - 1
            if prev is not None:
                add_bond(prev, idx, resolve(prev, idx, pending_bond), tok.position)
            elif pending_bond is not None:
                raise SmilesSyntaxError(f"bond with no preceding atom at {pending_pos}",
                                        pending_pos)
            prev = idx
            pending_bond = None
        elif kind is TokenKind.BOND:
            if prev is None or pending_bond is not None:
                raise SmilesSyntaxError(f"misplaced bond symbol at {tok.position}", tok.position)
            pending_bond, pending_pos = tok.text, tok.position
        elif kind is TokenKind.BRANCH_OPEN:
            if prev is None or pending_bond is not None:
                raise SmilesSyntaxError(f"branch with no anchor atom at {tok.position}",
                                        tok.position)
            branch_stack.append((prev, tok.position))
        elif kind is TokenKind.BRANCH_CLOSE:
            if not branch_stack:
                raise UnbalancedParenthesis(f"unmatched ')' at {tok.position}", tok.position)
            if pending_bond is not None:
                raise SmilesSyntaxError(f"dangling bond at {pending_pos}", pending_pos)
            prev, _ = branch_stack.pop()
        elif kind is TokenKind.RING_CLOSURE:
            if prev is None:
                raise SmilesSyntaxError(f"ring closure with no atom at {tok.position}",
                                        tok.position)
            label = tok.ring_index
            sym = pending_bond if pending_bond in _BOND_SYMBOL else None
            if label in open_rings:
                start, start_sym, _ = open_rings.pop(label)
                if start_sym is not None and sym is not None and start_sym != _BOND_SYMBOL[sym]:
                    raise SmilesSyntaxError(
                        f"conflicting ring-bond symbols for ring {label} at {tok.position}",
                        tok.position)
                if sym is None and start_sym is not None:
                    order = start_sym
                else:
                    order = resolve(start, prev, sym)
                add_bond(start, prev, order, tok.position)
            else:
                open_rings[label] = (prev, _BOND_SYMBOL[sym] if sym else None, tok.position)
            pending_bond = None
        elif kind is TokenKind.DOT:
            if prev is None or pending_bond is not None or branch_stack:
                raise SmilesSyntaxError(f"misplaced '.' at {tok.position}", tok.position)
            prev = None
    if pending_bond is not None:
        raise SmilesSyntaxError(f"dangling bond at {pending_pos}", pending_pos)
    if branch_stack:
        pos = branch_stack[-1][1]
        raise UnbalancedParenthesis(f"unclosed '(' at {pos}", pos)
    if open_rings:
        label, (_, _, pos) = min(open_rings.items())
        raise UnmatchedRingClosure(label, pos)
    if not atoms:
        raise SmilesSyntaxError("no atoms in SMILES string", 0)
    return Molecule(atoms=atoms, bonds=bonds, source=smiles)


def implicit_hydrogens(m: Molecule, atom_index: int) -> int:
    """Hydrogens implied by the default valence of an organic-subset atom.

    Bracket atoms report their explicit count.  Aromatic bonds count 1.5 and
    the bond-order sum is floored before subtraction.  Elements without a
    default valence get 0.
    """
    atom = m.atoms[atom_index]
    if atom.bracket:
        return atom.explicit_h_count or 0
    valence = DEFAULT_VALENCE.get(atom.element)
    if valence is None:
        return 0
    total = sum(order.valence_contribution for _, order in m.adjacency[atom_index])
    return max(0, valence - int(total))
