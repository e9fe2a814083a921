"""SMILES parsing into a molecular graph.

Supported grammar (ASCII input):

* organic-subset atoms ``B C N O P S F Cl Br I`` and the aromatic
  lowercase forms ``b c n o p s``
* bracket atoms ``[isotope? symbol @|@@? Hcount? charge? :class?]``
  where symbol is any of the atoms above plus ``H``
* bond symbols ``- = # :`` (``/`` and ``\\`` parse as single bonds,
  stereo direction discarded; ``@`` chirality inside brackets discarded)
* branches ``( )``
* ring closures ``1``-``9`` and two-digit ``%nn``

Implicit hydrogens are never materialized as atoms. For organic-subset
atoms the hydrogen count is derived from the smallest standard valence
that fits the bond-order sum (aromatic bonds count 1, with one extra
for aromatic C/N/P); bracket atoms carry exactly the hydrogens they
declare.

Parse errors carry the byte offset of the offending character. An
unterminated ``[`` reports as :class:`UnbalancedParenthesis`; a dangling
bond symbol reports as :class:`UnknownAtomSymbol` at the position where
an atom was expected.
"""

from __future__ import annotations

from dataclasses import dataclass, field

SINGLE = "single"
DOUBLE = "double"
TRIPLE = "triple"
AROMATIC = "aromatic"

BOND_SYMBOLS = {"-": SINGLE, "=": DOUBLE, "#": TRIPLE, ":": AROMATIC,
                "/": SINGLE, "\\": SINGLE}

# order -> contribution to the valence bond sum
BOND_VALENCE = {SINGLE: 1, DOUBLE: 2, TRIPLE: 3, AROMATIC: 1}

TWO_LETTER = ("Cl", "Br")
ALIPHATIC = {"B", "C", "N", "O", "P", "S", "F", "Cl", "Br", "I"}
AROMATIC_SYMBOLS = {"b", "c", "n", "o", "p", "s"}
BRACKET_SYMBOLS = ALIPHATIC | {"H"}

# standard SMILES valences, smallest first
VALENCES = {
    "B": (3,), "C": (4,), "N": (3, 5), "O": (2,), "P": (3, 5),
    "S": (2, 4, 6), "F": (1,), "Cl": (1,), "Br": (1,), "I": (1,),
    "H": (1,),
}


class SmilesError(ValueError):
    """Base for parse failures; ``offset`` is the byte position."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} at offset {offset}")
        self.offset = offset


class EmptyInput(SmilesError):
    pass


class UnbalancedParenthesis(SmilesError):
    pass


class UnpairedRingBond(SmilesError):
    pass


class UnknownAtomSymbol(SmilesError):
    pass


@dataclass
class Atom:
    symbol: str
    aromatic: bool = False
    charge: int = 0
    h_count: int = 0
    isotope: int | None = None


@dataclass
class Bond:
    i: int
    j: int
    order: str


@dataclass
class Molecule:
    atoms: list[Atom] = field(default_factory=list)
    bonds: list[Bond] = field(default_factory=list)

    def neighbors(self, idx: int) -> list[tuple[int, str]]:
        out = []
        for b in self.bonds:
            if b.i == idx:
                out.append((b.j, b.order))
            elif b.j == idx:
                out.append((b.i, b.order))
        return out

    def degree(self, idx: int) -> int:
        return len(self.neighbors(idx))

    def ring_atoms(self) -> set[int]:
        """Indices of atoms lying on at least one cycle.

        An atom is in a ring iff it touches a non-bridge bond; bridges
        are found by removing each bond and re-checking connectivity
        (molecules are small, the quadratic cost is irrelevant).
        """
        adjacency: list[list[int]] = [[] for _ in self.atoms]
        for k, b in enumerate(self.bonds):
            adjacency[b.i].append(k)
            adjacency[b.j].append(k)
        in_ring: set[int] = set()
        for skip, b in enumerate(self.bonds):
            seen = {b.i}
            stack = [b.i]
            while stack:
                cur = stack.pop()
                if cur == b.j:
                    break
                for k in adjacency[cur]:
                    if k == skip:
                        continue
                    e = self.bonds[k]
                    nxt = e.j if e.i == cur else e.i
                    if nxt not in seen:
                        seen.add(nxt)
                        stack.append(nxt)
            if b.j in seen:
                in_ring.add(b.i)
                in_ring.add(b.j)
        return in_ring

    def to_adjacency_text(self) -> str:
        """Deterministic serialization used by idempotence checks."""
        lines = []
        for i, a in enumerate(self.atoms):
            iso = "" if a.isotope is None else f" iso={a.isotope}"
            lines.append(
                f"atom {i} {a.symbol} arom={int(a.aromatic)} "
                f"chg={a.charge} h={a.h_count}{iso}"
            )
        for i, j, order in sorted(
            (min(b.i, b.j), max(b.i, b.j), b.order) for b in self.bonds
        ):
            lines.append(f"bond {i}-{j} {order}")
        return "\n".join(lines)


class _Parser:
    def __init__(self, text: str):
        self.text = text
        self.pos = 0
        self.atoms: list[Atom] = []
        self.bonds: list[Bond] = []
        self.bond_keys: set[tuple[int, int]] = set()
        self.prev: int | None = None
        self.pending: str | None = None  # explicit bond symbol, if any
        self.pending_offset = 0
        self.branch_stack: list[tuple[int | None, int]] = []
        self.ring_open: dict[int, tuple[int, str | None, int]] = {}
        self.bracket_flag: list[bool] = []

    def error(self, cls, message, offset=None):
        raise cls(message, self.pos if offset is None else offset)

    def add_atom(self, atom: Atom, bracket: bool) -> None:
        idx = len(self.atoms)
        self.atoms.append(atom)
        self.bracket_flag.append(bracket)
        if self.prev is not None:
            self.add_bond(self.prev, idx, self.pending)
        self.prev = idx
        self.pending = None

    def add_bond(self, i: int, j: int, explicit: str | None,
                 offset: int | None = None) -> None:
        if i == j:
            self.error(UnpairedRingBond, "ring bond to the same atom", offset)
        key = (min(i, j), max(i, j))
        if key in self.bond_keys:
            self.error(UnpairedRingBond, "duplicate bond between atoms", offset)
        self.bond_keys.add(key)
        if explicit is None:
            order = AROMATIC if (self.atoms[i].aromatic
                                 and self.atoms[j].aromatic) else SINGLE
        else:
            order = explicit
        self.bonds.append(Bond(i, j, order))

    def ring_closure(self, num: int, offset: int) -> None:
        if self.prev is None:
            self.error(UnpairedRingBond, "ring closure before any atom", offset)
        if num in self.ring_open:
            other, open_order, _ = self.ring_open.pop(num)
            if open_order is not None and self.pending is not None \
                    and open_order != self.pending:
                self.error(UnpairedRingBond,
                           f"conflicting bond orders on ring closure {num}",
                           offset)
            self.add_bond(other, self.prev,
                          open_order if open_order is not None else self.pending,
                          offset)
        else:
            self.ring_open[num] = (self.prev, self.pending, offset)
        self.pending = None

    def parse_bracket(self) -> None:
        start = self.pos  # at '['
        end = self.text.find("]", start)
        if end < 0:
            self.error(UnbalancedParenthesis, "unterminated bracket atom", start)
        body = self.text[start + 1:end]
        p = 0

        isotope = None
        while p < len(body) and body[p].isdigit():
            isotope = (isotope or 0) * 10 + int(body[p])
            p += 1

        symbol = None
        aromatic = False
        for two in TWO_LETTER:
            if body[p:p + 2] == two:
                symbol, p = two, p + 2
                break
        if symbol is None and p < len(body):
            ch = body[p]
            if ch in BRACKET_SYMBOLS:
                symbol, p = ch, p + 1
            elif ch in AROMATIC_SYMBOLS:
                symbol, aromatic, p = ch.upper(), True, p + 1
        if symbol is None:
            self.error(UnknownAtomSymbol, "unknown bracket atom symbol",
                       start + 1 + p)

        while p < len(body) and body[p] == "@":  # chirality, discarded
            p += 1

        h_count = 0
        if p < len(body) and body[p] == "H":
            p += 1
            h_count = 1
            digits = ""
            while p < len(body) and body[p].isdigit():
                digits += body[p]
                p += 1
            if digits:
                h_count = int(digits)

        charge = 0
        if p < len(body) and body[p] in "+-":
            sign = 1 if body[p] == "+" else -1
            run = 0
            while p < len(body) and body[p] in "+-":
                if (body[p] == "+") != (sign == 1):
                    self.error(UnknownAtomSymbol, "mixed charge signs",
                               start + 1 + p)
                run += 1
                p += 1
            digits = ""
            while p < len(body) and body[p].isdigit():
                digits += body[p]
                p += 1
            charge = sign * (int(digits) if digits else run)

        if p < len(body) and body[p] == ":":  # atom class, discarded
            p += 1
            if p == len(body) or not body[p].isdigit():
                self.error(UnknownAtomSymbol, "expected atom class digits",
                           start + 1 + p)
            while p < len(body) and body[p].isdigit():
                p += 1

        if p != len(body):
            self.error(UnknownAtomSymbol, "unexpected character in bracket atom",
                       start + 1 + p)

        self.add_atom(Atom(symbol, aromatic, charge, h_count, isotope),
                      bracket=True)
        self.pos = end + 1

    def run(self) -> Molecule:
        text = self.text
        while self.pos < len(text):
            ch = text[self.pos]
            if ch == "(":
                if self.prev is None:
                    self.error(UnbalancedParenthesis,
                               "branch opened before any atom")
                self.branch_stack.append((self.prev, self.pos))
                self.pos += 1
            elif ch == ")":
                if not self.branch_stack:
                    self.error(UnbalancedParenthesis, "unopened ')'")
                if self.pending is not None:
                    self.error(UnknownAtomSymbol,
                               "bond symbol before ')'", self.pending_offset)
                self.prev, _ = self.branch_stack.pop()
                self.pos += 1
            elif ch in BOND_SYMBOLS:
                if self.pending is not None:
                    self.error(UnknownAtomSymbol, "doubled bond symbol")
                self.pending = BOND_SYMBOLS[ch]
                self.pending_offset = self.pos
                self.pos += 1
            elif ch.isdigit():
                self.ring_closure(int(ch), self.pos)
                self.pos += 1
            elif ch == "%":
                digits = text[self.pos + 1:self.pos + 3]
                if len(digits) != 2 or not digits.isdigit():
                    self.error(UnpairedRingBond,
                               "'%' needs two ring-closure digits")
                self.ring_closure(int(digits), self.pos)
                self.pos += 3
            elif ch == "[":
                self.parse_bracket()
            elif text[self.pos:self.pos + 2] in TWO_LETTER:
                self.add_atom(Atom(text[self.pos:self.pos + 2]), bracket=False)
                self.pos += 2
            elif ch in ALIPHATIC:
                self.add_atom(Atom(ch), bracket=False)
                self.pos += 1
            elif ch in AROMATIC_SYMBOLS:
                self.add_atom(Atom(ch.upper(), aromatic=True), bracket=False)
                self.pos += 1
            else:
                self.error(UnknownAtomSymbol, f"unknown symbol {ch!r}")

        if self.pending is not None:
            self.error(UnknownAtomSymbol, "dangling bond symbol",
                       self.pending_offset)
        if self.branch_stack:
            self.error(UnbalancedParenthesis, "unclosed '('",
                       self.branch_stack[-1][1])
        if self.ring_open:
            num = min(self.ring_open)
            self.error(UnpairedRingBond, f"unclosed ring bond {num}",
                       self.ring_open[num][2])

        mol = Molecule(self.atoms, self.bonds)
        self._fill_hydrogens(mol)
        return mol

    def _fill_hydrogens(self, mol: Molecule) -> None:
        # Aromatic bonds count 1 toward the valence sum; aromatic C/N/P
        # claim one more for their share of the delocalized pi system
        # (benzene CH, pyridine N). Aromatic O/S/B donate a lone pair
        # instead and get no extra (furan, thiophene).
        for idx, atom in enumerate(mol.atoms):
            if self.bracket_flag[idx]:
                continue  # bracket atoms keep their declared count
            bond_sum = sum(BOND_VALENCE[order]
                           for _, order in mol.neighbors(idx))
            if atom.aromatic and atom.symbol in ("C", "N", "P"):
                bond_sum += 1
            for valence in VALENCES[atom.symbol]:
                if valence >= bond_sum:
                    atom.h_count = valence - bond_sum
                    break
            else:
                atom.h_count = 0


def parse_smiles(text: str) -> Molecule:
    """Parse a SMILES string into a :class:`Molecule`.

    Raises :class:`EmptyInput`, :class:`UnbalancedParenthesis`,
    :class:`UnpairedRingBond` or :class:`UnknownAtomSymbol`, each
    carrying the byte offset of the problem.
    """
    if not text or not text.strip():
        raise EmptyInput("empty SMILES", 0)
    if not text.isascii():
        bad = next(i for i, c in enumerate(text) if not c.isascii())
        raise UnknownAtomSymbol("non-ASCII character", bad)
    return _Parser(text.strip()).run()
