"""Circular fingerprints, similarity, and import of precomputed bit vectors.

ECFP is computed natively from a parsed molecule; MACCS / Avalon / RDKit
fingerprints are import-only (they arrive as precomputed 0/1 rows, e.g.
from the CSV interface in :func:`read_fingerprint_csv`).

Hashing is a fixed 64-bit FNV-1a over little-endian integer words, so
fingerprints are identical across runs and platforms. Identifier
collisions OR into the same bit, the standard hashed-fingerprint
behavior.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .smiles import AROMATIC, DOUBLE, Molecule, SINGLE, TRIPLE

ECFP = "ecfp"
IMPORT_KINDS = ("maccs", "avalon", "rdkit")

FNV_OFFSET = 0xCBF29CE484222325
FNV_PRIME = 0x100000001B3
MASK64 = (1 << 64) - 1

BOND_CODE = {SINGLE: 1, DOUBLE: 2, TRIPLE: 3, AROMATIC: 4}

ATOMIC_NUMBER = {
    "H": 1, "B": 5, "C": 6, "N": 7, "O": 8, "F": 9,
    "P": 15, "S": 16, "Cl": 17, "Br": 35, "I": 53,
}


class WidthMismatch(ValueError):
    pass


class LengthMismatch(ValueError):
    pass


class UnknownKind(ValueError):
    pass


def hash_ints(values) -> int:
    """FNV-1a over the 8 little-endian bytes of each value (mod 2^64)."""
    h = FNV_OFFSET
    for v in values:
        word = v & MASK64
        for _ in range(8):
            h ^= word & 0xFF
            h = (h * FNV_PRIME) & MASK64
            word >>= 8
    return h


@dataclass(frozen=True)
class Fingerprint:
    bits: np.ndarray  # uint8 0/1 row of length n_bits
    n_bits: int
    kind: str
    radius: int | None = None

    def popcount(self) -> int:
        return int(self.bits.sum())

    def on_bits(self) -> list[int]:
        return np.flatnonzero(self.bits).tolist()


def _initial_identifiers(mol: Molecule) -> list[int]:
    ring = mol.ring_atoms()
    ids = []
    for idx, atom in enumerate(mol.atoms):
        ids.append(hash_ints([
            ATOMIC_NUMBER[atom.symbol],
            mol.degree(idx),
            atom.charge,
            atom.h_count,
            int(atom.aromatic),
            int(idx in ring),
        ]))
    return ids


def ecfp(mol: Molecule, radius: int = 2, n_bits: int = 2048) -> Fingerprint:
    """Circular fingerprint of ``mol``.

    Every atom starts from an invariant hash of (element, degree,
    charge, H count, aromatic flag, ring membership). Each iteration
    rehashes the atom id with its (bond code, neighbor id) pairs sorted
    for order independence, and every identifier produced at every
    iteration sets bit ``id mod n_bits``. Bits at radius r are therefore
    a subset of the bits at radius r+1.
    """
    if radius < 0:
        raise ValueError("radius must be >= 0")
    if n_bits < 1 or (n_bits & (n_bits - 1)) != 0:
        raise ValueError(f"n_bits must be a positive power of two, got {n_bits}")
    neighbor_table = [mol.neighbors(i) for i in range(len(mol.atoms))]
    bits = np.zeros(n_bits, dtype=np.uint8)
    ids = _initial_identifiers(mol)
    for i in ids:
        bits[i % n_bits] = 1
    for r in range(1, radius + 1):
        nxt = []
        for idx in range(len(mol.atoms)):
            pairs = sorted((BOND_CODE[order], ids[j])
                           for j, order in neighbor_table[idx])
            stream = [r, ids[idx]]
            for code, nid in pairs:
                stream.append(code)
                stream.append(nid)
            nxt.append(hash_ints(stream))
        ids = nxt
        for i in ids:
            bits[i % n_bits] = 1
    return Fingerprint(bits=bits, n_bits=n_bits, kind=ECFP, radius=radius)


def tanimoto(a: Fingerprint, b: Fingerprint) -> float:
    """|a AND b| / |a OR b|; 1.0 when both are all-zero (empty feature
    sets compare as identical, keeping similarity edges defined)."""
    if a.n_bits != b.n_bits:
        raise WidthMismatch(f"fingerprint widths differ: {a.n_bits} vs {b.n_bits}")
    inter = int(np.count_nonzero(a.bits & b.bits))
    union = int(np.count_nonzero(a.bits | b.bits))
    if union == 0:
        return 1.0
    return inter / union


def import_fingerprint(bits, kind: str, n_bits: int) -> Fingerprint:
    """Wrap an externally computed 0/1 row verbatim.

    Only non-ECFP kinds may be imported; ECFP bits must come from
    :func:`ecfp` so the kind tag stays truthful.
    """
    if kind not in IMPORT_KINDS:
        raise UnknownKind(f"kind must be one of {IMPORT_KINDS}, got {kind!r}")
    arr = np.asarray(bits, dtype=np.uint8)
    if arr.ndim != 1 or arr.shape[0] != n_bits:
        raise LengthMismatch(
            f"expected {n_bits} bits, got {arr.size if arr.ndim == 1 else arr.shape}")
    if not np.isin(arr, (0, 1)).all():
        raise ValueError("bit vector entries must be 0 or 1")
    return Fingerprint(bits=arr.copy(), n_bits=n_bits, kind=kind)


def bits_from_hex(hex_string: str, n_bits: int) -> np.ndarray:
    """Decode the CSV hex representation: most-significant bit of the
    first hex digit is bit index 0; padding bits past n_bits must be 0."""
    expected = (n_bits + 3) // 4
    if len(hex_string) != expected:
        raise LengthMismatch(
            f"hex string for {n_bits} bits must have {expected} digits, "
            f"got {len(hex_string)}")
    raw = np.zeros(expected * 4, dtype=np.uint8)
    for d, ch in enumerate(hex_string):
        val = int(ch, 16)
        for k in range(4):
            raw[d * 4 + k] = (val >> (3 - k)) & 1
    if raw[n_bits:].any():
        raise ValueError("padding bits beyond n_bits must be zero")
    return raw[:n_bits]


def bits_to_hex(bits: np.ndarray) -> str:
    n = bits.shape[0]
    digits = []
    for d in range((n + 3) // 4):
        val = 0
        for k in range(4):
            i = d * 4 + k
            if i < n and bits[i]:
                val |= 1 << (3 - k)
        digits.append(format(val, "x"))
    return "".join(digits)


def read_fingerprint_csv(path) -> dict[str, Fingerprint]:
    """Read the import file: header ``compound_id,kind,n_bits,bits``
    with ``bits`` as a hex string (MSB of digit 0 = bit 0)."""
    import csv

    out: dict[str, Fingerprint] = {}
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        required = {"compound_id", "kind", "n_bits", "bits"}
        if reader.fieldnames is None or not required.issubset(reader.fieldnames):
            raise ValueError(
                f"fingerprint CSV needs columns {sorted(required)}, "
                f"got {reader.fieldnames}")
        for row in reader:
            n_bits = int(row["n_bits"])
            bits = bits_from_hex(row["bits"].strip(), n_bits)
            out[row["compound_id"].strip()] = import_fingerprint(
                bits, row["kind"].strip(), n_bits)
    return out
