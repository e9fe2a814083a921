from .smiles import (
    Atom,
    Bond,
    EmptyInput,
    Molecule,
    SmilesError,
    UnbalancedParenthesis,
    UnknownAtomSymbol,
    UnpairedRingBond,
    parse_smiles,
)
from .fingerprints import (
    Fingerprint,
    LengthMismatch,
    UnknownKind,
    WidthMismatch,
    bits_from_hex,
    bits_to_hex,
    ecfp,
    import_fingerprint,
    read_fingerprint_csv,
    tanimoto,
)

__all__ = [
    "Atom", "Bond", "EmptyInput", "Molecule", "SmilesError",
    "UnbalancedParenthesis", "UnknownAtomSymbol", "UnpairedRingBond",
    "parse_smiles",
    "Fingerprint", "LengthMismatch", "UnknownKind", "WidthMismatch",
    "bits_from_hex", "bits_to_hex", "ecfp", "import_fingerprint",
    "read_fingerprint_csv", "tanimoto",
]
