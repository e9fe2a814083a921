"""Table ingestion, label encoding, sample assembly, and the dataset archive.

File formats (UTF-8 CSV, comma separated, first row is the header):

* property table: ``oil_name,plant_name,tissue_name,analytical_ref``
  where ``analytical_ref`` names the oil's analytical table relative to
  the analytical directory
* analytical table: ``compound_name,area_percent`` where the area is a
  positive number or the literal ``Trace`` (mapped to 0.01)
* smiles map: ``compound_name,smiles``
* fingerprint imports: see :func:`essoil.chem.read_fingerprint_csv`

The dataset archive written by the CLI is a single self-describing
binary file: 8-byte magic ``ESSOILD1``, a little-endian u32 JSON header
length, the JSON header (sorted keys), then per sample the raw
little-endian float64 payload of features (N x F), weights (N x N) and
target (C). Identical inputs produce byte-identical archives.
"""

from __future__ import annotations

import csv
import json
import logging
import struct
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .chem import Fingerprint, WidthMismatch, ecfp, parse_smiles
from .chem.fingerprints import ECFP
from .chem.smiles import SmilesError

log = logging.getLogger(__name__)

TRACE_AREA = 0.01

ARCHIVE_MAGIC = b"ESSOILD1"


class MissingColumn(ValueError):
    pass


class EmptyFile(ValueError):
    pass


class NegativeArea(ValueError):
    pass


class UnparsableArea(ValueError):
    pass


class NoCategoriesSurvive(ValueError):
    pass


class KTooLarge(ValueError):
    pass


@dataclass
class Component:
    name: str
    area_percent: float
    smiles: str | None = None


@dataclass
class OilRecord:
    oil_name: str
    plant_name: str
    tissue_name: str
    components: list[Component] = field(default_factory=list)
    analytical_ref: str | None = None


@dataclass
class LabelSpace:
    categories: list[str]
    min_count: int

    @property
    def size(self) -> int:
        return len(self.categories)

    def index(self, tissue: str) -> int:
        return self.categories.index(tissue)


@dataclass
class LabelEncoding:
    label_space: LabelSpace
    kept_indices: list[int]
    targets: np.ndarray  # (n_kept, C) 0/1
    n_excluded: int
    excluded_counts: dict[str, int]


@dataclass
class GraphSample:
    """Complete weighted graph over an oil's compounds, self-loops included."""
    nodes: np.ndarray    # (N, 1 + n_bits)
    weights: np.ndarray  # (N, N) symmetric, unit diagonal
    target: np.ndarray   # (C,)

    @property
    def n_nodes(self) -> int:
        return self.nodes.shape[0]

    def edge_list(self):
        """All N^2 ordered pairs with their similarity weight."""
        n = self.n_nodes
        return [(i, j, float(self.weights[i, j]))
                for i in range(n) for j in range(n)]


@dataclass
class StackedSample:
    """Zero-padded node-feature stack, rows in descending area order."""
    matrix: np.ndarray  # (n_max, 1 + n_bits)
    valid_rows: int
    target: np.ndarray
    n_truncated: int = 0


def _read_rows(path, required: tuple[str, ...]):
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None:
            raise EmptyFile(f"{path}: no header row")
        for col in required:
            if col not in reader.fieldnames:
                raise MissingColumn(f"{path}: missing column {col!r}")
        rows = list(reader)
    if not rows:
        raise EmptyFile(f"{path}: no data rows")
    return rows


def parse_property_table(path) -> list[OilRecord]:
    """One stub record per row, whitespace trimmed, duplicates retained."""
    rows = _read_rows(path, ("oil_name", "plant_name", "tissue_name",
                             "analytical_ref"))
    return [OilRecord(oil_name=r["oil_name"].strip(),
                      plant_name=r["plant_name"].strip(),
                      tissue_name=r["tissue_name"].strip(),
                      analytical_ref=r["analytical_ref"].strip())
            for r in rows]


def parse_area(text: str) -> float:
    text = text.strip()
    if text.lower() == "trace":
        return TRACE_AREA
    try:
        value = float(text)
    except ValueError:
        raise UnparsableArea(f"cannot parse area value {text!r}") from None
    if value <= 0:
        raise NegativeArea(f"area must be positive, got {value}")
    return value


def parse_analytical_table(path) -> list[tuple[str, float]]:
    """(compound_name, area_percent) pairs in file order; Trace -> 0.01.

    Area errors are re-raised with the file and data line that caused
    them (line 1 is the header)."""
    rows = _read_rows(path, ("compound_name", "area_percent"))
    out = []
    for i, r in enumerate(rows, start=2):
        try:
            area = parse_area(r["area_percent"])
        except (NegativeArea, UnparsableArea) as err:
            raise type(err)(f"{path}:{i}: {err}") from None
        out.append((r["compound_name"].strip(), area))
    return out


def read_smiles_map(path) -> dict[str, str]:
    rows = _read_rows(path, ("compound_name", "smiles"))
    return {r["compound_name"].strip(): r["smiles"].strip()
            for r in rows if r["smiles"].strip()}


def load_records(property_path, analytical_dir) -> list[OilRecord]:
    """Join the property table with each oil's analytical table."""
    from pathlib import Path

    records = parse_property_table(property_path)
    base = Path(analytical_dir)
    for rec in records:
        pairs = parse_analytical_table(base / rec.analytical_ref)
        rec.components = [Component(name=n, area_percent=a) for n, a in pairs]
    return records


def encode_labels(records: list[OilRecord], min_count: int = 5) -> LabelEncoding:
    """Binary tissue targets over categories with >= min_count records.

    Categories are sorted lexicographically; records whose tissue was
    dropped are excluded from the modeling set and counted.
    """
    if not records:
        raise ValueError("no records to encode")
    counts: dict[str, int] = {}
    for rec in records:
        counts[rec.tissue_name] = counts.get(rec.tissue_name, 0) + 1
    categories = sorted(t for t, c in counts.items() if c >= min_count)
    if not categories:
        raise NoCategoriesSurvive(
            f"no tissue category has >= {min_count} records "
            f"(counts: {dict(sorted(counts.items()))})")
    index = {t: i for i, t in enumerate(categories)}
    kept, excluded = [], {}
    for i, rec in enumerate(records):
        if rec.tissue_name in index:
            kept.append(i)
        else:
            excluded[rec.tissue_name] = excluded.get(rec.tissue_name, 0) + 1
    targets = np.zeros((len(kept), len(categories)), dtype=np.float64)
    for row, i in enumerate(kept):
        targets[row, index[records[i].tissue_name]] = 1.0
    n_excluded = len(records) - len(kept)
    if n_excluded:
        log.info("label encoding dropped %d records from tissues %s",
                 n_excluded, sorted(excluded))
    return LabelEncoding(LabelSpace(categories, min_count), kept, targets,
                         n_excluded, excluded)


def build_node_feature(area_percent: float, fp: Fingerprint) -> np.ndarray:
    """[area_percent / 100] ++ fingerprint bits as 0.0/1.0."""
    if not 0 < area_percent <= 100:
        raise ValueError(f"area_percent must be in (0, 100], got {area_percent}")
    out = np.empty(1 + fp.n_bits, dtype=np.float64)
    out[0] = area_percent / 100.0
    out[1:] = fp.bits
    return out


def assemble_graph_sample(record: OilRecord, fps: list[Fingerprint],
                          target: np.ndarray) -> GraphSample:
    """Complete graph: every ordered pair plus self-loops, N^2 edges,
    Tanimoto similarity weights, self-loop weight exactly 1."""
    if len(fps) != len(record.components) or not fps:
        raise ValueError("need one fingerprint per component")
    widths = {fp.n_bits for fp in fps}
    if len(widths) != 1:
        raise WidthMismatch(f"mixed fingerprint widths {sorted(widths)}")
    nodes = np.stack([build_node_feature(c.area_percent, fp)
                      for c, fp in zip(record.components, fps)])
    bits = np.stack([fp.bits for fp in fps]).astype(np.uint8)
    weights = kernels.pairwise_tanimoto(bits)
    return GraphSample(nodes=nodes, weights=weights,
                       target=np.asarray(target, dtype=np.float64))


def stack_features(features: np.ndarray, n_max: int,
                   target: np.ndarray) -> StackedSample:
    """Sort rows by descending area share (stable), truncate past n_max,
    zero-pad the rest."""
    if n_max < 1:
        raise ValueError("n_max must be >= 1")
    order = np.argsort(-features[:, 0], kind="stable")
    ordered = features[order]
    n = ordered.shape[0]
    n_truncated = max(0, n - n_max)
    if n_truncated:
        log.warning("stacked sample truncated %d lowest-area rows "
                    "(N=%d > n_max=%d)", n_truncated, n, n_max)
        ordered = ordered[:n_max]
        n = n_max
    matrix = np.zeros((n_max, features.shape[1]), dtype=np.float64)
    matrix[:n] = ordered
    return StackedSample(matrix=matrix, valid_rows=n,
                         target=np.asarray(target, dtype=np.float64),
                         n_truncated=n_truncated)


def assemble_stacked_sample(record: OilRecord, fps: list[Fingerprint],
                            n_max: int, target: np.ndarray) -> StackedSample:
    graph = assemble_graph_sample(record, fps, target)
    return stack_features(graph.nodes, n_max, target)


def split_kfold(n: int, k: int, seed: int) -> list[np.ndarray]:
    """k disjoint index folds of size floor(n/k) or ceil(n/k), from a
    seeded shuffle; same (n, k, seed) always gives the same folds."""
    if k < 2:
        raise ValueError(f"k must be >= 2, got {k}")
    if k > n:
        raise KTooLarge(f"k={k} folds need at least k samples, got n={n}")
    perm = np.random.default_rng(seed).permutation(n)
    sizes = np.full(k, n // k, dtype=np.int64)
    sizes[: n % k] += 1
    folds = []
    start = 0
    for size in sizes:
        folds.append(np.sort(perm[start:start + size]))
        start += size
    return folds


# ---------------------------------------------------------------------------
# assembled dataset and the featurization pipeline
# ---------------------------------------------------------------------------

@dataclass
class Sample:
    oil_name: str
    tissue: str
    features: np.ndarray  # (N, 1 + n_bits), analytical-table row order
    weights: np.ndarray   # (N, N)
    target: np.ndarray    # (C,)


@dataclass
class Dataset:
    samples: list[Sample]
    label_space: LabelSpace
    n_bits: int
    fingerprint_kind: str
    fingerprint_radius: int | None
    exclusions: dict

    def __len__(self) -> int:
        return len(self.samples)

    @property
    def feature_width(self) -> int:
        return 1 + self.n_bits

    def graph_sample(self, i: int) -> GraphSample:
        s = self.samples[i]
        return GraphSample(nodes=s.features, weights=s.weights, target=s.target)

    def stacked_sample(self, i: int, n_max: int) -> StackedSample:
        s = self.samples[i]
        return stack_features(s.features, n_max, s.target)


def resolve_fingerprint(component: Component, kind: str, radius: int,
                        n_bits: int, smiles_map: dict[str, str],
                        imports: dict[str, Fingerprint]):
    """Fingerprint for one compound, or (None, reason) if unresolvable.

    ECFP requires a parseable SMILES; import kinds require an imported
    row of the same kind and width.
    """
    if kind == ECFP:
        smiles = component.smiles or smiles_map.get(component.name)
        if not smiles:
            return None, "no smiles"
        try:
            mol = parse_smiles(smiles)
        except SmilesError as err:
            return None, f"unparsable smiles: {err}"
        return ecfp(mol, radius=radius, n_bits=n_bits), ""
    fp = imports.get(component.name)
    if fp is None:
        return None, f"no imported {kind} fingerprint"
    if fp.kind != kind:
        return None, f"imported fingerprint is {fp.kind}, not {kind}"
    if fp.n_bits != n_bits:
        return None, f"imported width {fp.n_bits} != configured {n_bits}"
    return fp, ""


def build_dataset(records: list[OilRecord], kind: str = ECFP, radius: int = 2,
                  n_bits: int = 2048, smiles_map: dict[str, str] | None = None,
                  imports: dict[str, Fingerprint] | None = None,
                  min_count: int = 5) -> Dataset:
    """Featurize records into an assembled dataset.

    Components without a resolvable fingerprint are dropped from their
    oil (warned); oils losing every component are excluded; then labels
    are encoded and oils from under-populated tissues are excluded.
    """
    smiles_map = smiles_map or {}
    imports = imports or {}
    dropped_components = []
    dropped_oils = []
    usable: list[tuple[OilRecord, list[Fingerprint]]] = []
    for rec in records:
        kept_components, fps = [], []
        for comp in rec.components:
            fp, reason = resolve_fingerprint(comp, kind, radius, n_bits,
                                             smiles_map, imports)
            if fp is None:
                log.warning("dropping component %r of oil %r: %s",
                            comp.name, rec.oil_name, reason)
                dropped_components.append(
                    {"oil": rec.oil_name, "compound": comp.name,
                     "reason": reason})
            else:
                kept_components.append(comp)
                fps.append(fp)
        if not kept_components:
            log.warning("excluding oil %r: no featurizable components",
                        rec.oil_name)
            dropped_oils.append(rec.oil_name)
            continue
        trimmed = OilRecord(rec.oil_name, rec.plant_name, rec.tissue_name,
                            kept_components, rec.analytical_ref)
        usable.append((trimmed, fps))

    if not usable:
        raise NoCategoriesSurvive(
            f"no oil has any featurizable component "
            f"({len(dropped_components)} components unresolvable across "
            f"{len(dropped_oils)} oils; check the smiles map / imports)")
    encoding = encode_labels([rec for rec, _ in usable], min_count=min_count)
    samples = []
    for row, idx in enumerate(encoding.kept_indices):
        rec, fps = usable[idx]
        graph = assemble_graph_sample(rec, fps, encoding.targets[row])
        samples.append(Sample(oil_name=rec.oil_name, tissue=rec.tissue_name,
                              features=graph.nodes, weights=graph.weights,
                              target=graph.target))
    exclusions = {
        "dropped_components": dropped_components,
        "dropped_oils": dropped_oils,
        "dropped_tissue_records": dict(sorted(encoding.excluded_counts.items())),
        "n_label_excluded": encoding.n_excluded,
    }
    return Dataset(samples=samples, label_space=encoding.label_space,
                   n_bits=n_bits, fingerprint_kind=kind,
                   fingerprint_radius=radius if kind == ECFP else None,
                   exclusions=exclusions)


# ---------------------------------------------------------------------------
# archive writer / reader
# ---------------------------------------------------------------------------

def write_archive(dataset: Dataset, path) -> None:
    header = {
        "format": "essoil-dataset",
        "version": 1,
        "n_bits": dataset.n_bits,
        "fingerprint": {"kind": dataset.fingerprint_kind,
                        "radius": dataset.fingerprint_radius},
        "label_space": {"categories": dataset.label_space.categories,
                        "min_count": dataset.label_space.min_count},
        "n_samples": len(dataset.samples),
        "samples": [{"oil_name": s.oil_name, "tissue": s.tissue,
                     "n_nodes": int(s.features.shape[0])}
                    for s in dataset.samples],
        "exclusions": dataset.exclusions,
    }
    blob = json.dumps(header, sort_keys=True, separators=(",", ":"),
                      ensure_ascii=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(ARCHIVE_MAGIC)
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        for s in dataset.samples:
            fh.write(np.ascontiguousarray(s.features, dtype="<f8").tobytes())
            fh.write(np.ascontiguousarray(s.weights, dtype="<f8").tobytes())
            fh.write(np.ascontiguousarray(s.target, dtype="<f8").tobytes())


def read_archive(path) -> Dataset:
    with open(path, "rb") as fh:
        magic = fh.read(8)
        if magic != ARCHIVE_MAGIC:
            raise ValueError(f"not a dataset archive: bad magic {magic!r}")
        (hlen,) = struct.unpack("<I", fh.read(4))
        header = json.loads(fh.read(hlen).decode("utf-8"))
        width = 1 + header["n_bits"]
        n_labels = len(header["label_space"]["categories"])
        samples = []
        for meta in header["samples"]:
            n = meta["n_nodes"]
            feats = np.frombuffer(fh.read(8 * n * width),
                                  dtype="<f8").reshape(n, width).copy()
            weights = np.frombuffer(fh.read(8 * n * n),
                                    dtype="<f8").reshape(n, n).copy()
            target = np.frombuffer(fh.read(8 * n_labels), dtype="<f8").copy()
            samples.append(Sample(oil_name=meta["oil_name"],
                                  tissue=meta["tissue"],
                                  features=feats, weights=weights,
                                  target=target))
    space = LabelSpace(header["label_space"]["categories"],
                       header["label_space"]["min_count"])
    return Dataset(samples=samples, label_space=space,
                   n_bits=header["n_bits"],
                   fingerprint_kind=header["fingerprint"]["kind"],
                   fingerprint_radius=header["fingerprint"]["radius"],
                   exclusions=header["exclusions"])
