import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from essoil.chem import Fingerprint, WidthMismatch
from essoil.dataset import (
    Component,
    EmptyFile,
    KTooLarge,
    MissingColumn,
    NegativeArea,
    NoCategoriesSurvive,
    OilRecord,
    UnparsableArea,
    assemble_graph_sample,
    assemble_stacked_sample,
    build_dataset,
    build_node_feature,
    encode_labels,
    load_records,
    parse_analytical_table,
    parse_property_table,
    read_archive,
    split_kfold,
    write_archive,
)


def _fp(indices, n_bits=8):
    bits = np.zeros(n_bits, dtype=np.uint8)
    bits[list(indices)] = 1
    return Fingerprint(bits=bits, n_bits=n_bits, kind="maccs")


def _record(tissue="Leaf", names=("a", "b"), areas=(60.0, 30.0)):
    return OilRecord(oil_name="oil", plant_name="plant", tissue_name=tissue,
                     components=[Component(n, a) for n, a in zip(names, areas)])


# table parsing

def test_property_table_preserves_order(tmp_path):
    path = tmp_path / "props.csv"
    path.write_text("oil_name,plant_name,tissue_name,analytical_ref\n"
                    "A oil, PlantA , Leaf ,a.csv\n"
                    "B oil,PlantB,Flower,b.csv\n"
                    "C oil,PlantC,Root,c.csv\n")
    stubs = parse_property_table(path)
    assert [s.oil_name for s in stubs] == ["A oil", "B oil", "C oil"]
    assert stubs[0].tissue_name == "Leaf"  # whitespace trimmed
    assert stubs[0].plant_name == "PlantA"


def test_property_table_retains_duplicate_oil_names(tmp_path):
    path = tmp_path / "props.csv"
    path.write_text("oil_name,plant_name,tissue_name,analytical_ref\n"
                    "Same oil,PlantA,Leaf,a.csv\n"
                    "Same oil,PlantA,Leaf,b.csv\n")
    stubs = parse_property_table(path)
    assert len(stubs) == 2
    assert stubs[0].analytical_ref != stubs[1].analytical_ref


def test_property_table_missing_column(tmp_path):
    path = tmp_path / "props.csv"
    path.write_text("oil_name,plant_name,analytical_ref\nA,P,a.csv\n")
    with pytest.raises(MissingColumn, match="tissue_name"):
        parse_property_table(path)


def test_property_table_empty_file(tmp_path):
    path = tmp_path / "props.csv"
    path.write_text("")
    with pytest.raises(EmptyFile):
        parse_property_table(path)
    path.write_text("oil_name,plant_name,tissue_name,analytical_ref\n")
    with pytest.raises(EmptyFile):
        parse_property_table(path)


def test_analytical_table_trace_becomes_001(tmp_path):
    path = tmp_path / "oil.csv"
    path.write_text("compound_name,area_percent\n"
                    "limonene,Trace\n"
                    "linalool,35.2\n")
    pairs = parse_analytical_table(path)
    assert pairs == [("limonene", 0.01), ("linalool", 35.2)]


def test_analytical_table_negative_area(tmp_path):
    path = tmp_path / "oil.csv"
    path.write_text("compound_name,area_percent\nx,-1\n")
    with pytest.raises(NegativeArea):
        parse_analytical_table(path)


def test_analytical_table_errors_carry_file_and_line(tmp_path):
    path = tmp_path / "oil.csv"
    path.write_text("compound_name,area_percent\nok,5.0\nbad,-3\n")
    with pytest.raises(NegativeArea, match=r"oil\.csv:3"):
        parse_analytical_table(path)


def test_analytical_table_unparsable_area(tmp_path):
    path = tmp_path / "oil.csv"
    path.write_text("compound_name,area_percent\nx,lots\n")
    with pytest.raises(UnparsableArea):
        parse_analytical_table(path)


def test_load_records_joins_tables(fixture_dir):
    records = load_records(fixture_dir / "property_table.csv",
                           fixture_dir / "analytical")
    assert len(records) == 12
    peppermint = records[0]
    assert peppermint.oil_name == "Peppermint Oil"
    assert peppermint.components[0].name == "menthol"
    assert peppermint.components[-1].area_percent == 0.01  # Trace row


# label encoding

def _records_with_counts(counts: dict[str, int]):
    out = []
    for tissue, n in counts.items():
        for i in range(n):
            out.append(_record(tissue=tissue))
    return out


def test_encode_labels_threshold():
    recs = _records_with_counts({"Leaf": 40, "Flower": 30, "Bark": 3})
    enc = encode_labels(recs, min_count=5)
    assert enc.label_space.categories == ["Flower", "Leaf"]
    assert enc.n_excluded == 3
    assert enc.excluded_counts == {"Bark": 3}
    assert enc.targets.shape == (70, 2)
    assert (enc.targets.sum(axis=1) == 1).all()


def test_encode_labels_min_count_one_keeps_everything():
    recs = _records_with_counts({"Leaf": 2, "Bark": 1})
    enc = encode_labels(recs, min_count=1)
    assert enc.n_excluded == 0
    assert enc.label_space.categories == ["Bark", "Leaf"]


def test_encode_labels_nothing_survives():
    with pytest.raises(NoCategoriesSurvive):
        encode_labels(_records_with_counts({"Leaf": 2}), min_count=5)


@settings(max_examples=60, deadline=None)
@given(st.lists(st.sampled_from(["Leaf", "Flower", "Bark", "Root", "Seed"]),
                min_size=1, max_size=60),
       st.integers(min_value=1, max_value=8))
def test_encode_labels_brute_force_recount(tissues, min_count):
    recs = [_record(tissue=t) for t in tissues]
    expected_kept = sum(1 for t in tissues if tissues.count(t) >= min_count)
    try:
        enc = encode_labels(recs, min_count=min_count)
    except NoCategoriesSurvive:
        assert expected_kept == 0
        return
    assert len(enc.kept_indices) == expected_kept
    assert enc.n_excluded == len(tissues) - expected_kept
    for row, idx in enumerate(enc.kept_indices):
        col = enc.label_space.categories.index(tissues[idx])
        assert enc.targets[row, col] == 1.0
        assert enc.targets[row].sum() == 1.0


# node features and sample assembly

def test_build_node_feature_scaling():
    vec = build_node_feature(50.0, _fp({0}, 4))
    assert np.array_equal(vec, [0.5, 1, 0, 0, 0])


def test_build_node_feature_trace_value():
    vec = build_node_feature(0.01, _fp(set(), 4))
    assert vec[0] == pytest.approx(0.0001)


def test_build_node_feature_full_area_zero_fp():
    vec = build_node_feature(100.0, _fp(set(), 4))
    assert np.array_equal(vec, [1.0, 0, 0, 0, 0])


def test_build_node_feature_range_check():
    with pytest.raises(ValueError):
        build_node_feature(0.0, _fp(set(), 4))
    with pytest.raises(ValueError):
        build_node_feature(101.0, _fp(set(), 4))


def test_graph_sample_single_node():
    g = assemble_graph_sample(_record(names=("a",), areas=(80.0,)),
                              [_fp({1})], np.array([1.0]))
    assert g.n_nodes == 1
    assert g.edge_list() == [(0, 0, 1.0)]


def test_graph_sample_complete_with_loops():
    g = assemble_graph_sample(_record(names=("a", "b", "c"),
                                      areas=(50.0, 30.0, 10.0)),
                              [_fp({1}), _fp({2}), _fp({1, 2})],
                              np.array([1.0]))
    assert len(g.edge_list()) == 9
    assert np.array_equal(g.weights, g.weights.T)
    assert np.array_equal(np.diag(g.weights), np.ones(3))


def test_graph_sample_identical_fingerprints_all_ones():
    g = assemble_graph_sample(_record(names=("a", "b"), areas=(50.0, 30.0)),
                              [_fp({1, 3}), _fp({1, 3})], np.array([1.0]))
    assert np.array_equal(g.weights, np.ones((2, 2)))


def test_graph_sample_width_mismatch():
    with pytest.raises(WidthMismatch):
        assemble_graph_sample(_record(), [_fp({1}, 8), _fp({1}, 16)],
                              np.array([1.0]))


def test_stacked_sample_pads_with_zeros():
    s = assemble_stacked_sample(_record(names=("a", "b"), areas=(60.0, 30.0)),
                                [_fp({1}), _fp({2})], n_max=4,
                                target=np.array([1.0]))
    assert s.valid_rows == 2
    assert s.matrix.shape == (4, 9)
    assert np.array_equal(s.matrix[2:], np.zeros((2, 9)))


def test_stacked_sample_sorts_by_descending_area():
    s = assemble_stacked_sample(
        _record(names=("low", "high", "low2"), areas=(5.0, 90.0, 5.0)),
        [_fp({1}), _fp({2}), _fp({3})], n_max=4, target=np.array([1.0]))
    assert s.matrix[0, 0] == pytest.approx(0.9)
    # stable sort keeps the original order of the tied 5% rows
    assert s.matrix[1, 1 + 1] == 1.0
    assert s.matrix[2, 1 + 3] == 1.0


def test_stacked_sample_truncates_lowest_area():
    record = _record(names=tuple(f"c{i}" for i in range(70)),
                     areas=tuple(float(70 - i) for i in range(70)))
    fps = [_fp({i % 8}) for i in range(70)]
    s = assemble_stacked_sample(record, fps, n_max=64, target=np.array([1.0]))
    assert s.valid_rows == 64
    assert s.n_truncated == 6
    assert s.matrix[0, 0] == pytest.approx(0.70)


# k-fold splitting

def test_kfold_even_split():
    folds = split_kfold(10, 5, seed=0)
    assert [len(f) for f in folds] == [2, 2, 2, 2, 2]


def test_kfold_uneven_sizes():
    folds = split_kfold(7, 3, seed=0)
    assert sorted(len(f) for f in folds) == [2, 2, 3]


def test_kfold_deterministic():
    first = split_kfold(20, 4, seed=42)
    second = split_kfold(20, 4, seed=42)
    for a, b in zip(first, second):
        assert np.array_equal(a, b)


def test_kfold_k_too_large():
    with pytest.raises(KTooLarge):
        split_kfold(3, 4, seed=0)
    with pytest.raises(ValueError):
        split_kfold(3, 1, seed=0)


@settings(max_examples=60, deadline=None)
@given(st.integers(min_value=2, max_value=80), st.integers(min_value=2, max_value=10),
       st.integers(min_value=0, max_value=2 ** 31))
def test_kfold_coverage_and_disjointness(n, k, seed):
    if k > n:
        with pytest.raises(KTooLarge):
            split_kfold(n, k, seed)
        return
    folds = split_kfold(n, k, seed)
    sizes = {len(f) for f in folds}
    assert sizes <= {n // k, n // k + 1}
    together = np.concatenate(folds)
    assert len(together) == n
    assert set(together.tolist()) == set(range(n))


# full featurization

def test_build_dataset_drop_rules(fixture_dir):
    records = load_records(fixture_dir / "property_table.csv",
                           fixture_dir / "analytical")
    smiles_map = {
        line.split(",")[0]: line.split(",")[1].strip()
        for line in (fixture_dir / "smiles_map.csv").read_text().splitlines()[1:]
    }
    ds = build_dataset(records, kind="ecfp", radius=2, n_bits=128,
                       smiles_map=smiles_map, min_count=5)
    assert len(ds) == 12
    assert ds.label_space.categories == ["Flower", "Leaf"]
    dropped = ds.exclusions["dropped_components"]
    assert [d["compound"] for d in dropped] == ["viridiflorene"]
    widths = {s.features.shape[1] for s in ds.samples}
    assert widths == {1 + 128}
    for s in ds.samples:
        assert np.array_equal(s.weights, s.weights.T)
        assert np.array_equal(np.diag(s.weights), np.ones(s.weights.shape[0]))


def test_build_dataset_oil_excluded_when_all_components_drop():
    records = [
        _record(tissue="Leaf", names=("known", "unknown"), areas=(50.0, 30.0)),
        OilRecord("empty", "p", "Leaf",
                  [Component("unknown", 10.0)]),
    ] * 5
    ds = build_dataset(records, n_bits=64, smiles_map={"known": "CCO"},
                       min_count=5)
    assert len(ds) == 5
    assert len(ds.exclusions["dropped_oils"]) == 5


def test_build_dataset_without_any_resolvable_source():
    with pytest.raises(NoCategoriesSurvive):
        build_dataset([_record()] * 6, n_bits=64, smiles_map={}, imports={})


def test_archive_round_trip(tmp_path, fixture_dir):
    records = load_records(fixture_dir / "property_table.csv",
                           fixture_dir / "analytical")
    smiles_map = {
        line.split(",")[0]: line.split(",")[1].strip()
        for line in (fixture_dir / "smiles_map.csv").read_text().splitlines()[1:]
    }
    ds = build_dataset(records, n_bits=64, smiles_map=smiles_map, min_count=5)
    path = tmp_path / "dataset.bin"
    write_archive(ds, path)
    loaded = read_archive(path)
    assert len(loaded) == len(ds)
    assert loaded.label_space.categories == ds.label_space.categories
    assert loaded.n_bits == ds.n_bits
    for a, b in zip(loaded.samples, ds.samples):
        assert a.oil_name == b.oil_name
        assert np.array_equal(a.features, b.features)
        assert np.array_equal(a.weights, b.weights)
        assert np.array_equal(a.target, b.target)


def test_archive_rerun_is_byte_identical(tmp_path, fixture_dir):
    records = load_records(fixture_dir / "property_table.csv",
                           fixture_dir / "analytical")
    smiles_map = {
        line.split(",")[0]: line.split(",")[1].strip()
        for line in (fixture_dir / "smiles_map.csv").read_text().splitlines()[1:]
    }
    blobs = []
    for run in range(2):
        ds = build_dataset(records, n_bits=64, smiles_map=smiles_map,
                           min_count=5)
        path = tmp_path / f"run{run}.bin"
        write_archive(ds, path)
        blobs.append(path.read_bytes())
    assert blobs[0] == blobs[1]


def test_archive_rejects_bad_magic(tmp_path):
    path = tmp_path / "junk.bin"
    path.write_bytes(b"NOTADATA" + b"\x00" * 8)
    with pytest.raises(ValueError):
        read_archive(path)


def test_graph_and_stacked_views_share_width(fixture_dir):
    records = load_records(fixture_dir / "property_table.csv",
                           fixture_dir / "analytical")
    smiles_map = {
        line.split(",")[0]: line.split(",")[1].strip()
        for line in (fixture_dir / "smiles_map.csv").read_text().splitlines()[1:]
    }
    ds = build_dataset(records, n_bits=64, smiles_map=smiles_map, min_count=5)
    for i in range(len(ds)):
        g = ds.graph_sample(i)
        s = ds.stacked_sample(i, n_max=8)
        assert g.nodes.shape[1] == ds.feature_width
        assert s.matrix.shape == (8, ds.feature_width)
        assert s.valid_rows == g.n_nodes
