"""Command-line entry point: featurize -> train -> report.

Settings come from (lowest to highest precedence) built-in defaults, a
config file, the ESSOIL_OUT_DIR environment variable (output dir only),
then command-line flags.

Config file grammar, on purpose tiny: ``key = value`` lines grouped
under ``[section]`` headers, ``#`` comments, blank lines ignored.
Values are quoted or bare strings, integers, floats, or true/false.
Keys flatten to ``section.key``; see the repo README for every key.

Exit codes: 0 success, 1 runtime failure, 2 usage error.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import dataclass, fields
from pathlib import Path

from . import __version__
from .chem import read_fingerprint_csv
from .dataset import (
    build_dataset,
    load_records,
    read_archive,
    read_smiles_map,
    write_archive,
)
from .evaluation import (
    AllLabelsDegenerate,
    cv_result_from_dict,
    cv_result_to_dict,
    emit_reports,
    run_cv,
)
from .models import ARCHITECTURES, LOSS_DESIGNS, ModelConfig
from .autodiff import save_checkpoint

ARCHIVE_NAME = "dataset.bin"
LOSS_TAGS = {"bce_linear": "bce", "nll_logsoftmax": "nll"}


class ConfigError(ValueError):
    pass


def parse_config_file(path) -> dict[str, object]:
    """Flatten a ``[section]`` / ``key = value`` file to section.key."""
    out: dict[str, object] = {}
    section = ""
    for lineno, raw in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if line.startswith("[") and line.endswith("]"):
            section = line[1:-1].strip()
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected key = value")
        key, _, value = line.partition("=")
        key = key.strip()
        value = value.split("#", 1)[0].strip()
        full = f"{section}.{key}" if section else key
        out[full] = _parse_value(value)
    return out


def _parse_value(text: str):
    if len(text) >= 2 and text[0] == text[-1] and text[0] in "'\"":
        return text[1:-1]
    low = text.lower()
    if low == "true":
        return True
    if low == "false":
        return False
    try:
        return int(text)
    except ValueError:
        pass
    try:
        return float(text)
    except ValueError:
        pass
    return text


@dataclass
class RunConfig:
    property_table: str | None = None
    analytical_dir: str | None = None
    smiles_map: str | None = None
    fingerprint_imports: str | None = None
    out_dir: str = "essoil_out"
    fp_kind: str = "ecfp"
    fp_radius: int = 2
    fp_bits: int = 2048
    min_count: int = 5
    architecture: str = "gcn"
    loss_design: str = "bce_linear"
    hidden_dim: int = 64
    layers: int = 2
    gat_heads: int = 1
    leaky_slope: float = 0.2
    k: int = 5
    seed: int = 42
    epochs: int = 50
    report_epoch: int = 30
    n_max: int = 64
    learning_rate: float = 1e-3
    jobs: int = 1
    label: str | None = None


# config-file key -> RunConfig field
CONFIG_KEYS = {
    "paths.property_table": "property_table",
    "paths.analytical_dir": "analytical_dir",
    "paths.smiles_map": "smiles_map",
    "paths.fingerprint_imports": "fingerprint_imports",
    "paths.out_dir": "out_dir",
    "fingerprint.kind": "fp_kind",
    "fingerprint.radius": "fp_radius",
    "fingerprint.n_bits": "fp_bits",
    "dataset.min_count": "min_count",
    "model.architecture": "architecture",
    "model.loss_design": "loss_design",
    "model.hidden_dim": "hidden_dim",
    "model.layers": "layers",
    "model.gat_heads": "gat_heads",
    "model.leaky_slope": "leaky_slope",
    "eval.k": "k",
    "eval.seed": "seed",
    "eval.epochs": "epochs",
    "eval.report_epoch": "report_epoch",
    "eval.n_max": "n_max",
    "eval.learning_rate": "learning_rate",
    "eval.jobs": "jobs",
}


def resolve_config(args: argparse.Namespace) -> RunConfig:
    cfg = RunConfig()
    if getattr(args, "config", None):
        file_values = parse_config_file(args.config)
        unknown = set(file_values) - set(CONFIG_KEYS)
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        for key, value in file_values.items():
            setattr(cfg, CONFIG_KEYS[key], value)
    env_out = os.environ.get("ESSOIL_OUT_DIR")
    if env_out:
        cfg.out_dir = env_out
    names = {f.name for f in fields(RunConfig)}
    for name in names:
        value = getattr(args, name, None)
        if value is not None:
            setattr(cfg, name, value)
    return cfg


def _require_paths(cfg: RunConfig, names: list[str]) -> None:
    for name in names:
        value = getattr(cfg, name)
        if value is None:
            raise ConfigError(f"{name} is required (flag or config file)")
        if not Path(value).exists():
            raise ConfigError(f"{name} path does not exist: {value}")


def cmd_featurize(cfg: RunConfig) -> int:
    _require_paths(cfg, ["property_table", "analytical_dir"])
    smiles_map = {}
    if cfg.smiles_map:
        _require_paths(cfg, ["smiles_map"])
        smiles_map = read_smiles_map(cfg.smiles_map)
    imports = {}
    if cfg.fingerprint_imports:
        _require_paths(cfg, ["fingerprint_imports"])
        imports = read_fingerprint_csv(cfg.fingerprint_imports)
    records = load_records(cfg.property_table, cfg.analytical_dir)
    dataset = build_dataset(records, kind=cfg.fp_kind, radius=cfg.fp_radius,
                            n_bits=cfg.fp_bits, smiles_map=smiles_map,
                            imports=imports, min_count=cfg.min_count)
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    archive = out / ARCHIVE_NAME
    write_archive(dataset, archive)
    ex = dataset.exclusions
    print(f"wrote {archive}: {len(dataset)} samples, "
          f"{dataset.label_space.size} labels "
          f"({', '.join(dataset.label_space.categories)})")
    print(f"exclusions: {len(ex['dropped_components'])} components, "
          f"{len(ex['dropped_oils'])} empty oils, "
          f"{ex['n_label_excluded']} records from rare tissues")
    return 0


def _combos(cfg: RunConfig) -> list[tuple[str, str]]:
    archs = list(ARCHITECTURES) if cfg.architecture == "all" else [cfg.architecture]
    losses = list(LOSS_DESIGNS) if cfg.loss_design == "all" else [cfg.loss_design]
    return [(a, l) for a in archs for l in losses]


def tag_for(architecture: str, loss_design: str) -> str:
    return f"{architecture}_{LOSS_TAGS[loss_design]}"


def cmd_train(cfg: RunConfig) -> int:
    archive = Path(cfg.out_dir) / ARCHIVE_NAME
    if not archive.exists():
        raise ConfigError(f"dataset archive not found: {archive} "
                          f"(run `essoil featurize` first)")
    dataset = read_archive(archive)
    results_dir = Path(cfg.out_dir) / "results"
    for arch, loss_design in _combos(cfg):
        tag = tag_for(arch, loss_design)
        model_cfg = ModelConfig(architecture=arch, loss_design=loss_design,
                                n_labels=dataset.label_space.size,
                                hidden_dim=cfg.hidden_dim, layers=cfg.layers,
                                gat_heads=cfg.gat_heads,
                                leaky_slope=cfg.leaky_slope)
        result = run_cv(dataset, model_cfg, k=cfg.k, seed=cfg.seed,
                        epochs=cfg.epochs, lr=cfg.learning_rate,
                        report_epoch=cfg.report_epoch, n_max=cfg.n_max,
                        jobs=cfg.jobs)
        tag_dir = results_dir / tag
        tag_dir.mkdir(parents=True, exist_ok=True)
        with open(tag_dir / "history.json", "w", encoding="utf-8") as fh:
            json.dump(cv_result_to_dict(result), fh, sort_keys=True, indent=2)
            fh.write("\n")
        hyper = {"model": model_cfg.to_dict(),
                 "train": {"k": cfg.k, "seed": cfg.seed, "epochs": cfg.epochs,
                           "report_epoch": result.report_epoch,
                           "n_max": cfg.n_max,
                           "learning_rate": cfg.learning_rate}}
        for fold in result.folds:
            save_checkpoint(tag_dir / f"fold{fold.fold}.ckpt", fold.params, hyper)
        mean = result.mean_macro_auc()
        if mean is None:
            raise AllLabelsDegenerate(
                f"{tag}: every label was single-class in every test fold "
                f"at epoch {result.report_epoch}; no AUC can be reported")
        print(f"{tag}: mean macro AUC @ epoch {result.report_epoch} = {mean:.4f}")
    return 0


def cmd_report(cfg: RunConfig) -> int:
    results_dir = Path(cfg.out_dir) / "results"
    if not results_dir.is_dir():
        raise ConfigError(f"results directory not found: {results_dir} "
                          f"(run `essoil train` first)")
    results = {}
    for history in sorted(results_dir.glob("*/history.json")):
        with open(history, encoding="utf-8") as fh:
            results[history.parent.name] = cv_result_from_dict(json.load(fh))
    if not results:
        raise ConfigError(f"no history.json files under {results_dir}")
    written = emit_reports(results, Path(cfg.out_dir) / "reports",
                           label_filter=cfg.label)
    print(f"wrote {len(written)} report files under "
          f"{Path(cfg.out_dir) / 'reports'}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="essoil",
        description="Predict essential-oil properties from chemical composition.")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="config file (key = value sections)")
        p.add_argument("--out-dir", dest="out_dir",
                       help="output directory (default essoil_out; "
                            "env ESSOIL_OUT_DIR overrides config)")

    p_feat = sub.add_parser("featurize", help="ingest tables, write the "
                                              "dataset archive")
    common(p_feat)
    p_feat.add_argument("--property-table", dest="property_table",
                        help="property table CSV (required)")
    p_feat.add_argument("--analytical-dir", dest="analytical_dir",
                        help="directory of analytical table CSVs (required)")
    p_feat.add_argument("--smiles-map", dest="smiles_map",
                        help="compound to SMILES map CSV")
    p_feat.add_argument("--fingerprint-imports", dest="fingerprint_imports",
                        help="precomputed fingerprint CSV")
    p_feat.add_argument("--fp-kind", dest="fp_kind",
                        choices=["ecfp", "maccs", "avalon", "rdkit"],
                        help="fingerprint family (default ecfp)")
    p_feat.add_argument("--fp-radius", dest="fp_radius", type=int,
                        help="ECFP radius (default 2)")
    p_feat.add_argument("--fp-bits", dest="fp_bits", type=int,
                        help="fingerprint width (default 2048)")
    p_feat.add_argument("--min-count", dest="min_count", type=int,
                        help="drop tissues with fewer records (default 5)")

    p_train = sub.add_parser("train", help="K-fold training over the "
                                           "requested architecture/loss grid")
    common(p_train)
    p_train.add_argument("--arch", dest="architecture",
                         choices=list(ARCHITECTURES) + ["all"],
                         help="architecture (default gcn)")
    p_train.add_argument("--loss", dest="loss_design",
                         choices=list(LOSS_DESIGNS) + ["all"],
                         help="loss design (default bce_linear)")
    p_train.add_argument("--hidden-dim", dest="hidden_dim", type=int,
                         help="hidden width (default 64)")
    p_train.add_argument("--layers", dest="layers", type=int,
                         help="layer count (default 2)")
    p_train.add_argument("--gat-heads", dest="gat_heads", type=int,
                         help="attention heads (default 1)")
    p_train.add_argument("--leaky-slope", dest="leaky_slope", type=float,
                         help="attention leaky-relu slope (default 0.2)")
    p_train.add_argument("--k", dest="k", type=int,
                         help="cross-validation folds (default 5)")
    p_train.add_argument("--seed", dest="seed", type=int,
                         help="split and init seed (default 42)")
    p_train.add_argument("--epochs", dest="epochs", type=int,
                         help="training epochs per fold (default 50)")
    p_train.add_argument("--report-epoch", dest="report_epoch", type=int,
                         help="summary/ROC epoch (default 30)")
    p_train.add_argument("--n-max", dest="n_max", type=int,
                         help="stacked-input row budget (default 64)")
    p_train.add_argument("--learning-rate", dest="learning_rate", type=float,
                         help="Adam learning rate (default 0.001)")
    p_train.add_argument("--jobs", dest="jobs", type=int,
                         help="fold-level parallelism (default 1)")

    p_rep = sub.add_parser("report", help="emit AUC history, ROC curves, "
                                          "and the summary table")
    common(p_rep)
    p_rep.add_argument("--label", dest="label",
                       help="restrict ROC output to one label (default all)")
    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(message)s")
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = resolve_config(args)
        if args.command == "featurize":
            return cmd_featurize(cfg)
        if args.command == "train":
            return cmd_train(cfg)
        if args.command == "report":
            return cmd_report(cfg)
        parser.error(f"unknown command {args.command!r}")
    except (ConfigError, OSError, ValueError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
