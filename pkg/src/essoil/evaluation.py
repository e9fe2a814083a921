"""Cross-validated training with per-epoch AUC history and report files.

AUC uses the Mann-Whitney counting form (wins + ties/2) / (P*N), which
equals the trapezoidal area under the threshold-sweep ROC curve. Labels
with no positives or no negatives in a fold are skipped, never
zero-filled, and the skip count is reported.
"""

from __future__ import annotations

import json
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .dataset import Dataset, split_kfold
from .models import ModelConfig, build_model


class DegenerateLabels(ValueError):
    pass


class AllLabelsDegenerate(ValueError):
    pass


@dataclass
class RocCurve:
    points: list[tuple[float, float]]  # (fpr, tpr), threshold-ordered

    def trapezoid_area(self) -> float:
        area = 0.0
        for (x0, y0), (x1, y1) in zip(self.points, self.points[1:]):
            area += (x1 - x0) * (y0 + y1) / 2.0
        return area


def _check_binary(scores, labels):
    s = np.asarray(scores, dtype=np.float64).ravel()
    y = np.asarray(labels).ravel().astype(np.int64)
    if s.shape != y.shape or s.size == 0:
        raise ValueError("scores and labels must be equal-length, non-empty")
    pos = int(y.sum())
    neg = y.size - pos
    if pos == 0 or neg == 0:
        raise DegenerateLabels(f"need both classes, got {pos} pos / {neg} neg")
    return s, y, pos, neg


def roc_points(scores, labels) -> RocCurve:
    """Threshold sweep over distinct scores, ties grouped into diagonal
    segments; starts at (0,0) and ends at (1,1)."""
    s, y, pos, neg = _check_binary(scores, labels)
    order = np.argsort(-s, kind="mergesort")
    s, y = s[order], y[order]
    pts = [(0.0, 0.0)]
    tp = fp = 0
    i = 0
    while i < s.size:
        j = i
        while j < s.size and s[j] == s[i]:
            j += 1
        tp += int(y[i:j].sum())
        fp += (j - i) - int(y[i:j].sum())
        pts.append((fp / neg, tp / pos))
        i = j
    return RocCurve(pts)


def auc(scores, labels) -> float:
    """(wins + ties/2) / (P*N) over positive-negative pairs; exact
    integer counting before the single final division."""
    s, y, pos, neg = _check_binary(scores, labels)
    order = np.argsort(s, kind="mergesort")
    s, y = s[order], y[order]
    wins = ties = 0
    neg_below = 0
    i = 0
    while i < s.size:
        j = i
        while j < s.size and s[j] == s[i]:
            j += 1
        group_pos = int(y[i:j].sum())
        group_neg = (j - i) - group_pos
        wins += group_pos * neg_below
        ties += group_pos * group_neg
        neg_below += group_neg
        i = j
    return (wins + 0.5 * ties) / (pos * neg)


def macro_auc(score_matrix, label_matrix) -> tuple[float, list[int]]:
    """Unweighted mean of per-label AUCs; degenerate columns skipped and
    returned by index."""
    scores = np.asarray(score_matrix, dtype=np.float64)
    labels = np.asarray(label_matrix)
    if scores.shape != labels.shape or scores.ndim != 2:
        raise ValueError("score and label matrices must match (n, C)")
    values, skipped = [], []
    for col in range(scores.shape[1]):
        try:
            values.append(auc(scores[:, col], labels[:, col]))
        except DegenerateLabels:
            skipped.append(col)
    if not values:
        raise AllLabelsDegenerate("every label column is single-class")
    return float(np.mean(values)), skipped


# ---------------------------------------------------------------------------
# K-fold training
# ---------------------------------------------------------------------------

@dataclass
class EpochHistory:
    train_loss: list[float] = field(default_factory=list)
    test_loss: list[float] = field(default_factory=list)
    per_label_auc: list[list[float | None]] = field(default_factory=list)
    macro_auc: list[float | None] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.train_loss)


@dataclass
class FoldResult:
    fold: int
    train_indices: list[int]
    test_indices: list[int]
    history: EpochHistory
    report_scores: np.ndarray   # (n_test, C) at the report epoch
    report_targets: np.ndarray
    params: dict[str, np.ndarray]  # final model parameters


@dataclass
class CvResult:
    config: ModelConfig
    k: int
    seed: int
    epochs: int
    report_epoch: int  # clamped to <= epochs
    n_max: int
    lr: float
    label_names: list[str]
    folds: list[FoldResult]

    @property
    def fold_macro_aucs(self) -> list[float | None]:
        return [f.history.macro_auc[self.report_epoch - 1] for f in self.folds]

    def mean_macro_auc(self) -> float | None:
        vals = [v for v in self.fold_macro_aucs if v is not None]
        return float(np.mean(vals)) if vals else None

    def epoch_mean_macro(self) -> list[float | None]:
        """Fold-mean macro AUC per epoch, for the history chart."""
        out = []
        for e in range(self.epochs):
            vals = [f.history.macro_auc[e] for f in self.folds
                    if f.history.macro_auc[e] is not None]
            out.append(float(np.mean(vals)) if vals else None)
        return out


def _sample_views(dataset: Dataset, config: ModelConfig, n_max: int):
    if config.architecture == "cnn":
        return [dataset.stacked_sample(i, n_max) for i in range(len(dataset))]
    return [dataset.graph_sample(i) for i in range(len(dataset))]


def _score(model, logits):
    from .models import score

    return score(logits.data, model.config.loss_design, model.config.n_labels)


def train_fold(dataset: Dataset, config: ModelConfig, train_idx, test_idx,
               epochs: int, lr: float, seed: int, fold: int,
               report_epoch: int, n_max: int,
               stop_fn=None) -> FoldResult:
    """Full-batch training on train_idx with per-epoch evaluation on
    test_idx. ``stop_fn(epoch, history)`` may end training early (the
    history then stops at that epoch)."""
    train_idx = [int(i) for i in train_idx]
    test_idx = [int(i) for i in test_idx]
    overlap = set(train_idx) & set(test_idx)
    if overlap:
        raise ValueError(f"train/test folds overlap: {sorted(overlap)}")
    views = _sample_views(dataset, config, n_max)
    targets = [s.target for s in dataset.samples]
    model = build_model(config, dataset.feature_width,
                        ad.mix_seed(seed, "fold", fold))
    state = ad.AdamState(lr=lr)
    history = EpochHistory()
    report_scores = report_targets = None
    report_at = min(report_epoch, epochs)
    n_train = len(train_idx)
    for epoch in range(1, epochs + 1):
        ad.zero_grad(model.params)
        epoch_losses = []
        for i in train_idx:
            loss, _ = model.loss(views[i], targets[i])
            epoch_losses.append(loss.item())
            ad.backward(ad.mul(loss, 1.0 / n_train))
        ad.adam_step(model.params, state)
        history.train_loss.append(float(np.mean(epoch_losses)))

        test_losses, test_scores = [], []
        for i in test_idx:
            loss, logits = model.loss(views[i], targets[i])
            test_losses.append(loss.item())
            test_scores.append(_score(model, logits))
        score_matrix = np.vstack(test_scores)
        target_matrix = np.vstack([targets[i] for i in test_idx])
        history.test_loss.append(float(np.mean(test_losses)))
        per_label: list[float | None] = []
        for col in range(target_matrix.shape[1]):
            try:
                per_label.append(auc(score_matrix[:, col], target_matrix[:, col]))
            except DegenerateLabels:
                per_label.append(None)
        valid = [v for v in per_label if v is not None]
        history.per_label_auc.append(per_label)
        history.macro_auc.append(float(np.mean(valid)) if valid else None)

        if epoch == report_at:
            report_scores = score_matrix
            report_targets = target_matrix
        if stop_fn is not None and stop_fn(epoch, history):
            if report_scores is None:
                report_scores, report_targets = score_matrix, target_matrix
            break
    return FoldResult(fold=fold, train_indices=train_idx, test_indices=test_idx,
                      history=history, report_scores=report_scores,
                      report_targets=report_targets, params=model.state_dict())


def _fold_worker(args):
    return train_fold(*args)


def run_cv(dataset: Dataset, config: ModelConfig, k: int = 5, seed: int = 42,
           epochs: int = 50, lr: float = 1e-3, report_epoch: int = 30,
           n_max: int = 64, jobs: int = 1) -> CvResult:
    """Train on k-1 folds, evaluate the held-out fold, once per fold.

    The summary reports the fold-mean macro AUC at the report epoch
    (clamped to the last epoch when epochs < report_epoch).
    """
    if epochs < 1:
        raise ValueError("epochs must be >= 1")
    folds = split_kfold(len(dataset), k, seed)
    all_indices = np.arange(len(dataset))
    jobs_args = []
    for f, test in enumerate(folds):
        train = np.setdiff1d(all_indices, test)
        if np.intersect1d(train, test).size:
            raise ValueError("internal error: fold overlap")
        jobs_args.append((dataset, config, train.tolist(), test.tolist(),
                          epochs, lr, seed, f, report_epoch, n_max))
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_fold_worker, jobs_args))
    else:
        results = [train_fold(*a) for a in jobs_args]
    return CvResult(config=config, k=k, seed=seed, epochs=epochs,
                    report_epoch=min(report_epoch, epochs), n_max=n_max,
                    lr=lr, label_names=list(dataset.label_space.categories),
                    folds=results)


# ---------------------------------------------------------------------------
# serialization of results (used by the CLI between train and report)
# ---------------------------------------------------------------------------

def cv_result_to_dict(result: CvResult) -> dict:
    return {
        "config": result.config.to_dict(),
        "k": result.k,
        "seed": result.seed,
        "epochs": result.epochs,
        "report_epoch": result.report_epoch,
        "n_max": result.n_max,
        "lr": result.lr,
        "label_names": result.label_names,
        "folds": [{
            "fold": f.fold,
            "train_indices": f.train_indices,
            "test_indices": f.test_indices,
            "history": {
                "train_loss": f.history.train_loss,
                "test_loss": f.history.test_loss,
                "per_label_auc": f.history.per_label_auc,
                "macro_auc": f.history.macro_auc,
            },
            "report_scores": f.report_scores.tolist(),
            "report_targets": f.report_targets.tolist(),
        } for f in result.folds],
        "summary": {
            "fold_macro_auc": result.fold_macro_aucs,
            "mean_macro_auc": result.mean_macro_auc(),
        },
    }


def cv_result_from_dict(d: dict) -> CvResult:
    folds = [FoldResult(
        fold=fd["fold"],
        train_indices=fd["train_indices"],
        test_indices=fd["test_indices"],
        history=EpochHistory(
            train_loss=fd["history"]["train_loss"],
            test_loss=fd["history"]["test_loss"],
            per_label_auc=fd["history"]["per_label_auc"],
            macro_auc=fd["history"]["macro_auc"],
        ),
        report_scores=np.asarray(fd["report_scores"], dtype=np.float64),
        report_targets=np.asarray(fd["report_targets"], dtype=np.float64),
        params={},
    ) for fd in d["folds"]]
    return CvResult(config=ModelConfig.from_dict(d["config"]), k=d["k"],
                    seed=d["seed"], epochs=d["epochs"],
                    report_epoch=d["report_epoch"], n_max=d["n_max"],
                    lr=d["lr"], label_names=d["label_names"], folds=folds)


# ---------------------------------------------------------------------------
# report emission: CSV + JSON + SVG
# ---------------------------------------------------------------------------

def _safe_name(label: str) -> str:
    return "".join(c if c.isalnum() else "_" for c in label.lower())


def _svg_chart(series: dict[str, list[float | None]], epochs: int) -> str:
    """Minimal line chart of macro AUC (y in [0, 1]) against epoch."""
    width, height = 640, 400
    left, right, top, bottom = 60, 20, 20, 40
    plot_w, plot_h = width - left - right, height - top - bottom
    palette = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"]

    def x_at(epoch):
        frac = 0.0 if epochs <= 1 else (epoch - 1) / (epochs - 1)
        return left + frac * plot_w

    def y_at(value):
        return top + (1.0 - value) * plot_h

    lines = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}">',
        f'<rect x="0" y="0" width="{width}" height="{height}" fill="white"/>',
        f'<line x1="{left}" y1="{top}" x2="{left}" y2="{top + plot_h}" stroke="black"/>',
        f'<line x1="{left}" y1="{top + plot_h}" x2="{left + plot_w}" '
        f'y2="{top + plot_h}" stroke="black"/>',
    ]
    for tick in (0.0, 0.25, 0.5, 0.75, 1.0):
        y = y_at(tick)
        lines.append(f'<line x1="{left - 4}" y1="{y:.2f}" x2="{left}" '
                     f'y2="{y:.2f}" stroke="black"/>')
        lines.append(f'<text x="{left - 8}" y="{y + 4:.2f}" font-size="12" '
                     f'text-anchor="end">{tick}</text>')
    lines.append(f'<text x="{left + plot_w / 2}" y="{height - 8}" font-size="12" '
                 f'text-anchor="middle">epoch</text>')
    lines.append(f'<text x="14" y="{top + plot_h / 2}" font-size="12" '
                 f'text-anchor="middle" transform="rotate(-90 14 '
                 f'{top + plot_h / 2})">macro AUC</text>')
    for idx, (tag, values) in enumerate(sorted(series.items())):
        color = palette[idx % len(palette)]
        pts = " ".join(f"{x_at(e + 1):.2f},{y_at(v):.2f}"
                       for e, v in enumerate(values) if v is not None)
        if pts:
            lines.append(f'<polyline fill="none" stroke="{color}" '
                         f'stroke-width="1.5" points="{pts}"/>')
        lines.append(f'<text x="{left + plot_w - 4}" y="{top + 16 + 16 * idx}" '
                     f'font-size="12" text-anchor="end" fill="{color}">{tag}</text>')
    lines.append("</svg>")
    return "\n".join(lines) + "\n"


def emit_reports(results: dict[str, CvResult], out_dir,
                 label_filter: str | None = None) -> list[str]:
    """Write auc_history.csv and roc_<label>.csv per result set, one
    combined summary.json, and an SVG macro-AUC/epoch chart."""
    from pathlib import Path

    if not results:
        raise ValueError("no results to report")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written: list[str] = []
    summary: dict = {"configs": {}}
    series: dict[str, list[float | None]] = {}

    for tag in sorted(results):
        res = results[tag]
        tag_dir = out / tag
        tag_dir.mkdir(parents=True, exist_ok=True)
        labels = res.label_names

        hist_path = tag_dir / "auc_history.csv"
        with open(hist_path, "w", encoding="utf-8", newline="") as fh:
            fh.write("epoch,fold,label,auc\n")
            for f in res.folds:
                for e in range(len(f.history)):
                    for c, name in enumerate(labels):
                        value = f.history.per_label_auc[e][c]
                        if value is not None:
                            fh.write(f"{e + 1},{f.fold},{name},{value!r}\n")
        written.append(str(hist_path))

        pooled_scores = np.vstack([f.report_scores for f in res.folds])
        pooled_targets = np.vstack([f.report_targets for f in res.folds])
        skipped = []
        for c, name in enumerate(labels):
            if label_filter is not None and name != label_filter:
                continue
            try:
                curve = roc_points(pooled_scores[:, c], pooled_targets[:, c])
            except DegenerateLabels:
                skipped.append(name)
                continue
            roc_path = tag_dir / f"roc_{_safe_name(name)}.csv"
            with open(roc_path, "w", encoding="utf-8", newline="") as fh:
                fh.write("fpr,tpr\n")
                for fpr, tpr in curve.points:
                    fh.write(f"{fpr!r},{tpr!r}\n")
            written.append(str(roc_path))

        summary["configs"][tag] = {
            "architecture": res.config.architecture,
            "loss_design": res.config.loss_design,
            "report_epoch": res.report_epoch,
            "fold_macro_auc": res.fold_macro_aucs,
            "mean_macro_auc": res.mean_macro_auc(),
            "skipped_roc_labels": skipped,
        }
        series[tag] = res.epoch_mean_macro()

    summary_path = out / "summary.json"
    with open(summary_path, "w", encoding="utf-8") as fh:
        json.dump(summary, fh, sort_keys=True, indent=2)
        fh.write("\n")
    written.append(str(summary_path))

    epochs = max(res.epochs for res in results.values())
    svg_path = out / "auc_history.svg"
    with open(svg_path, "w", encoding="utf-8") as fh:
        fh.write(_svg_chart(series, epochs))
    written.append(str(svg_path))
    return written
