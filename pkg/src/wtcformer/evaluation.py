"""Confusion matrix, detection metrics, error analyses, cross-validation and ablation."""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from .dataset import ANOMALY_TYPES
from .errors import ContractError, DataError
from .model import build_model, predict, seeded_streams, train
from .windowing import SplitSpec, split

log = logging.getLogger(__name__)

METRIC_NAMES = ("accuracy", "precision", "recall", "f1")


@dataclass(frozen=True)
class ConfusionMatrix:
    tp: int
    fp: int
    fn: int
    tn: int

    def __post_init__(self):
        if min(self.tp, self.fp, self.fn, self.tn) < 0:
            raise ContractError(f"negative confusion count in {self}")

    @property
    def total(self):
        return self.tp + self.fp + self.fn + self.tn

    def to_dict(self):
        return asdict(self)


def confusion(pred, truth):
    """Counts with the anomalous class as positive."""
    pred = np.asarray(pred, dtype=bool).reshape(-1)
    truth = np.asarray(truth, dtype=bool).reshape(-1)
    if pred.shape != truth.shape:
        raise ContractError(f"confusion: {pred.size} predictions vs {truth.size} labels")
    tp = int(np.sum(pred & truth))
    fp = int(np.sum(pred & ~truth))
    fn = int(np.sum(~pred & truth))
    return ConfusionMatrix(tp, fp, fn, int(pred.size) - tp - fp - fn)


@dataclass(frozen=True)
class Metrics:
    accuracy: float
    precision: float
    recall: float
    f1: float
    # names of metrics whose denominator was zero and were reported as 0
    degenerate: tuple = ()

    def to_dict(self):
        d = asdict(self)
        d["degenerate"] = list(self.degenerate)
        return d


def metrics(cm):
    flagged = []

    def ratio(name, num, den):
        if den == 0:
            flagged.append(name)
            return 0.0
        return num / den

    accuracy = ratio("accuracy", cm.tp + cm.tn, cm.total)
    precision = ratio("precision", cm.tp, cm.tp + cm.fp)
    recall = ratio("recall", cm.tp, cm.tp + cm.fn)
    f1 = ratio("f1", 2.0 * precision * recall, precision + recall)
    return Metrics(accuracy, precision, recall, f1, tuple(flagged))


# error analyses -----------------------------------------------------------

def misclassified(samples, pred):
    return [s for s, p in zip(samples, pred) if bool(p) != bool(s.label)]


@dataclass
class PositionAnalysis:
    histogram: list
    groups: list  # [{"range": [lo, hi], "count": c, "percent": p}, ...]
    total: int

    def to_dict(self):
        return asdict(self)


def position_analysis(windows, w=60, group_width=10):
    """Where the anomalies sit inside misclassified windows.

    Every anomaly position of every given window increments its offset bin;
    bins are then summarised as ``group_width``-wide groups with percentage
    shares (all 0 when there is nothing to count).
    """
    hist = np.zeros(w, dtype=np.int64)
    for s in windows:
        for p in s.anomaly_positions:
            if not 0 <= p < w:
                raise ContractError(f"anomaly position {p} outside window of length {w}")
            hist[p] += 1
    total = int(hist.sum())
    groups = []
    for lo in range(0, w, group_width):
        count = int(hist[lo : lo + group_width].sum())
        groups.append({
            "range": [lo, min(lo + group_width, w) - 1],
            "count": count,
            "percent": 100.0 * count / total if total else 0.0,
        })
    return PositionAnalysis([int(c) for c in hist], groups, total)


def type_analysis(windows, corpus=None):
    """Missed anomalous windows counted once per distinct anomaly type they hold.

    Only typed (synthetic) data supports this; otherwise the report says
    ``available: False``.  ``corpus`` may be the source files or windows and is
    only consulted to decide availability.
    """
    typed = None
    if corpus is not None:
        typed = any(
            getattr(c, "typed", False) or getattr(c, "anomaly_types", None) is not None
            for c in corpus
        )
    missed = [s for s in windows if s.label]
    if typed is None:
        typed = any(s.anomaly_types is not None for s in missed)
    if not typed:
        return {"available": False, "counts": {}, "missed_windows": len(missed), "accounted": 0}
    counts = {t: 0 for t in ANOMALY_TYPES}
    accounted = 0
    for s in missed:
        kinds = {t for t in (s.anomaly_types or ()) if t is not None}
        for t in kinds:
            counts[t] += 1
        accounted += bool(kinds)
    return {"available": True, "counts": counts, "missed_windows": len(missed),
            "accounted": accounted}


@dataclass
class EvalReport:
    confusion: ConfusionMatrix
    metrics: Metrics
    position: PositionAnalysis
    types: dict
    threshold: float = 0.5
    fold_metrics: list | None = None

    def to_dict(self):
        d = {
            "confusion": self.confusion.to_dict(),
            "metrics": self.metrics.to_dict(),
            "threshold": self.threshold,
            "position_analysis": self.position.to_dict(),
            "type_analysis": self.types,
        }
        if self.fold_metrics is not None:
            d["fold_metrics"] = self.fold_metrics
        return d


def evaluate(model, samples, threshold=0.5):
    if not samples:
        raise DataError("nothing to evaluate: no windows")
    labels, _ = predict(model, samples, threshold)
    truth = np.array([s.label for s in samples])
    cm = confusion(labels, truth)
    wrong = misclassified(samples, labels)
    w = len(samples[0].values)
    return EvalReport(cm, metrics(cm), position_analysis(wrong, w), type_analysis(wrong),
                      threshold)


# protocols ----------------------------------------------------------------

def fit_and_score(train_samples, test_samples, model_cfg, train_cfg, progress=None):
    """Build from ``train_cfg.seed``, train, and evaluate on the held-out windows."""
    model = build_model(model_cfg, seeded_streams(train_cfg.seed)["init"])
    model, history = train(model, train_samples, test_samples, train_cfg, progress)
    return model, history, evaluate(model, test_samples, train_cfg.threshold)


def fold_seed(seed, fold):
    return int(np.random.SeedSequence(int(seed)).spawn(fold + 1)[fold].generate_state(1)[0])


def mean_metrics(rows):
    return {name: float(np.mean([r[name] for r in rows])) if rows else 0.0
            for name in METRIC_NAMES}


def cross_validate(samples, model_cfg, train_cfg, k=10, seed=0):
    """k-fold protocol: train k models, score each on its held-out fold, average."""
    folds = split(samples, SplitSpec(mode="kfold", k=k, seed=seed))
    rows = []
    for i, test in enumerate(folds):
        train_part = [s for j, f in enumerate(folds) if j != i for s in f]
        row = {"fold": i, "n_train": len(train_part), "n_test": len(test), "excluded": False}
        if len({s.label for s in train_part}) < 2:
            log.warning("fold %d: training part has a single class; excluded", i)
            row.update(excluded=True, reason="single-class training set")
            rows.append(row)
            continue
        tc = replace(train_cfg, seed=fold_seed(train_cfg.seed, i))
        _, _, report = fit_and_score(train_part, test, model_cfg, tc)
        row.update(report.metrics.to_dict())
        row["confusion"] = report.confusion.to_dict()
        rows.append(row)
    used = [r for r in rows if not r["excluded"]]
    return {"k": k, "folds": rows, "mean": mean_metrics(used), "folds_used": len(used)}


@dataclass
class VariantResult:
    variant: str
    num_parameters: int
    report: EvalReport
    history: object = None

    def row(self):
        return {"variant": self.variant, "num_parameters": self.num_parameters,
                **{m: getattr(self.report.metrics, m) for m in METRIC_NAMES}}


def run_variant(variant, train_samples, test_samples, model_cfg, train_cfg, progress=None):
    cfg = replace(model_cfg, variant=variant)
    model, history, report = fit_and_score(train_samples, test_samples, cfg, train_cfg, progress)
    return VariantResult(variant, model.num_parameters(), report, history)


ABLATION_ORDER = ("cnn_only", "transformer_only", "full")


def ablation_table(results):
    by_name = {r.variant: r for r in results}
    return {"rows": [by_name[v].row() for v in ABLATION_ORDER if v in by_name],
            "columns": list(METRIC_NAMES)}


def ablation_report(samples, train_cfg, model_cfg, split_spec=None):
    """Train the three variants on one shared hold-out split with one seed."""
    split_spec = split_spec or SplitSpec()
    train_part, test_part = split(samples, split_spec)
    results = [run_variant(v, train_part, test_part, model_cfg, train_cfg) for v in ABLATION_ORDER]
    return ablation_table(results)


# rendering ----------------------------------------------------------------

def format_table(rows, columns, percent=()):
    cells = [[str(c) for c in columns]]
    for r in rows:
        line = []
        for c in columns:
            v = r.get(c, "")
            if isinstance(v, float):
                v = f"{100 * v:.2f}" if c in percent else f"{v:.4f}"
            line.append(str(v))
        cells.append(line)
    widths = [max(len(row[i]) for row in cells) for i in range(len(columns))]
    out = []
    for n, row in enumerate(cells):
        out.append("  ".join(v.ljust(widths[i]) if i == 0 else v.rjust(widths[i])
                             for i, v in enumerate(row)))
        if n == 0:
            out.append("  ".join("-" * wd for wd in widths))
    return "\n".join(out)


def histogram_svg(histogram, title="misclassified anomaly positions", width=640, height=240):
    n = len(histogram)
    peak = max(max(histogram), 1)
    pad = 30
    bar_w = (width - 2 * pad) / max(n, 1)
    bars = []
    for i, c in enumerate(histogram):
        h = (height - 2 * pad) * c / peak
        x = pad + i * bar_w
        bars.append(f'<rect x="{x:.2f}" y="{height - pad - h:.2f}" width="{bar_w * 0.9:.2f}" '
                    f'height="{h:.2f}" fill="#4472c4"><title>{i}: {c}</title></rect>')
    return (
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}">'
        f'<text x="{pad}" y="18" font-size="13" font-family="sans-serif">{title}</text>'
        f'<line x1="{pad}" y1="{height - pad}" x2="{width - pad}" y2="{height - pad}" stroke="#000"/>'
        + "".join(bars)
        + f'<text x="{pad}" y="{height - 10}" font-size="11" font-family="sans-serif">0</text>'
        f'<text x="{width - pad - 14}" y="{height - 10}" font-size="11" '
        f'font-family="sans-serif">{n - 1}</text></svg>'
    )
