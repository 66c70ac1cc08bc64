"""Confusion matrices, one-vs-rest and grouped metrics, ROC/AUC, and
inference overhead measurement."""

from __future__ import annotations

import csv
import io
import json
import os
import platform
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

CLASS_NAMES = ("Normal", "DDoS", "FakeInterface", "FakeSource", "ReqWithoutRes",
               "ResWithoutReq", "HardwareFailure")
# classes 1-5 collapse to Attack
DEFAULT_GROUPS: dict[str, tuple[int, ...]] = {
    "Normal": (0,),
    "Attack": (1, 2, 3, 4, 5),
    "Failure": (6,),
}


class EvaluationError(ValueError):
    pass


class DegenerateClassError(EvaluationError):
    pass


@dataclass
class ConfusionMatrix:
    """Rows are true classes, columns predictions."""

    counts: np.ndarray
    labels: tuple[str, ...] = CLASS_NAMES

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def collapse(self, groups: Mapping[str, Sequence[int]] = DEFAULT_GROUPS) -> "ConfusionMatrix":
        names = list(groups)
        owner = np.full(len(self.counts), -1)
        for gi, name in enumerate(names):
            owner[list(groups[name])] = gi
        if (owner < 0).any():
            raise EvaluationError("grouping does not cover every class")
        k = len(names)
        m = np.zeros((k, k), dtype=np.int64)
        np.add.at(m, (owner[:, None].repeat(len(owner), 1), owner[None, :].repeat(len(owner), 0)),
                  self.counts)
        return ConfusionMatrix(m, tuple(names))

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["true\\pred", *self.labels])
        for name, row in zip(self.labels, self.counts):
            w.writerow([name, *(int(v) for v in row)])
        return buf.getvalue()


def confusion(y_true, y_pred, num_classes: int = len(CLASS_NAMES),
              labels: Sequence[str] | None = None) -> ConfusionMatrix:
    t = np.asarray(y_true, dtype=np.int64).ravel()
    p = np.asarray(y_pred, dtype=np.int64).ravel()
    if t.shape != p.shape:
        raise EvaluationError(f"label sequences differ in length: {t.size} vs {p.size}")
    for arr in (t, p):
        if arr.size and (arr.min() < 0 or arr.max() >= num_classes):
            raise EvaluationError(f"labels must lie in [0, {num_classes})")
    counts = np.bincount(t * num_classes + p, minlength=num_classes ** 2)
    names = tuple(labels) if labels is not None else (
        CLASS_NAMES if num_classes == len(CLASS_NAMES) else tuple(str(i) for i in range(num_classes)))
    return ConfusionMatrix(counts.reshape(num_classes, num_classes).astype(np.int64), names)


def _ratio(num: float, den: float) -> float:
    return float(num / den) if den else 0.0


def f1_score(precision: float, recall: float) -> float:
    return _ratio(2 * precision * recall, precision + recall)


@dataclass
class ClassMetrics:
    accuracy: float
    precision: float
    recall: float
    f1: float
    support: int


def _one_vs_rest(counts: np.ndarray) -> list[ClassMetrics]:
    total = counts.sum()
    out = []
    for c in range(len(counts)):
        tp = counts[c, c]
        fp = counts[:, c].sum() - tp
        fn = counts[c, :].sum() - tp
        tn = total - tp - fp - fn
        prec = _ratio(tp, tp + fp)
        rec = _ratio(tp, tp + fn)
        out.append(ClassMetrics(_ratio(tp + tn, total), prec, rec, f1_score(prec, rec),
                                int(counts[c].sum())))
    return out


@dataclass
class MetricsReport:
    confusion: ConfusionMatrix
    per_class: dict[str, ClassMetrics]
    accuracy: float
    macro: dict[str, float]
    grouped: dict[str, ClassMetrics] = field(default_factory=dict)
    grouped_confusion: ConfusionMatrix | None = None

    def to_dict(self) -> dict:
        d = {
            "accuracy": self.accuracy,
            "macro": self.macro,
            "per_class": {k: asdict(v) for k, v in self.per_class.items()},
            "confusion": {"labels": list(self.confusion.labels),
                          "counts": self.confusion.counts.tolist()},
        }
        if self.grouped_confusion is not None:
            d["grouped"] = {k: asdict(v) for k, v in self.grouped.items()}
            d["grouped_confusion"] = {"labels": list(self.grouped_confusion.labels),
                                      "counts": self.grouped_confusion.counts.tolist()}
        return d

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["scope", "class", "accuracy", "precision", "recall", "f1", "support"])
        rows = [("class", self.per_class)]
        if self.grouped_confusion is not None:
            rows.append(("group", self.grouped))
        for scope, table in rows:
            for name, m in table.items():
                w.writerow([scope, name, f"{m.accuracy:.6f}", f"{m.precision:.6f}",
                            f"{m.recall:.6f}", f"{m.f1:.6f}", m.support])
        w.writerow(["macro", "all", f"{self.macro['accuracy']:.6f}", f"{self.macro['precision']:.6f}",
                    f"{self.macro['recall']:.6f}", f"{self.macro['f1']:.6f}", self.confusion.total])
        return buf.getvalue()


def metrics(cm: ConfusionMatrix, grouping: Mapping[str, Sequence[int]] | bool | None = True) -> MetricsReport:
    """One-vs-rest metrics per class; with ``grouping`` the same metrics on
    the collapsed matrix as well (default Normal / Attack / Failure)."""
    counts = np.asarray(cm.counts, dtype=np.int64)
    if counts.ndim != 2 or counts.shape[0] != counts.shape[1] or (counts < 0).any():
        raise EvaluationError("confusion counts must be a square non-negative matrix")
    per = _one_vs_rest(counts)
    macro = {k: float(np.mean([getattr(m, k) for m in per])) for k in ("accuracy", "precision", "recall", "f1")}
    report = MetricsReport(cm, dict(zip(cm.labels, per)), _ratio(np.trace(counts), counts.sum()), macro)
    if grouping:
        groups = DEFAULT_GROUPS if grouping is True else grouping
        gcm = cm.collapse(groups)
        report.grouped_confusion = gcm
        report.grouped = dict(zip(gcm.labels, _one_vs_rest(gcm.counts)))
    return report


# ---------------------------------------------------------------- ROC

@dataclass
class RocCurve:
    class_id: int
    fpr: np.ndarray
    tpr: np.ndarray
    thresholds: np.ndarray
    auc: float

    def to_csv(self) -> str:
        lines = ["threshold,fpr,tpr"]
        lines += [f"{th!r},{f!r},{t!r}" for th, f, t in zip(self.thresholds, self.fpr, self.tpr)]
        return "\n".join(lines) + "\n"


def roc_auc(y_true, probs, class_id: int) -> RocCurve:
    """One-vs-rest ROC by sweeping every distinct score as a threshold
    (``score >= threshold`` is positive); AUC by the trapezoid rule.

    The area is accumulated as an integer ``sum(dFP * (TP_prev + TP))`` and
    divided once, so it equals the pairwise statistic
    ``P(s+ > s-) + P(s+ == s-)/2`` exactly.
    """
    y = np.asarray(y_true).ravel()
    p = np.asarray(probs, dtype=np.float64)
    scores = p[:, class_id] if p.ndim == 2 else p.ravel()
    if scores.shape != y.shape:
        raise EvaluationError("scores and labels differ in length")
    pos = y == class_id
    n_pos = int(pos.sum())
    n_neg = int(y.size - n_pos)
    if n_pos == 0 or n_neg == 0:
        raise DegenerateClassError(f"class {class_id} needs both positive and negative samples")
    order = np.argsort(-scores, kind="mergesort")
    s = scores[order]
    hit = pos[order].astype(np.int64)
    # last index of every run of equal scores
    ends = np.flatnonzero(np.r_[s[1:] != s[:-1], True])
    tp = np.r_[0, np.cumsum(hit)[ends]]
    fp = np.r_[0, (ends + 1) - tp[1:]]
    twice_area = int(np.sum(np.diff(fp) * (tp[1:] + tp[:-1])))
    auc = twice_area / (2 * n_pos * n_neg)
    thresholds = np.r_[np.inf, s[ends]]
    return RocCurve(class_id, fp / n_neg, tp / n_pos, thresholds, auc)


def roc_all(y_true, probs, num_classes: int | None = None) -> dict[int, RocCurve]:
    k = num_classes or np.asarray(probs).shape[1]
    return {c: roc_auc(y_true, probs, c) for c in range(k)}


# ---------------------------------------------------------------- overhead

@dataclass
class OverheadReport:
    variant: str
    window: int
    params: int
    checkpoint_bytes: int
    latency_mean: float
    latency_median: float
    latency_p99: float
    batch_size: int
    repetitions: int
    warmup: int
    hardware: str
    samples: list[float] = field(default_factory=list, repr=False)

    def to_dict(self, with_samples: bool = False) -> dict:
        d = asdict(self)
        if not with_samples:
            d.pop("samples")
        return d


def hardware_descriptor() -> str:
    from . import kernels
    cpu = platform.processor() or platform.machine()
    try:
        with open("/proc/cpuinfo") as fh:
            for line in fh:
                if line.startswith("model name"):
                    cpu = line.split(":", 1)[1].strip()
                    break
    except OSError:
        pass
    return (f"{cpu}; {os.cpu_count()} logical cpus; {platform.system()} {platform.release()}; "
            f"python {platform.python_version()}; numpy {np.__version__}; kernels {kernels.backend}")


def benchmark(model, windows, repetitions: int = 1000, warmup: int = 100,
              checkpoint_bytes: int | None = None) -> OverheadReport:
    """Per-window latency at batch size 1 with BLAS pinned to one thread."""
    from threadpoolctl import threadpool_limits

    from .models import count_params
    from .nn.serialize import dumps_checkpoint
    from .nn.tensor import Tensor, no_grad

    if warmup < 100:
        raise EvaluationError("at least 100 warm-up inferences are required")
    x = np.asarray(windows, dtype=model.head.weight.dtype)
    if x.ndim == 2:
        x = x[None]
    if not len(x):
        raise EvaluationError("benchmark needs at least one window")
    if checkpoint_bytes is None:
        checkpoint_bytes = len(dumps_checkpoint(model.config.to_dict(), model.state_dict()))
    model.eval()
    samples = np.empty(repetitions)
    with threadpool_limits(limits=1), no_grad():
        for i in range(warmup):
            model(Tensor(x[i % len(x)][None]))
        for i in range(repetitions):
            inp = Tensor(x[i % len(x)][None])
            t0 = time.perf_counter()
            model(inp)
            samples[i] = time.perf_counter() - t0
    return OverheadReport(
        model.config.variant, model.config.window, count_params(model), int(checkpoint_bytes),
        float(samples.mean()), float(np.median(samples)), float(np.percentile(samples, 99)),
        1, repetitions, warmup, hardware_descriptor(), samples.tolist(),
    )


# ---------------------------------------------------------------- export

def write_metrics(report: MetricsReport, out_dir: str | Path, prefix: str = "metrics",
                  rocs: Mapping[int, RocCurve] | None = None) -> list[Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    body = report.to_dict()
    if rocs:
        body["auc"] = {CLASS_NAMES[c] if c < len(CLASS_NAMES) else str(c): r.auc for c, r in rocs.items()}
    files = {
        f"{prefix}.json": json.dumps(body, indent=1, sort_keys=True),
        f"{prefix}.csv": report.to_csv(),
        "confusion.csv": report.confusion.to_csv(),
    }
    if report.grouped_confusion is not None:
        files["confusion_grouped.csv"] = report.grouped_confusion.to_csv()
    for c, r in (rocs or {}).items():
        files[f"roc_{c}.csv"] = r.to_csv()
    if rocs:
        files["roc.gp"] = gnuplot_roc_script(rocs)
    for name, text in files.items():
        (out / name).write_text(text)
        written.append(out / name)
    return written


def gnuplot_roc_script(rocs: Mapping[int, RocCurve]) -> str:
    plots = ", ".join(
        f"'roc_{c}.csv' using 2:3 with steps title '{CLASS_NAMES[c] if c < len(CLASS_NAMES) else c}"
        f" (AUC {r.auc:.4f})'" for c, r in rocs.items())
    return ("set datafile separator ','\nset key bottom right\nset xlabel 'FPR'\n"
            "set ylabel 'TPR'\nset xrange [0:1]\nset yrange [0:1]\nset terminal pngcairo\n"
            "set output 'roc.png'\nplot " + plots + ", x notitle dashtype 2\n")


def write_overhead(reports: Sequence[OverheadReport], out_dir: str | Path) -> list[Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "overhead.json").write_text(json.dumps([r.to_dict() for r in reports], indent=1))
    buf = io.StringIO()
    cols = ("variant", "window", "params", "checkpoint_bytes", "latency_mean", "latency_median",
            "latency_p99", "batch_size", "repetitions")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(cols)
    for r in reports:
        w.writerow([getattr(r, c) for c in cols])
    (out / "overhead.csv").write_text(buf.getvalue())
    return [out / "overhead.json", out / "overhead.csv"]
