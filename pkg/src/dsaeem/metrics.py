"""Confusion matrices, the five evaluation scores, and fold aggregation.

A score whose denominator is zero is reported as ``None`` (undefined) rather
than 0, and undefined entries are left out of fold means.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

METRIC_NAMES = ("acc", "prec", "sens", "spec", "f1")
TABLE_LABELS = {"acc": "Acc", "prec": "Prec", "sens": "Sens", "spec": "Spec", "f1": "F1_score"}
UNDEFINED = None


@dataclass(frozen=True)
class ConfusionMatrix:
    tp: int
    fp: int
    fn: int
    tn: int
    matrix: tuple = ()  # C x C counts, rows = true class

    @property
    def total(self):
        return self.tp + self.fp + self.fn + self.tn

    def flipped(self):
        """Same predictions scored with the other class as positive."""
        return ConfusionMatrix(self.tn, self.fn, self.fp, self.tp, self.matrix)

    def to_dict(self):
        return {"tp": self.tp, "fp": self.fp, "fn": self.fn, "tn": self.tn,
                "matrix": [list(r) for r in self.matrix]}


def confusion(y_true, y_pred, positive_class=1, n_classes=None) -> ConfusionMatrix:
    y_true = np.asarray(y_true, dtype=np.int64)
    y_pred = np.asarray(y_pred, dtype=np.int64)
    if y_true.shape != y_pred.shape:
        raise ValueError(f"length mismatch: {y_true.shape[0]} true vs {y_pred.shape[0]} predicted")
    if n_classes is None:
        n_classes = int(max(y_true.max(initial=0), y_pred.max(initial=0), positive_class)) + 1
    full = np.zeros((n_classes, n_classes), dtype=np.int64)
    np.add.at(full, (y_true, y_pred), 1)
    t = y_true == positive_class
    p = y_pred == positive_class
    return ConfusionMatrix(int(np.sum(t & p)), int(np.sum(~t & p)), int(np.sum(t & ~p)),
                           int(np.sum(~t & ~p)), tuple(tuple(int(v) for v in r) for r in full))


def _ratio(num, den):
    return UNDEFINED if den == 0 else num / den


def compute_metrics(cm: ConfusionMatrix) -> dict:
    if cm.total <= 0:
        raise ValueError("confusion matrix is empty")
    prec = _ratio(cm.tp, cm.tp + cm.fp)
    sens = _ratio(cm.tp, cm.tp + cm.fn)
    if prec is None or sens is None or prec + sens == 0:
        f1 = UNDEFINED
    else:
        f1 = 2 * prec * sens / (prec + sens)
    return {
        "acc": (cm.tp + cm.tn) / cm.total,
        "prec": prec,
        "sens": sens,
        "spec": _ratio(cm.tn, cm.tn + cm.fp),
        "f1": f1,
    }


@dataclass
class MetricsReport:
    folds: list = field(default_factory=list)  # one metrics dict per fold
    confusions: list = field(default_factory=list)

    def add(self, cm: ConfusionMatrix):
        self.confusions.append(cm)
        self.folds.append(compute_metrics(cm))

    def values(self, name):
        return [f[name] for f in self.folds]

    def mean(self, name):
        v = [x for x in self.values(name) if x is not None]
        return UNDEFINED if not v else float(np.mean(v))

    def std(self, name):
        v = [x for x in self.values(name) if x is not None]
        return UNDEFINED if not v else float(np.std(v))

    def undefined_count(self, name):
        return sum(1 for x in self.values(name) if x is None)

    def best_fold(self):
        accs = self.values("acc")
        return int(np.argmax(accs)) if accs else None

    def pooled(self) -> dict:
        """Scores of the confusion matrix summed over folds."""
        tot = ConfusionMatrix(*(sum(getattr(c, k) for c in self.confusions)
                                for k in ("tp", "fp", "fn", "tn")))
        return compute_metrics(tot)

    def summary(self) -> dict:
        return {name: {"mean": self.mean(name), "std": self.std(name),
                       "undefined_folds": self.undefined_count(name)} for name in METRIC_NAMES}

    def to_dict(self):
        return {"folds": self.folds, "confusions": [c.to_dict() for c in self.confusions],
                "summary": self.summary(), "best_fold": self.best_fold(), "pooled": self.pooled()}


def fmt_pct(v, width=0):
    s = "undef" if v is None or (isinstance(v, float) and math.isnan(v)) else f"{100 * v:.2f}"
    return s.rjust(width) if width else s


def fold_table(report: MetricsReport, title="") -> str:
    """Per-fold rows, then mean, std and best-fold rows; percentages, 2 d.p."""
    w = 9
    head = "fold".ljust(6) + "".join(TABLE_LABELS[m].rjust(w) for m in METRIC_NAMES)
    lines = [title] if title else []
    lines += [head, "-" * len(head)]
    for i, f in enumerate(report.folds):
        lines.append(str(i).ljust(6) + "".join(fmt_pct(f[m], w) for m in METRIC_NAMES))
    lines.append("-" * len(head))
    lines.append("mean".ljust(6) + "".join(fmt_pct(report.mean(m), w) for m in METRIC_NAMES))
    lines.append("std".ljust(6) + "".join(fmt_pct(report.std(m), w) for m in METRIC_NAMES))
    b = report.best_fold()
    if b is not None:
        lines.append("best".ljust(6) + "".join(fmt_pct(report.folds[b][m], w) for m in METRIC_NAMES)
                     + f"   (fold {b})")
    notes = [f"{TABLE_LABELS[m]}: {report.undefined_count(m)} undefined fold(s) excluded"
             for m in METRIC_NAMES if report.undefined_count(m)]
    lines += [f"* {n}" for n in notes]
    return "\n".join(lines) + "\n"


def comparison_table(columns: dict, reference: dict | None = None, title="") -> str:
    """Rows = metrics, columns = named runs (mean +- std), plus optional reference column.

    ``columns`` maps a run name to a :class:`MetricsReport`; ``reference``
    maps a column name to ``{metric: percent}`` values quoted for comparison.
    """
    reference = reference or {}
    names = list(columns)
    widths = [max(17, len(n) + 2) for n in names]
    ref_names = list(reference)
    ref_w = [max(12, len(n) + 2) for n in ref_names]
    head = "metric".ljust(10) + "".join(n.rjust(w) for n, w in zip(names, widths)) \
        + "".join(n.rjust(w) for n, w in zip(ref_names, ref_w))
    lines = [title] if title else []
    lines += [head, "-" * len(head)]
    for m in METRIC_NAMES:
        row = TABLE_LABELS[m].ljust(10)
        for n, w in zip(names, widths):
            r = columns[n]
            mu, sd = r.mean(m), r.std(m)
            cell = "undef" if mu is None else f"{100 * mu:.2f} +- {100 * sd:.2f}"
            row += cell.rjust(w)
        for n, w in zip(ref_names, ref_w):
            v = reference[n].get(m)
            row += ("-" if v is None else f"{v:.2f}").rjust(w)
        lines.append(row)
    return "\n".join(lines) + "\n"
