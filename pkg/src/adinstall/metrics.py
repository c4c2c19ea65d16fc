"""Binary-classification metrics: log-loss, NIR, and the confusion-matrix
family (accuracy, TPR, TNR, precision, F1), plus table rendering."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


def _as_binary_labels(labels) -> np.ndarray:
    y = np.asarray(labels)
    if y.size == 0:
        raise ValueError("labels must be non-empty")
    y = y.astype(np.float64).ravel()
    if not np.isin(y, (0.0, 1.0)).all():
        raise ValueError("labels must be exactly 0 or 1")
    return y


def log_loss(labels, probabilities, eps: float = 1e-15) -> float:
    """Mean negative log-likelihood with probabilities clipped to [eps, 1-eps]."""
    y = _as_binary_labels(labels)
    p = np.asarray(probabilities, dtype=np.float64).ravel()
    if p.shape != y.shape:
        raise ValueError(f"{y.size} labels vs {p.size} probabilities")
    p = np.clip(p, eps, 1.0 - eps)
    return float(-np.mean(y * np.log(p) + (1.0 - y) * np.log(1.0 - p)))


def nir(labels) -> float:
    """No-information rate: accuracy of always predicting the majority class."""
    y = _as_binary_labels(labels)
    ones = float(np.count_nonzero(y))
    return max(ones, y.size - ones) / y.size


@dataclass(frozen=True)
class ConfusionMatrix:
    tp: int
    fp: int
    tn: int
    fn: int

    @property
    def n(self) -> int:
        return self.tp + self.fp + self.tn + self.fn


def confusion(labels, probabilities, threshold: float = 0.5) -> ConfusionMatrix:
    """Counts with the rule: predict positive iff p >= threshold."""
    if not 0.0 < threshold < 1.0:
        raise ValueError("threshold must lie strictly between 0 and 1")
    y = _as_binary_labels(labels)
    p = np.asarray(probabilities, dtype=np.float64).ravel()
    if p.shape != y.shape:
        raise ValueError(f"{y.size} labels vs {p.size} probabilities")
    pred = p >= threshold
    pos = y == 1.0
    return ConfusionMatrix(
        tp=int(np.count_nonzero(pred & pos)),
        fp=int(np.count_nonzero(pred & ~pos)),
        tn=int(np.count_nonzero(~pred & ~pos)),
        fn=int(np.count_nonzero(~pred & pos)),
    )


@dataclass(frozen=True)
class MetricsReport:
    """The seven-metric evaluation block for one head on one dataset.

    Ratios with a zero denominator are reported as 0.0 and listed in
    ``undefined`` so degenerate slices still render.
    """

    log_loss: float
    nir: float
    accuracy: float
    tpr: float
    tnr: float
    precision: float
    f1: float
    threshold: float
    n: int
    undefined: frozenset[str] = frozenset()

    _FIELDS = (
        ("Log-Loss", "log_loss"),
        ("NIR", "nir"),
        ("Accuracy", "accuracy"),
        ("TPR (Recall)", "tpr"),
        ("TNR (Specificity)", "tnr"),
        ("Precision", "precision"),
        ("F1 Score", "f1"),
    )


def _ratio(num: int, den: int, name: str, undefined: set[str]) -> float:
    if den == 0:
        undefined.add(name)
        return 0.0
    return num / den


def report(labels, probabilities, threshold: float = 0.5, eps: float = 1e-15) -> MetricsReport:
    cm = confusion(labels, probabilities, threshold)
    undefined: set[str] = set()
    tpr = _ratio(cm.tp, cm.tp + cm.fn, "tpr", undefined)
    tnr = _ratio(cm.tn, cm.tn + cm.fp, "tnr", undefined)
    precision = _ratio(cm.tp, cm.tp + cm.fp, "precision", undefined)
    if precision + tpr > 0:
        f1 = 2.0 * precision * tpr / (precision + tpr)
    else:
        undefined.add("f1")
        f1 = 0.0
    return MetricsReport(
        log_loss=log_loss(labels, probabilities, eps),
        nir=nir(labels),
        accuracy=(cm.tp + cm.tn) / cm.n,
        tpr=tpr,
        tnr=tnr,
        precision=precision,
        f1=f1,
        threshold=threshold,
        n=cm.n,
        undefined=frozenset(undefined),
    )


def render_reports(columns: dict[str, MetricsReport], title: str = "") -> str:
    """Aligned text table: one metric per row, one dataset per column."""
    names = list(columns.keys())
    label_width = max(len(label) for label, _ in MetricsReport._FIELDS)
    col_widths = [max(len(n), 8) for n in names]
    lines = []
    if title:
        lines.append(title)
    header = " " * label_width + "  " + "  ".join(
        f"{n:>{w}}" for n, w in zip(names, col_widths)
    )
    lines.append(header)
    for label, attr in MetricsReport._FIELDS:
        cells = []
        for n, w in zip(names, col_widths):
            rep = columns[n]
            mark = "*" if attr in rep.undefined else ""
            cells.append(f"{getattr(rep, attr):.4f}{mark}".rjust(w))
        lines.append(f"{label:<{label_width}}  " + "  ".join(cells))
    flagged = sorted({m for rep in columns.values() for m in rep.undefined})
    if flagged:
        lines.append(f"(* zero-denominator ratio reported as 0: {', '.join(flagged)})")
    return "\n".join(lines)


def report_record_lines(columns: dict[str, MetricsReport]) -> list[str]:
    """Machine-readable companion to :func:`render_reports` (TSV)."""
    lines = ["dataset\tmetric\tvalue\tundefined"]
    for name, rep in columns.items():
        for _, attr in MetricsReport._FIELDS:
            flag = "1" if attr in rep.undefined else "0"
            lines.append(f"{name}\t{attr}\t{repr(getattr(rep, attr))}\t{flag}")
    return lines
