"""Above/below accuracy and F1, Pearson r, R^2 and IoU for predicted object boxes."""

from __future__ import annotations

import csv
import math
from dataclasses import asdict, dataclass, field
from enum import IntEnum
from fractions import Fraction
from typing import IO, Iterable, Sequence

import numpy as np

from .geometry import BBox, iou_many

COLUMNS = ("acc_y", "f1_y", "r_x", "r_y", "r2", "iou")


class Vertical(IntEnum):
    BELOW = 0
    ABOVE = 1


def above_below(subject: BBox, box: BBox) -> Vertical:
    """ABOVE when the box center is strictly higher (smaller y) than the subject's."""
    return Vertical.ABOVE if box.cy < subject.cy else Vertical.BELOW


def acc_f1_macro(pred_labels: Sequence[int], gold_labels: Sequence[int]) -> tuple[float, float]:
    """Macro-averaged per-class recall and F1 over {ABOVE, BELOW}, in percent.

    A class missing from the gold labels is left out of both averages unless
    it was predicted, in which case it contributes 0. Scores are computed as
    exact fractions and rounded once, so equal counts give equal floats.
    """
    pred = np.asarray(pred_labels, dtype=int)
    gold = np.asarray(gold_labels, dtype=int)
    if pred.shape != gold.shape:
        raise ValueError(f"length mismatch: {pred.shape} vs {gold.shape}")
    if pred.size == 0:
        raise ValueError("no labels")
    recalls, f1s = [], []
    for cls in (Vertical.BELOW, Vertical.ABOVE):
        tp = int(np.sum((pred == cls) & (gold == cls)))
        n_gold = int(np.sum(gold == cls))
        n_pred = int(np.sum(pred == cls))
        if n_gold == 0 and n_pred == 0:
            continue
        recalls.append(Fraction(tp, n_gold) if n_gold else Fraction(0))
        f1s.append(Fraction(2 * tp, n_gold + n_pred))
    return float(100 * sum(recalls) / len(recalls)), float(100 * sum(f1s) / len(f1s))


def pearson(xs: Sequence[float], ys: Sequence[float]) -> float:
    x = np.asarray(xs, dtype=np.float64)
    y = np.asarray(ys, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1:
        raise ValueError("pearson needs two 1-D sequences of equal length")
    if x.size < 2:
        raise ValueError("pearson needs at least 2 points")
    dx = x - x.mean()
    dy = y - y.mean()
    sxx = float(dx @ dx)
    syy = float(dy @ dy)
    if sxx == 0.0 or syy == 0.0:
        raise ValueError("pearson undefined for zero variance")
    return float(np.clip((dx @ dy) / math.sqrt(sxx * syy), -1.0, 1.0))


def r_squared(preds: np.ndarray, golds: np.ndarray) -> tuple[float, list[int]]:
    """Uniform average over output columns of ``1 - SS_res / SS_tot``.

    Columns whose gold values are constant are excluded; their indices come
    back as the second element. NaN when every column is excluded.
    """
    p = np.asarray(preds, dtype=np.float64)
    g = np.asarray(golds, dtype=np.float64)
    if p.shape != g.shape or p.ndim != 2:
        raise ValueError(f"shape mismatch: {p.shape} vs {g.shape}")
    if p.shape[0] < 2:
        raise ValueError("r_squared needs at least 2 rows")
    ss_res = np.sum((g - p) ** 2, axis=0)
    ss_tot = np.sum((g - g.mean(axis=0)) ** 2, axis=0)
    ok = ss_tot > 0
    excluded = [int(k) for k in np.flatnonzero(~ok)]
    if not ok.any():
        return float("nan"), excluded
    return float(np.mean(1.0 - ss_res[ok] / ss_tot[ok])), excluded


@dataclass
class MetricsReport:
    """Percent-scaled scores in the column order of the result tables."""

    acc_y: float
    f1_y: float
    r_x: float
    r_y: float
    r2: float
    iou: float
    n: int
    notes: list[str] = field(default_factory=list)

    def row(self) -> list[float]:
        return [getattr(self, c) for c in COLUMNS]

    def to_json(self) -> dict:
        return asdict(self)

    @classmethod
    def from_json(cls, d: dict) -> MetricsReport:
        return cls(**d)


def evaluate(preds: np.ndarray, golds: np.ndarray, subjects: np.ndarray) -> MetricsReport:
    """Score ``(n, 4)`` arrays of predicted, gold and subject boxes.

    Correlations that are undefined (a constant column) are reported as NaN
    with an explanatory note rather than raising, so degenerate folds still
    produce a report.
    """
    p = np.asarray(preds, dtype=np.float64).reshape(-1, 4)
    g = np.asarray(golds, dtype=np.float64).reshape(-1, 4)
    s = np.asarray(subjects, dtype=np.float64).reshape(-1, 4)
    if not (len(p) == len(g) == len(s)):
        raise ValueError("preds, golds and subjects differ in length")
    if len(p) < 2:
        raise ValueError("evaluate needs at least 2 instances")
    notes = []
    pred_lab = (p[:, 1] < s[:, 1]).astype(int)
    gold_lab = (g[:, 1] < s[:, 1]).astype(int)
    acc, f1 = acc_f1_macro(pred_lab, gold_lab)
    rs = []
    for axis, name in ((0, "r_x"), (1, "r_y")):
        try:
            rs.append(100.0 * pearson(p[:, axis], g[:, axis]))
        except ValueError as exc:
            notes.append(f"{name}: {exc}")
            rs.append(float("nan"))
    r2, excluded = r_squared(p, g)
    if excluded:
        notes.append(f"r2: constant gold in columns {excluded}")
    return MetricsReport(
        acc_y=acc, f1_y=f1, r_x=rs[0], r_y=rs[1], r2=100.0 * r2,
        iou=100.0 * float(np.mean(iou_many(p, g))), n=len(p), notes=notes,
    )


def evaluate_boxes(results: Iterable[tuple[BBox, BBox, BBox]]) -> MetricsReport:
    """:func:`evaluate` over ``(pred, gold, subject)`` box triples."""
    rows = [tuple(map(tuple, r)) for r in results]
    if not rows:
        raise ValueError("no results")
    p, g, s = (np.array(col, dtype=np.float64) for col in zip(*rows))
    return evaluate(p, g, s)


def aggregate(reports: Sequence[MetricsReport]) -> MetricsReport:
    """Uniform average of per-fold reports."""
    if not reports:
        raise ValueError("no reports")
    vals = {c: float(np.mean([getattr(r, c) for r in reports])) for c in COLUMNS}
    notes = [f"fold {i}: {n}" for i, r in enumerate(reports) for n in r.notes]
    return MetricsReport(**vals, n=sum(r.n for r in reports), notes=notes)


def format_table(rows: Sequence[tuple[str, MetricsReport]], label: str = "Input") -> str:
    width = max([len(label)] + [len(name) for name, _ in rows])
    head = f"{label:<{width}}" + "".join(f"{c:>8}" for c in COLUMNS)
    lines = [head, "-" * len(head)]
    for name, rep in rows:
        lines.append(f"{name:<{width}}" + "".join(f"{v:>8.1f}" for v in rep.row()))
    return "\n".join(lines)


def write_fold_csv(reports: Sequence[MetricsReport], out: IO[str]) -> None:
    w = csv.writer(out, lineterminator="\n")
    w.writerow(["fold", *COLUMNS, "n"])
    for i, r in enumerate(reports):
        w.writerow([i, *(repr(v) for v in r.row()), r.n])
