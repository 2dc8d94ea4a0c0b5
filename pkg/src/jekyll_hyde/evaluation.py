"""Pixel-level threshold sweeps: confusion counts, PPV/NPV/sensitivity/specificity."""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

CSV_HEADER = "threshold,tp,fp,tn,fn,ppv,npv,sensitivity,specificity"


def default_thresholds() -> np.ndarray:
    return np.round(np.arange(1, 20) * 0.05, 10)


@dataclass(frozen=True)
class Confusion:
    tp: int
    fp: int
    tn: int
    fn: int

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.tn + self.fn


@dataclass(frozen=True)
class Metrics:
    """Exact ratios; ``None`` marks an undefined metric (zero denominator)."""

    ppv: Optional[Fraction]
    npv: Optional[Fraction]
    sensitivity: Optional[Fraction]
    specificity: Optional[Fraction]

    def as_floats(self) -> dict:
        return {k: (None if v is None else float(v)) for k, v in self.__dict__.items()}


def threshold(outputs, t: float) -> np.ndarray:
    """1 where output >= t, else 0."""
    return (np.asarray(outputs, dtype=np.float64) >= t).astype(np.uint8)


def confusion(pred, labels) -> Confusion:
    pred = np.asarray(pred)
    labels = np.asarray(labels)
    if pred.shape != labels.shape:
        raise ValueError(f"prediction shape {pred.shape} != label shape {labels.shape}")
    for name, a in (("prediction", pred), ("labels", labels)):
        if not np.all((a == 0) | (a == 1)):
            raise ValueError(f"{name} must be binary")
    p = pred.astype(bool)
    y = labels.astype(bool)
    tp = int(np.count_nonzero(p & y))
    fp = int(np.count_nonzero(p & ~y))
    fn = int(np.count_nonzero(~p & y))
    tn = int(p.size - tp - fp - fn)
    return Confusion(tp, fp, tn, fn)


def _ratio(num: int, den: int) -> Optional[Fraction]:
    return None if den == 0 else Fraction(num, den)


def metrics(c: Confusion) -> Metrics:
    return Metrics(
        ppv=_ratio(c.tp, c.tp + c.fp),
        npv=_ratio(c.tn, c.tn + c.fn),
        sensitivity=_ratio(c.tp, c.tp + c.fn),
        specificity=_ratio(c.tn, c.tn + c.fp),
    )


def rescale_unit(outputs) -> np.ndarray:
    """Linear map of the whole set of outputs onto [0, 1]."""
    x = np.asarray(outputs, dtype=np.float64)
    lo, hi = float(x.min()), float(x.max())
    if not hi > lo:
        raise ValueError("cannot rescale constant outputs")
    return (x - lo) / (hi - lo)


@dataclass
class SweepRow:
    threshold: float
    confusion: Confusion
    metrics: Metrics


@dataclass
class SweepTable:
    rows: list

    @property
    def thresholds(self) -> list[float]:
        return [r.threshold for r in self.rows]

    def column(self, name: str) -> list[Optional[float]]:
        return [r.metrics.as_floats()[name] for r in self.rows]

    def row_at(self, t: float) -> SweepRow:
        for r in self.rows:
            if abs(r.threshold - t) < 1e-9:
                return r
        raise KeyError(f"no row for threshold {t}")

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write(CSV_HEADER + "\n")
        w = csv.writer(buf, lineterminator="\n")
        for r in self.rows:
            c = r.confusion
            m = r.metrics.as_floats()
            w.writerow([f"{r.threshold:.6f}", c.tp, c.fp, c.tn, c.fn] + [
                "" if m[k] is None else f"{m[k]:.6f}" for k in ("ppv", "npv", "sensitivity", "specificity")
            ])
        return buf.getvalue()

    def write_csv(self, path: str | Path) -> Path:
        path = Path(path)
        path.write_text(self.to_csv())
        return path


def sweep(outputs, labels, thresholds: Optional[Sequence[float]] = None) -> SweepTable:
    """Confusion counts and metrics for each threshold (strictly increasing)."""
    ts = default_thresholds() if thresholds is None else np.asarray(thresholds, dtype=np.float64)
    if np.any(np.diff(ts) <= 0):
        raise ValueError("thresholds must be strictly increasing")
    x = np.asarray(outputs, dtype=np.float64).reshape(-1)
    y = np.asarray(labels).reshape(-1)
    if x.shape != y.shape:
        raise ValueError(f"outputs ({x.size}) and labels ({y.size}) differ in size")
    if not np.all((y == 0) | (y == 1)):
        raise ValueError("labels must be binary")
    pos = np.sort(x[y == 1])
    neg = np.sort(x[y == 0])
    rows = []
    for t in ts:
        tp = int(pos.size - np.searchsorted(pos, t, side="left"))
        fp = int(neg.size - np.searchsorted(neg, t, side="left"))
        c = Confusion(tp, fp, neg.size - fp, pos.size - tp)
        rows.append(SweepRow(float(t), c, metrics(c)))
    return SweepTable(rows)
