"""Accuracy, expected calibration error and reliability diagrams.

Bins are equal-width over ``[0, 1]``: bin ``m`` (1-based) covers
``((m-1)/M, m/M]`` and bin 1 also takes confidence 0. ECE is always
computed from the bin list, so the value in a report and the value
recomposed from exported bins agree exactly.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

__all__ = [
    "EvalOutcome",
    "ReliabilityBin",
    "CalibrationReport",
    "accuracy",
    "reliability_bins",
    "ece",
    "ece_from_bins",
    "merge_bins",
    "calibration_report",
    "write_reliability_csv",
    "read_reliability_csv",
    "reliability_svg",
]


@dataclass(frozen=True)
class EvalOutcome:
    confidence: float
    predicted: int
    actual: int

    def __post_init__(self):
        if not 0.0 <= self.confidence <= 1.0:
            raise ValueError(f"confidence {self.confidence} outside [0, 1]")


@dataclass(frozen=True)
class ReliabilityBin:
    lo: float
    hi: float
    count: int
    conf_sum: float
    n_correct: int

    @property
    def mean_conf(self) -> float:
        return self.conf_sum / self.count if self.count else 0.0

    @property
    def accuracy(self) -> float:
        return self.n_correct / self.count if self.count else 0.0


@dataclass(frozen=True)
class CalibrationReport:
    accuracy: float
    ece: float
    bins: list = field(repr=False)
    n: int

    def to_dict(self) -> dict:
        return {
            "n": self.n,
            "accuracy": self.accuracy,
            "ece": self.ece,
            "bins": [
                {"bin_lo": b.lo, "bin_hi": b.hi, "count": b.count,
                 "mean_conf": b.mean_conf, "accuracy": b.accuracy}
                for b in self.bins
            ],
        }


def _arrays(outcomes) -> tuple[np.ndarray, np.ndarray]:
    """Confidence and correctness arrays from outcomes or a ``(conf, pred, actual)`` triple."""
    if isinstance(outcomes, tuple) and len(outcomes) == 3 and not isinstance(outcomes[0], EvalOutcome):
        conf, pred, actual = (np.asarray(a) for a in outcomes)
    else:
        outcomes = list(outcomes)
        conf = np.array([o.confidence for o in outcomes], dtype=np.float64)
        pred = np.array([o.predicted for o in outcomes])
        actual = np.array([o.actual for o in outcomes])
    conf = np.asarray(conf, dtype=np.float64)
    if conf.size == 0:
        raise ValueError("no outcomes")
    if ((conf < 0) | (conf > 1)).any() or not np.isfinite(conf).all():
        raise ValueError("confidences must lie in [0, 1]")
    return conf, np.asarray(pred) == np.asarray(actual)


def accuracy(outcomes) -> float:
    _, correct = _arrays(outcomes)
    return float(np.mean(correct))


def _edges(n_bins: int) -> np.ndarray:
    return np.arange(n_bins + 1) / n_bins


def reliability_bins(outcomes, n_bins: int = 10) -> list[ReliabilityBin]:
    """Equal-width bins with per-bin count, confidence sum and correct count.

    ``outcomes`` is a sequence of :class:`EvalOutcome` or a
    ``(confidences, predicted, actual)`` tuple of arrays.
    """
    if n_bins < 2:
        raise ValueError("n_bins must be >= 2")
    conf, correct = _arrays(outcomes)
    edges = _edges(n_bins)
    # searchsorted(side="left") gives i with edges[i-1] < c <= edges[i]
    which = np.maximum(np.searchsorted(edges, conf, side="left"), 1) - 1
    counts = np.bincount(which, minlength=n_bins)
    sums = np.bincount(which, weights=conf, minlength=n_bins)
    hits = np.bincount(which, weights=correct.astype(np.float64), minlength=n_bins)
    return [
        ReliabilityBin(float(edges[m]), float(edges[m + 1]), int(counts[m]),
                       float(sums[m]), int(hits[m]))
        for m in range(n_bins)
    ]


def ece_from_bins(bins: Sequence[ReliabilityBin]) -> float:
    n = sum(b.count for b in bins)
    if n == 0:
        raise ValueError("no outcomes")
    total = 0.0
    for b in bins:
        if b.count:
            total += (b.count / n) * abs(b.accuracy - b.mean_conf)
    return total


def ece(outcomes, n_bins: int = 10) -> float:
    """Expected calibration error over equal-width bins."""
    return ece_from_bins(reliability_bins(outcomes, n_bins))


def merge_bins(a: Sequence[ReliabilityBin], b: Sequence[ReliabilityBin]) -> list[ReliabilityBin]:
    """Bins of the concatenated outcome lists (counts and sums add)."""
    if len(a) != len(b):
        raise ValueError("bin counts differ")
    out = []
    for x, y in zip(a, b):
        if (x.lo, x.hi) != (y.lo, y.hi):
            raise ValueError("bin edges differ")
        out.append(ReliabilityBin(x.lo, x.hi, x.count + y.count,
                                  x.conf_sum + y.conf_sum, x.n_correct + y.n_correct))
    return out


def calibration_report(outcomes, n_bins: int = 10) -> CalibrationReport:
    conf, correct = _arrays(outcomes)
    bins = reliability_bins((conf, correct, np.ones_like(correct)), n_bins)
    return CalibrationReport(float(np.mean(correct)), ece_from_bins(bins), bins, int(conf.size))


def write_reliability_csv(report: CalibrationReport, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["bin_lo", "bin_hi", "count", "mean_conf", "accuracy"])
        for b in report.bins:
            w.writerow([repr(b.lo), repr(b.hi), b.count, repr(b.mean_conf), repr(b.accuracy)])


def read_reliability_csv(path) -> list[dict]:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    return [
        {"bin_lo": float(r["bin_lo"]), "bin_hi": float(r["bin_hi"]), "count": int(r["count"]),
         "mean_conf": float(r["mean_conf"]), "accuracy": float(r["accuracy"])}
        for r in rows
    ]


def reliability_svg(report: CalibrationReport, title: str = "", size: int = 320) -> str:
    """Reliability diagram as a standalone SVG string.

    Bars show per-bin accuracy against bin position; the dashed diagonal is
    perfect calibration. Output is a pure function of the report.
    """
    pad = 40
    w = h = size
    inner = size - 2 * pad

    def x(v):
        return pad + v * inner

    def y(v):
        return h - pad - v * inner

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}">',
        f'<rect x="0" y="0" width="{w}" height="{h}" fill="white"/>',
    ]
    for b in report.bins:
        if b.count == 0:
            continue
        bw = (b.hi - b.lo) * inner
        top = y(b.accuracy)
        parts.append(
            f'<rect x="{x(b.lo):.2f}" y="{top:.2f}" width="{bw:.2f}" height="{y(0) - top:.2f}" '
            'fill="#3b6ea5" stroke="#1d3a5c" stroke-width="0.5"/>'
        )
        parts.append(
            f'<line x1="{x(b.lo):.2f}" y1="{y(b.mean_conf):.2f}" x2="{x(b.hi):.2f}" '
            f'y2="{y(b.mean_conf):.2f}" stroke="#c0392b" stroke-width="1.5"/>'
        )
    parts += [
        f'<line x1="{x(0)}" y1="{y(0)}" x2="{x(1)}" y2="{y(1)}" stroke="#555" stroke-dasharray="4 3"/>',
        f'<rect x="{x(0)}" y="{y(1)}" width="{inner}" height="{inner}" fill="none" stroke="black"/>',
        f'<text x="{w / 2}" y="{h - 8}" font-size="12" text-anchor="middle">confidence</text>',
        f'<text x="12" y="{h / 2}" font-size="12" text-anchor="middle" '
        f'transform="rotate(-90 12 {h / 2})">accuracy</text>',
        f'<text x="{x(0) + 6}" y="{y(1) + 16}" font-size="12">ECE = {report.ece:.4f}</text>',
    ]
    if title:
        parts.append(f'<text x="{w / 2}" y="20" font-size="13" text-anchor="middle">{_escape(title)}</text>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def _escape(s: str) -> str:
    return s.replace("&", "&amp;").replace("<", "&lt;").replace(">", "&gt;")


def report_json(report: CalibrationReport, **extra) -> str:
    doc = dict(report.to_dict(), **extra)
    return json.dumps(doc, indent=2, sort_keys=True) + "\n"
