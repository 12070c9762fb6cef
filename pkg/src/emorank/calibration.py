"""Calibration metrics and compound-expression evaluation.

Reliability binning in two flavors (equal-width intervals and equal-mass
quantile groups), the ECE / MCE / AECE scalars built on them, top-1
accuracy, and the top-2 set-match evaluation for samples labeled with a
pair of constituent classes.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import Sequence

from emorank.dataio import PredictionRow
from emorank.errors import DataFormatError, InvalidInputError
from emorank.numcore import argmax_tiebreak, top_k


class BinningMode(enum.Enum):
    EQUAL_WIDTH = "width"
    EQUAL_MASS = "mass"

    @classmethod
    def parse(cls, text: str) -> "BinningMode":
        for mode in cls:
            if mode.value == text:
                return mode
        raise InvalidInputError(
            f"unknown binning mode {text!r}, expected one of "
            f"{[m.value for m in cls]}")


@dataclass
class BinStats:
    """One reliability bin: bounds, occupancy, accuracy, mean confidence.

    Empty bins keep acc = conf = 0.0 with the flag set.
    """

    bin_id: int
    lo: float
    hi: float
    count: int
    acc: float
    conf: float
    empty: bool

    @property
    def gap(self) -> float:
        return abs(self.acc - self.conf)


def confidence_correctness(
    probs: Sequence[Sequence[float]],
    labels: Sequence[int],
) -> tuple[list[float], list[bool]]:
    """Top-1 confidence and whether the top-1 class equals the label."""
    if len(probs) != len(labels):
        raise InvalidInputError(
            f"{len(probs)} predictions vs {len(labels)} labels")
    confs: list[float] = []
    correct: list[bool] = []
    for p, y in zip(probs, labels):
        top = argmax_tiebreak(p)
        confs.append(p[top])
        correct.append(top == y)
    return confs, correct


def _bin_from(ids: Sequence[int], confidences: Sequence[float],
              correctness: Sequence[bool], bin_id: int, lo: float,
              hi: float) -> BinStats:
    if not ids:
        return BinStats(bin_id, lo, hi, 0, 0.0, 0.0, empty=True)
    n = len(ids)
    acc = sum(1 for i in ids if correctness[i]) / n
    conf = sum(confidences[i] for i in ids) / n
    return BinStats(bin_id, lo, hi, n, acc, conf, empty=False)


def bin_equal_width(confidences: Sequence[float],
                    correctness: Sequence[bool], m: int) -> list[BinStats]:
    """Bin m covers ((m-1)/M, m/M]; confidence 0 lands in bin 1."""
    if m < 1:
        raise InvalidInputError(f"bin count must be >= 1, got {m}")
    if len(confidences) != len(correctness):
        raise InvalidInputError("confidences and correctness must align")
    members: list[list[int]] = [[] for _ in range(m)]
    for i, c in enumerate(confidences):
        if not 0.0 <= c <= 1.0:
            raise InvalidInputError(f"confidence {c} outside [0, 1]")
        b = math.ceil(c * m)
        members[min(max(b, 1), m) - 1].append(i)
    return [_bin_from(members[b], confidences, correctness, b + 1,
                      b / m, (b + 1) / m)
            for b in range(m)]


def bin_equal_mass(confidences: Sequence[float],
                   correctness: Sequence[bool], m: int) -> list[BinStats]:
    """Sort ascending (stable by index) and split into M contiguous groups;
    the first n mod M groups take one extra sample."""
    n = len(confidences)
    if m < 1:
        raise InvalidInputError(f"bin count must be >= 1, got {m}")
    if m > n:
        raise InvalidInputError(f"{m} bins for {n} samples")
    if n != len(correctness):
        raise InvalidInputError("confidences and correctness must align")
    for c in confidences:
        if not 0.0 <= c <= 1.0:
            raise InvalidInputError(f"confidence {c} outside [0, 1]")
    order = sorted(range(n), key=lambda i: (confidences[i], i))
    base, extra = divmod(n, m)
    bins: list[BinStats] = []
    pos = 0
    for b in range(m):
        size = base + (1 if b < extra else 0)
        ids = order[pos:pos + size]
        pos += size
        bins.append(_bin_from(ids, confidences, correctness, b + 1,
                              confidences[ids[0]], confidences[ids[-1]]))
    return bins


def ece(bins: Sequence[BinStats], n: int) -> float:
    """Count-weighted mean |acc - conf|; empty bins contribute nothing."""
    if n <= 0:
        raise InvalidInputError(f"need n >= 1 samples, got {n}")
    total = sum(b.count for b in bins)
    if total != n:
        raise InvalidInputError(f"bin counts sum to {total}, expected {n}")
    return sum((b.count / n) * b.gap for b in bins)


def mce(bins: Sequence[BinStats]) -> float:
    """Largest |acc - conf| over non-empty bins."""
    gaps = [b.gap for b in bins if not b.empty]
    if not gaps:
        raise InvalidInputError("all bins are empty")
    return max(gaps)


def aece(confidences: Sequence[float], correctness: Sequence[bool],
         m: int) -> float:
    """ECE over equal-mass bins."""
    return ece(bin_equal_mass(confidences, correctness, m), len(confidences))


def accuracy(probs: Sequence[Sequence[float]], labels: Sequence[int]) -> float:
    """Fraction of samples whose top-1 class (lowest-index ties) is the
    label."""
    if len(probs) == 0:
        raise InvalidInputError("accuracy of an empty prediction set")
    _, correct = confidence_correctness(probs, labels)
    return sum(correct) / len(correct)


@dataclass
class CalibrationReport:
    mode: BinningMode
    n_bins: int
    bins: list[BinStats]
    ece: float
    aece: float
    mce: float
    acc: float
    n: int


def reliability_report(rows: Sequence[PredictionRow], m: int,
                       mode: BinningMode = BinningMode.EQUAL_WIDTH) -> CalibrationReport:
    """Bin predictions in the requested mode and compute all scalars.

    ece and mce are taken over the report's own bins; aece is always the
    equal-mass variant regardless of mode. Every row must carry a true
    label.
    """
    if not rows:
        raise InvalidInputError("no predictions to analyze")
    labels: list[int] = []
    for r in rows:
        if r.label is None:
            raise InvalidInputError(
                f"row {r.id!r} has no true label; calibration needs one")
        labels.append(r.label)
    probs = [r.probs for r in rows]
    confs, correct = confidence_correctness(probs, labels)
    if mode is BinningMode.EQUAL_WIDTH:
        bins = bin_equal_width(confs, correct, m)
    else:
        bins = bin_equal_mass(confs, correct, m)
    return CalibrationReport(
        mode=mode, n_bins=m, bins=bins,
        ece=ece(bins, len(rows)),
        aece=aece(confs, correct, m),
        mce=mce(bins),
        acc=accuracy(probs, labels),
        n=len(rows))


def write_report_csv(path: str, report: CalibrationReport) -> None:
    """Rows `bin,lo,hi,count,acc,conf,gap`, then `ece=`/`aece=`/`mce=`/`acc=`
    footer lines."""
    with open(path, "w", newline="") as f:
        f.write("bin,lo,hi,count,acc,conf,gap\n")
        for b in report.bins:
            f.write(f"{b.bin_id},{b.lo:.9f},{b.hi:.9f},{b.count},"
                    f"{b.acc:.9f},{b.conf:.9f},{b.gap:.9f}\n")
        f.write(f"ece={report.ece:.9f}\n")
        f.write(f"aece={report.aece:.9f}\n")
        f.write(f"mce={report.mce:.9f}\n")
        f.write(f"acc={report.acc:.9f}\n")


def read_report_csv(path: str) -> tuple[list[BinStats], dict[str, float]]:
    """Parse a written report back: (bins, scalar footer values)."""
    try:
        with open(path) as f:
            lines = [ln.rstrip("\n") for ln in f]
    except FileNotFoundError:
        raise DataFormatError("report file not found", path=path) from None
    if not lines or lines[0] != "bin,lo,hi,count,acc,conf,gap":
        raise DataFormatError("bad report header", path=path, row=1)
    bins: list[BinStats] = []
    scalars: dict[str, float] = {}
    for line_no, line in enumerate(lines[1:], start=2):
        if "=" in line and not line.startswith("bin"):
            key, _, val = line.partition("=")
            try:
                scalars[key] = float(val)
            except ValueError:
                raise DataFormatError(f"bad footer {line!r}", path=path,
                                      row=line_no) from None
            continue
        parts = line.split(",")
        if len(parts) != 7:
            raise DataFormatError("expected 7 fields", path=path, row=line_no)
        try:
            bins.append(BinStats(
                bin_id=int(parts[0]), lo=float(parts[1]), hi=float(parts[2]),
                count=int(parts[3]), acc=float(parts[4]), conf=float(parts[5]),
                empty=int(parts[3]) == 0))
        except ValueError:
            raise DataFormatError("malformed bin row", path=path,
                                  row=line_no) from None
    for key in ("ece", "aece", "mce", "acc"):
        if key not in scalars:
            raise DataFormatError(f"missing footer {key}=", path=path)
    return bins, scalars


@dataclass
class CompoundEvalResult:
    """Top-2 set-match outcome per compound class (an ordered constituent
    pair) plus the mean-probability heatmap."""

    pair_order: list[tuple[int, int]]
    counts: list[int]
    match_rates: list[float]
    overall_rate: float
    heatmap: list[list[float]]      # row i: mean probs for pair_order[i]
    match_flags: list[bool]         # per input sample, original order


def top2_match(probs: Sequence[float], c1: int, c2: int) -> bool:
    """True when the two highest-confidence classes are exactly {c1, c2}."""
    pair = {i for i, _ in top_k(probs, 2)}
    return pair == {c1, c2}


def compound_top2_eval(probs: Sequence[Sequence[float]],
                       pairs: Sequence[tuple[int | None, int | None]],
                       ) -> CompoundEvalResult:
    """Score compound samples: per-pair and overall top-2 match rates and
    per-pair mean probability vectors (heatmap rows, in sorted pair order).
    """
    if len(probs) == 0:
        raise InvalidInputError("no compound predictions")
    if len(probs) != len(pairs):
        raise InvalidInputError(f"{len(probs)} predictions vs {len(pairs)} pairs")
    c = len(probs[0])
    for c1, c2 in pairs:
        if c1 is None or c2 is None:
            raise InvalidInputError("compound sample is missing constituents")
        if c1 == c2 or not (0 <= c1 < c and 0 <= c2 < c):
            raise InvalidInputError(f"bad constituent pair ({c1},{c2})")
    flags = [top2_match(p, c1, c2) for p, (c1, c2) in zip(probs, pairs)]
    pair_order = sorted(set(pairs))
    counts: list[int] = []
    rates: list[float] = []
    heatmap: list[list[float]] = []
    for pair in pair_order:
        ids = [i for i, q in enumerate(pairs) if q == pair]
        counts.append(len(ids))
        rates.append(sum(1 for i in ids if flags[i]) / len(ids))
        heatmap.append([sum(probs[i][j] for i in ids) / len(ids)
                        for j in range(c)])
    return CompoundEvalResult(
        pair_order=pair_order, counts=counts, match_rates=rates,
        overall_rate=sum(flags) / len(flags),
        heatmap=heatmap, match_flags=flags)


def write_heatmap_csv(path: str, result: CompoundEvalResult) -> None:
    """Long-format heatmap: compound_class,basic_class,mean_confidence."""
    with open(path, "w", newline="") as f:
        f.write("compound_class,basic_class,mean_confidence\n")
        for (c1, c2), row in zip(result.pair_order, result.heatmap):
            for j, v in enumerate(row):
                f.write(f"{c1}+{c2},{j},{v:.9f}\n")
