"""Threshold classification of batches into bits, ROC analysis and key decoding.

Bit 1 is the positive class.  A statistic ``x`` decodes to bit 1 when
``x >= x_th`` and to bit 0 otherwise; for both the signal mean and ``R`` the
bit-1 noise signal gives the larger value.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, NamedTuple, Sequence

import numpy as np

from .errors import ParameterError, UndefinedStatisticError
from .estimators import BatchStats, BatchTable

__all__ = [
    "ConfusionCounts",
    "RocPoint",
    "KeyBit",
    "Decision",
    "classify",
    "midpoint_threshold",
    "confusion_counts",
    "error_probability",
    "roc_curve",
    "auc",
    "decode_key",
    "decode_key_from_rates",
    "hybrid_decide",
    "hybrid_decode_key",
    "key_string",
    "key_report",
    "write_roc_csv",
    "write_key",
]

STRATEGY_FIELDS = {"mean": "mean_signal", "R": "R"}


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int
    fp: int
    tn: int
    fn: int

    def __post_init__(self):
        if min(self.tp, self.fp, self.tn, self.fn) < 0:
            raise ParameterError("confusion counts must be non-negative")

    def _rate(self, num, den, what):
        if den == 0:
            raise UndefinedStatisticError(f"{what} undefined: class is empty")
        return num / den

    @property
    def tpr(self) -> float:
        return self._rate(self.tp, self.tp + self.fn, "TPR")

    @property
    def fnr(self) -> float:
        return self._rate(self.fn, self.tp + self.fn, "FNR")

    @property
    def fpr(self) -> float:
        return self._rate(self.fp, self.fp + self.tn, "FPR")

    @property
    def tnr(self) -> float:
        return self._rate(self.tn, self.fp + self.tn, "TNR")


@dataclass(frozen=True)
class RocPoint:
    threshold: float
    fpr: float
    tpr: float


@dataclass(frozen=True)
class KeyBit:
    truth: int
    decoded: int
    security_flag: bool = False

    @property
    def error(self) -> bool:
        return self.truth != self.decoded


class Decision(NamedTuple):
    bit: int
    security_flag: bool


def classify(x: float, x_th: float) -> int:
    return 0 if x < x_th else 1


def midpoint_threshold(x0: float, x1: float) -> float:
    return (x0 + x1) / 2


def confusion_counts(scores_bit0, scores_bit1, threshold: float) -> ConfusionCounts:
    s0 = np.asarray(scores_bit0, dtype=float)
    s1 = np.asarray(scores_bit1, dtype=float)
    fp = int(np.count_nonzero(s0 >= threshold))
    tp = int(np.count_nonzero(s1 >= threshold))
    return ConfusionCounts(tp=tp, fp=fp, tn=s0.size - fp, fn=s1.size - tp)


def error_probability(counts: ConfusionCounts) -> float:
    """Equal-prior misclassification probability ``(FNR + FPR) / 2``."""
    return (counts.fnr + counts.fpr) / 2


def roc_curve(scores_bit0, scores_bit1) -> list[RocPoint]:
    """Exact empirical ROC.

    Thresholds run from ``+inf`` through every distinct observed score down
    to ``-inf``, so the list starts at (0, 0), ends at (1, 1), and FPR/TPR
    never decrease along it.
    """
    s0 = np.sort(np.asarray(scores_bit0, dtype=float))
    s1 = np.sort(np.asarray(scores_bit1, dtype=float))
    if s0.size == 0 or s1.size == 0:
        raise UndefinedStatisticError("both score lists must be non-empty")
    thresholds = np.unique(np.concatenate([s0, s1]))[::-1]
    # count of scores >= th
    fp = s0.size - np.searchsorted(s0, thresholds, side="left")
    tp = s1.size - np.searchsorted(s1, thresholds, side="left")
    points = [RocPoint(math.inf, 0.0, 0.0)]
    points += [
        RocPoint(float(th), f / s0.size, t / s1.size)
        for th, f, t in zip(thresholds.tolist(), fp.tolist(), tp.tolist())
    ]
    points.append(RocPoint(-math.inf, 1.0, 1.0))
    return points


def auc(points: Sequence[RocPoint]) -> float:
    """Trapezoidal area under an ROC curve spanning FPR 0 to 1."""
    if len(points) < 2:
        raise ParameterError("ROC curve needs at least 2 points")
    pts = sorted(points, key=lambda p: (p.fpr, p.tpr))
    fpr = np.array([p.fpr for p in pts])
    tpr = np.array([p.tpr for p in pts])
    if fpr[0] != 0 or fpr[-1] != 1 or np.any((tpr < 0) | (tpr > 1)):
        raise ParameterError("ROC curve must span FPR from 0 to 1 with rates in [0, 1]")
    return float(np.sum(np.diff(fpr) * (tpr[1:] + tpr[:-1]) / 2))


def _threshold_for(strategy: str, thresholds) -> float:
    if isinstance(thresholds, Mapping):
        if strategy not in thresholds:
            raise ParameterError(f"no threshold given for strategy {strategy!r}")
        return float(thresholds[strategy])
    return float(thresholds)


def _statistic(stats, strategy: str) -> np.ndarray:
    try:
        name = STRATEGY_FIELDS[strategy]
    except KeyError:
        raise ParameterError(f"strategy must be 'mean' or 'R', got {strategy!r}") from None
    if isinstance(stats, BatchTable):
        return stats.column(name)
    return np.array([getattr(s, name) for s in stats], dtype=float)


def decode_key(
    truth_bits: Sequence[int], stats, strategy: str = "mean", thresholds=None
) -> list[KeyBit]:
    """Decode one batch per key bit with the chosen statistic.

    ``stats[i]`` is the batch Bob received for ``truth_bits[i]``.
    ``thresholds`` is a number or a mapping ``{"mean": ..., "R": ...}``.
    """
    if len(truth_bits) != len(stats):
        raise ParameterError(f"{len(truth_bits)} key bits but {len(stats)} batches")
    if thresholds is None:
        raise ParameterError("a decoding threshold is required")
    x = _statistic(stats, strategy)
    th = _threshold_for(strategy, thresholds)
    return [KeyBit(int(b), classify(v, th)) for b, v in zip(truth_bits, x.tolist())]


def decode_key_from_rates(
    truth_bits: Sequence[int], fpr: float, fnr: float, rng: np.random.Generator
) -> list[KeyBit]:
    """Rate-driven decoding: flip 0s with probability FPR and 1s with FNR."""
    if not (0 <= fpr <= 1 and 0 <= fnr <= 1):
        raise ParameterError("rates must lie in [0, 1]")
    truth = np.asarray(truth_bits, dtype=int)
    u = rng.random(truth.size)
    flip = np.where(truth == 1, u < fnr, u < fpr)
    decoded = np.where(flip, 1 - truth, truth)
    return [KeyBit(int(t), int(d)) for t, d in zip(truth.tolist(), decoded.tolist())]


def hybrid_decide(
    stats: BatchStats,
    mean_th: float,
    R_ref_0: float,
    R_ref_1: float,
    sigma_R: float,
    k: float = 2.0,
) -> Decision:
    """Decode by the signal mean, flag by the noise reduction factor.

    The batch is flagged when its ``R`` exceeds the reference of the decoded
    bit by more than ``k * sigma_R``, or when ``R >= 1`` (no sub-shot-noise
    correlation left).  Flagged bits are returned, not dropped.
    """
    if sigma_R <= 0 or k <= 0:
        raise ParameterError("sigma_R and k must be > 0")
    bit = classify(stats.mean_signal, mean_th)
    ref = R_ref_1 if bit else R_ref_0
    flagged = stats.R > ref + k * sigma_R or stats.R >= 1
    return Decision(bit, bool(flagged))


def hybrid_decode_key(
    truth_bits, stats, mean_th, R_ref_0, R_ref_1, sigma_R, k: float = 2.0
) -> list[KeyBit]:
    if len(truth_bits) != len(stats):
        raise ParameterError(f"{len(truth_bits)} key bits but {len(stats)} batches")
    out = []
    for b, s in zip(truth_bits, stats):
        d = hybrid_decide(s, mean_th, R_ref_0, R_ref_1, sigma_R, k)
        out.append(KeyBit(int(b), d.bit, d.security_flag))
    return out


def key_string(bits: Sequence[KeyBit], which: str = "decoded") -> str:
    return "".join(str(getattr(b, which)) for b in bits)


def key_report(bits: Sequence[KeyBit], width: int | None = None) -> dict:
    """Error/flag bookkeeping for a decoded key.

    ``width`` (default: square side when the length is a perfect square)
    gives the row length for rendering the key as an image.
    """
    n = len(bits)
    if width is None:
        side = math.isqrt(n)
        width = side if side * side == n else n
    truth = np.array([b.truth for b in bits])
    errors = [i for i, b in enumerate(bits) if b.error]
    fp = sum(1 for b in bits if b.truth == 0 and b.decoded == 1)
    fn = sum(1 for b in bits if b.truth == 1 and b.decoded == 0)
    n0 = int(np.count_nonzero(truth == 0))
    n1 = n - n0
    return {
        "length": n,
        "width": width,
        "alice": key_string(bits, "truth"),
        "bob": key_string(bits, "decoded"),
        "n_errors": len(errors),
        "error_rate": len(errors) / n if n else math.nan,
        "error_positions": errors,
        "false_positive_positions": [i for i in errors if bits[i].truth == 0],
        "false_negative_positions": [i for i in errors if bits[i].truth == 1],
        "fpr": fp / n0 if n0 else math.nan,
        "fnr": fn / n1 if n1 else math.nan,
        "flagged_positions": [i for i, b in enumerate(bits) if b.security_flag],
    }


def write_roc_csv(points: Sequence[RocPoint], path, comment: str | None = None) -> Path:
    path = Path(path)
    with path.open("w") as fh:
        if comment:
            fh.write(comment + "\n")
        fh.write("threshold,fpr,tpr\n")
        for p in points:
            fh.write(f"{p.threshold:.10g},{p.fpr:.10g},{p.tpr:.10g}\n")
    return path


def write_key(bits: Sequence[KeyBit], stem, extra: dict | None = None) -> tuple[Path, Path]:
    """Write ``<stem>.txt`` (Bob's bits) and ``<stem>.json`` (full report)."""
    stem = Path(stem)
    txt = stem.with_suffix(".txt")
    js = stem.with_suffix(".json")
    txt.write_text(key_string(bits) + "\n")
    report = key_report(bits)
    if extra:
        report.update(extra)
    js.write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")
    return txt, js
