"""Confusion accounting and IoU for the moving class."""

from __future__ import annotations

from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Mapping, Optional

import numpy as np

from sparsemos.geometry import MOVING


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int = 0
    fp: int = 0
    fn: int = 0
    tn: int = 0
    ignored: int = 0

    def __post_init__(self) -> None:
        if min(self.tp, self.fp, self.fn, self.tn, self.ignored) < 0:
            raise ValueError("confusion counts must be non-negative")

    def __add__(self, other: "ConfusionCounts") -> "ConfusionCounts":
        return ConfusionCounts(
            self.tp + other.tp,
            self.fp + other.fp,
            self.fn + other.fn,
            self.tn + other.tn,
            self.ignored + other.ignored,
        )

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.fn + self.tn + self.ignored

    def to_dict(self) -> dict:
        return asdict(self)


def accumulate(pred: np.ndarray, gt: np.ndarray, ignore: Optional[np.ndarray] = None) -> ConfusionCounts:
    """Count moving-class decisions; ``pred`` and ``gt`` hold per-point classes."""
    pred = np.asarray(pred).reshape(-1)
    gt = np.asarray(gt).reshape(-1)
    if pred.shape != gt.shape:
        raise ValueError(f"prediction length {pred.shape[0]} != ground truth length {gt.shape[0]}")
    valid = np.ones(gt.shape, bool) if ignore is None else ~np.asarray(ignore, bool).reshape(-1)
    if valid.shape != gt.shape:
        raise ValueError("ignore mask length does not match labels")
    p = (pred == MOVING) & valid
    g = (gt == MOVING) & valid
    tp = int(np.count_nonzero(p & g))
    fp = int(np.count_nonzero(p & ~g))
    fn = int(np.count_nonzero(~p & g))
    n_valid = int(np.count_nonzero(valid))
    return ConfusionCounts(tp=tp, fp=fp, fn=fn, tn=n_valid - tp - fp - fn, ignored=gt.shape[0] - n_valid)


def iou_mos(c: ConfusionCounts, with_flag: bool = False):
    """``TP / (TP + FP + FN)``.

    An empty denominator (no moving points, none predicted) scores 1.0; pass
    ``with_flag=True`` to also get a boolean marking that case.
    """
    denom = c.tp + c.fp + c.fn
    empty = denom == 0
    value = 1.0 if empty else c.tp / denom
    return (value, empty) if with_flag else value


def format_report(total: ConfusionCounts, per_sequence: Optional[Mapping[str, ConfusionCounts]] = None) -> str:
    """Human-readable metric report."""
    lines = [f"iou_mos {iou_mos(total):.6f}"]
    lines.append(f"tp {total.tp} fp {total.fp} fn {total.fn} tn {total.tn} ignored {total.ignored}")
    for name, c in (per_sequence or {}).items():
        value, empty = iou_mos(c, with_flag=True)
        flag = " (no moving points)" if empty else ""
        lines.append(f"sequence {name}: iou_mos {value:.6f} tp {c.tp} fp {c.fp} fn {c.fn}{flag}")
    return "\n".join(lines) + "\n"


def write_report(path: str | Path, total: ConfusionCounts, per_sequence: Optional[Mapping[str, ConfusionCounts]] = None) -> None:
    """Machine-readable ``key=value`` metric file."""
    rows = [f"iou_mos={iou_mos(total):.12g}"]
    rows += [f"{k}={v}" for k, v in total.to_dict().items()]
    for name, c in (per_sequence or {}).items():
        value, empty = iou_mos(c, with_flag=True)
        rows.append(f"seq.{name}.iou_mos={value:.12g}")
        rows.append(f"seq.{name}.empty={int(empty)}")
        rows += [f"seq.{name}.{k}={v}" for k, v in c.to_dict().items()]
    Path(path).write_text("\n".join(rows) + "\n")


def read_report(path: str | Path) -> dict[str, str]:
    out = {}
    for line in Path(path).read_text().splitlines():
        if "=" in line:
            k, _, v = line.partition("=")
            out[k] = v
    return out
