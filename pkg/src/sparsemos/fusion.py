"""Receding-horizon scheduling and recursive binary Bayes fusion.

Every time a scan enters the stream the window of the last ``N`` selected
scans is re-predicted, so a scan collects up to ``N`` confidences before it
leaves the window. Those are fused per point in log-odds form::

    l_t = l_{t-1} + logit(xi_t) - logit(p0)

Point identity is positional: point ``i`` of a scan is the same measurement
in every window that contains the scan, so no data association is needed.

Log-odds live on a fixed 2**-40 grid. Sums on that grid are exact in
float64, which makes the fused value independent of update order.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass
from enum import Enum
from typing import Callable, Iterable, Optional, Sequence

import numpy as np

from sparsemos.geometry import MOVING, STATIC, Pose, Scan, align_sequence, relative_from_absolute

PROB_CLAMP = 1e-6
LOGODDS_QUANTUM = 2.0**-40

Infer = Callable[[list[Scan]], Sequence[np.ndarray]]


class ContractError(RuntimeError):
    """Raised when an inference callback returns mis-shaped output."""


class Strategy(str, Enum):
    RECEDING = "receding"
    NON_OVERLAPPING = "non_overlapping"


@dataclass(frozen=True)
class FusionConfig:
    prior: float = 0.25
    window_size: int = 10
    temporal_stride: int = 1
    strategy: Strategy = Strategy.RECEDING
    use_poses: bool = True

    def __post_init__(self) -> None:
        if not 0 < self.prior < 1:
            raise ValueError(f"prior must lie in (0, 1), got {self.prior}")
        if self.window_size < 1:
            raise ValueError("window_size must be >= 1")
        if self.temporal_stride < 1:
            raise ValueError("temporal_stride must be >= 1")
        object.__setattr__(self, "strategy", Strategy(self.strategy))

    def to_dict(self) -> dict:
        return {
            "prior": self.prior,
            "window_size": self.window_size,
            "temporal_stride": self.temporal_stride,
            "strategy": self.strategy.value,
            "use_poses": self.use_poses,
        }


def logit(p):
    p = np.clip(np.asarray(p, dtype=np.float64), PROB_CLAMP, 1 - PROB_CLAMP)
    return np.log(p / (1 - p))


def inv_logit(l):
    # exp(l) / (1 + exp(l)), evaluated without overflow
    l = np.asarray(l, dtype=np.float64)
    e = np.exp(-np.abs(l))
    return np.where(l >= 0, 1 / (1 + e), e / (1 + e))


def _grid(x):
    return np.round(np.asarray(x, dtype=np.float64) / LOGODDS_QUANTUM) * LOGODDS_QUANTUM


def prior_log_odds(prior: float) -> float:
    return float(_grid(logit(prior)))


def bayes_update(l_prev, xi, prior: float, observed=None):
    """One filter step; unobserved points keep ``l_prev`` bit-for-bit."""
    l_prev = np.asarray(l_prev, dtype=np.float64)
    innovation = _grid(logit(xi)) - prior_log_odds(prior)
    if observed is None:
        return l_prev + innovation
    return np.where(observed, l_prev + innovation, l_prev)


@dataclass
class LogOddsBuffer:
    """Fused state of one scan: per-point log-odds and observation counts."""

    log_odds: np.ndarray
    counts: np.ndarray
    finalized: bool = False

    @classmethod
    def fresh(cls, num_points: int, prior: float) -> "LogOddsBuffer":
        return cls(np.full(num_points, prior_log_odds(prior)), np.zeros(num_points, dtype=np.int64))

    def update(self, xi: np.ndarray, prior: float, observed: Optional[np.ndarray] = None) -> None:
        if self.finalized:
            raise RuntimeError("buffer already finalized")
        xi = np.asarray(xi)
        if xi.shape != self.log_odds.shape:
            raise ContractError(f"expected {self.log_odds.shape[0]} confidences, got {xi.shape}")
        self.log_odds = bayes_update(self.log_odds, xi, prior, observed)
        self.counts = self.counts + (1 if observed is None else np.asarray(observed, dtype=np.int64))

    def belief(self) -> np.ndarray:
        return inv_logit(self.log_odds)


def _decide(buffer: LogOddsBuffer) -> np.ndarray:
    return np.where((buffer.log_odds > 0) & (buffer.counts > 0), MOVING, STATIC).astype(np.int8)


def finalize(buffer: LogOddsBuffer) -> np.ndarray:
    """Moving iff the fused belief exceeds 0.5 (``l > 0``); never-observed points are static."""
    buffer.finalized = True
    return _decide(buffer)


@dataclass
class FusedScan:
    frame: int
    scan: Scan
    buffer: LogOddsBuffer

    @property
    def labels(self) -> np.ndarray:
        return _decide(self.buffer)

    @property
    def belief(self) -> np.ndarray:
        return self.buffer.belief()


@dataclass
class _Entry:
    frame: int
    scan: Scan
    pose: Pose
    buffer: LogOddsBuffer


class HorizonQueue:
    """The most recent ``(N - 1) * stride + 1`` frames, newest first.

    The prediction window is every ``stride``-th frame starting at the newest.
    """

    def __init__(self, window_size: int, stride: int):
        self.window_size = window_size
        self.stride = stride
        self.capacity = (window_size - 1) * stride + 1
        self._items: deque[_Entry] = deque()

    def __len__(self) -> int:
        return len(self._items)

    def push(self, entry: _Entry) -> Optional[_Entry]:
        self._items.appendleft(entry)
        if len(self._items) > self.capacity:
            return self._items.pop()
        return None

    def window(self) -> list[_Entry]:
        return list(self._items)[:: self.stride][: self.window_size]

    def drain(self) -> list[_Entry]:
        out = list(reversed(self._items))
        self._items.clear()
        return out


def _run_window(entries: Sequence[_Entry], infer: Infer, cfg: FusionConfig) -> list[np.ndarray]:
    scans = [e.scan for e in entries]
    rel = relative_from_absolute([e.pose for e in entries])
    aligned = align_sequence(scans, rel, use_poses=cfg.use_poses)
    out = list(infer(aligned))
    if len(out) != len(entries):
        raise ContractError(f"inference returned {len(out)} confidence vectors for a window of {len(entries)}")
    for e, conf in zip(entries, out):
        if np.shape(conf) != (len(e.scan),):
            raise ContractError(f"frame {e.frame}: expected {len(e.scan)} confidences, got shape {np.shape(conf)}")
    return out


class RecedingHorizon:
    """Streaming receding-horizon predictor with Bayes fusion.

    ``push`` returns the scans that left the window (finalized), ``flush``
    finalizes whatever is still queued. Results come oldest first.
    """

    def __init__(self, cfg: FusionConfig, infer: Infer):
        self.cfg = cfg
        self.infer = infer
        self.queue = HorizonQueue(cfg.window_size, cfg.temporal_stride)
        self._frame = 0

    def push(self, scan: Scan, pose: Pose) -> list[FusedScan]:
        done = receding_step(self.queue, scan, pose, self.infer, self.cfg, self._frame)
        self._frame += 1
        return [done] if done is not None else []

    def flush(self) -> list[FusedScan]:
        return [_finish(e) for e in self.queue.drain()]


def _finish(e: _Entry) -> FusedScan:
    e.buffer.finalized = True
    return FusedScan(e.frame, e.scan, e.buffer)


class NonOverlapping:
    """Disjoint windows: every scan is predicted exactly once, no fusion.

    Frames are grouped into blocks of ``N * stride``; each block holds
    ``stride`` interleaved windows of ``N`` scans.
    """

    def __init__(self, cfg: FusionConfig, infer: Infer):
        self.cfg = cfg
        self.infer = infer
        self._block: list[_Entry] = []
        self._frame = 0

    def push(self, scan: Scan, pose: Pose) -> list[FusedScan]:
        self._block.append(_Entry(self._frame, scan, pose, LogOddsBuffer.fresh(len(scan), self.cfg.prior)))
        self._frame += 1
        if len(self._block) == self.cfg.window_size * self.cfg.temporal_stride:
            return self._process()
        return []

    def flush(self) -> list[FusedScan]:
        return self._process() if self._block else []

    def _process(self) -> list[FusedScan]:
        block, self._block = self._block, []
        s = self.cfg.temporal_stride
        for phase in range(s):
            # newest frame of this phase first
            window = block[phase::s][::-1]
            if not window:
                continue
            for e, conf in zip(window, _run_window(window, self.infer, self.cfg)):
                e.buffer.update(conf, self.cfg.prior)
        return [_finish(e) for e in block]


def make_stream(cfg: FusionConfig, infer: Infer):
    if cfg.strategy is Strategy.RECEDING:
        return RecedingHorizon(cfg, infer)
    return NonOverlapping(cfg, infer)


def run_stream(stream: Iterable[tuple[Scan, Pose]], infer: Infer, cfg: FusionConfig) -> list[FusedScan]:
    """Process a whole stream and return one fused result per scan, in order."""
    fuser = make_stream(cfg, infer)
    out: list[FusedScan] = []
    for scan, pose in stream:
        out.extend(fuser.push(scan, pose))
    out.extend(fuser.flush())
    return sorted(out, key=lambda r: r.frame)


def receding_step(
    queue: HorizonQueue, new_scan: Scan, new_pose: Pose, infer: Infer, cfg: FusionConfig, frame: int
) -> Optional[FusedScan]:
    """Push a frame, re-predict the window, fuse, and return the evicted scan if any."""
    entry = _Entry(frame, new_scan, new_pose, LogOddsBuffer.fresh(len(new_scan), cfg.prior))
    evicted = queue.push(entry)
    window = queue.window()
    for e, conf in zip(window, _run_window(window, infer, cfg)):
        e.buffer.update(conf, cfg.prior)
    return _finish(evicted) if evicted is not None else None


def non_overlapping_run(stream: Iterable[tuple[Scan, Pose]], infer: Infer, cfg: FusionConfig) -> list[FusedScan]:
    cfg = FusionConfig(cfg.prior, cfg.window_size, cfg.temporal_stride, Strategy.NON_OVERLAPPING, cfg.use_poses)
    return run_stream(stream, infer, cfg)
