"""Loss, optimizer, augmentation and the training loop."""

from __future__ import annotations

import dataclasses
import logging
import time
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from sparsemos.evaluation import ConfusionCounts, iou_mos
from sparsemos.fusion import FusionConfig, Strategy
from sparsemos.geometry import IGNORE, MOVING, Pose, Scan, align_sequence, relative_from_absolute
from sparsemos.network import ModelParams, NetworkConfig, forward_graph, init_params, trainable
from sparsemos.pipeline import evaluate_sequences, make_infer
from sparsemos.voxelizer import VoxelConfig, devoxelize, quantize

log = logging.getLogger(__name__)

BCE_EPS = 1e-7


@dataclass(frozen=True)
class AugmentConfig:
    rotation: bool = True
    shift: bool = True
    flip: bool = True
    jitter: bool = True
    scale: bool = True
    max_yaw: float = np.pi
    max_tilt: float = 0.02
    shift_sigma: float = 0.5
    jitter_sigma: float = 0.01
    scale_range: tuple[float, float] = (0.95, 1.05)

    @classmethod
    def disabled(cls) -> "AugmentConfig":
        return cls(rotation=False, shift=False, flip=False, jitter=False, scale=False)


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-4
    weight_decay: float = 1e-4
    max_epochs: int = 60
    samples_per_epoch: Optional[int] = None
    grad_accumulation: int = 1
    window_size: int = 10
    temporal_stride: int = 1
    delta_s: float = 0.1
    period: float = 0.1
    use_poses: bool = True
    augment: AugmentConfig = field(default_factory=AugmentConfig)
    seed: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8

    def __post_init__(self) -> None:
        if not (self.learning_rate > 0 and self.weight_decay >= 0):
            raise ValueError("learning_rate must be positive and weight_decay non-negative")
        if self.max_epochs < 1:
            raise ValueError("max_epochs must be >= 1")
        if self.window_size < 1 or self.temporal_stride < 1 or self.grad_accumulation < 1:
            raise ValueError("window_size, temporal_stride and grad_accumulation must be >= 1")

    @property
    def voxel(self) -> VoxelConfig:
        return VoxelConfig(delta_s=self.delta_s, delta_t=self.period * self.temporal_stride)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        d = dict(d)
        if "augment" in d and isinstance(d["augment"], dict):
            aug = dict(d["augment"])
            if "scale_range" in aug:
                aug["scale_range"] = tuple(aug["scale_range"])
            d["augment"] = AugmentConfig(**aug)
        return cls(**d)


def bce_loss(confidences: np.ndarray, labels: np.ndarray, ignore_mask: Optional[np.ndarray] = None):
    """Mean binary cross-entropy over non-ignored points.

    Returns ``(loss, grad)`` with ``grad`` w.r.t. ``confidences`` (zero on
    ignored points and wherever the clamp is active).
    """
    conf = np.asarray(confidences, dtype=np.float64)
    y = (np.asarray(labels) == MOVING).astype(np.float64)
    valid = np.ones(conf.shape, bool) if ignore_mask is None else ~np.asarray(ignore_mask, bool)
    n = int(valid.sum())
    grad = np.zeros_like(conf)
    if n == 0:
        return 0.0, grad
    p = np.clip(conf, BCE_EPS, 1 - BCE_EPS)
    ll = y * np.log(p) + (1 - y) * np.log1p(-p)
    loss = -float(ll[valid].sum()) / n
    inside = (conf > BCE_EPS) & (conf < 1 - BCE_EPS)
    g = -(y / p - (1 - y) / (1 - p)) / n
    grad[valid & inside] = g[valid & inside]
    return loss, grad


@dataclass
class AdamState:
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)

    @classmethod
    def zeros_like(cls, params: ModelParams) -> "AdamState":
        names = trainable(params)
        return cls(0, {n: np.zeros_like(params[n]) for n in names}, {n: np.zeros_like(params[n]) for n in names})

    def to_arrays(self) -> dict[str, np.ndarray]:
        out = {f"adam.m.{k}": v for k, v in self.m.items()}
        out.update({f"adam.v.{k}": v for k, v in self.v.items()})
        out["adam.step"] = np.array([self.step], dtype=np.int64)
        return out

    @classmethod
    def from_arrays(cls, arrays: dict[str, np.ndarray]) -> "AdamState":
        m = {k[len("adam.m.") :]: v.copy() for k, v in arrays.items() if k.startswith("adam.m.")}
        v = {k[len("adam.v.") :]: a.copy() for k, a in arrays.items() if k.startswith("adam.v.")}
        return cls(int(arrays["adam.step"][0]), m, v)


def adam_step(params: ModelParams, grads: dict[str, np.ndarray], state: AdamState, cfg: TrainConfig) -> None:
    """One bias-corrected Adam update in place; weight decay enters as an L2 gradient term."""
    state.step += 1
    t = state.step
    b1, b2 = cfg.beta1, cfg.beta2
    lr_t = cfg.learning_rate * np.sqrt(1 - b2**t) / (1 - b1**t)
    for name, m in state.m.items():
        p = params[name]
        g = grads.get(name)
        if g is None:
            g = np.zeros_like(p)
        if g.shape != p.shape:
            raise ValueError(f"gradient for {name} has shape {g.shape}, parameter has {p.shape}")
        if cfg.weight_decay:
            g = g + cfg.weight_decay * p
        v = state.v[name]
        m *= b1
        m += (1 - b1) * g
        v *= b2
        v += (1 - b2) * g * g
        eps_hat = cfg.adam_eps * np.sqrt(1 - b2**t)
        p -= (lr_t * m / (np.sqrt(v) + eps_hat)).astype(p.dtype)


def augment(scans: Sequence[Scan], cfg: AugmentConfig, seed: int) -> list[Scan]:
    """Apply one shared random similarity transform plus per-point jitter to a whole window."""
    rng = np.random.default_rng(seed)
    m = np.eye(3)
    if cfg.rotation:
        yaw = rng.uniform(-cfg.max_yaw, cfg.max_yaw)
        roll, pitch = rng.uniform(-cfg.max_tilt, cfg.max_tilt, 2)
        cz, sz = np.cos(yaw), np.sin(yaw)
        cx, sx = np.cos(roll), np.sin(roll)
        cy, sy = np.cos(pitch), np.sin(pitch)
        rz = np.array([[cz, -sz, 0], [sz, cz, 0], [0, 0, 1]])
        rx = np.array([[1, 0, 0], [0, cx, -sx], [0, sx, cx]])
        ry = np.array([[cy, 0, sy], [0, 1, 0], [-sy, 0, cy]])
        m = rz @ ry @ rx
    if cfg.flip:
        flips = np.where(rng.random(2) < 0.5, -1.0, 1.0)
        m = np.diag([flips[0], flips[1], 1.0]) @ m
    if cfg.scale:
        m = rng.uniform(*cfg.scale_range) * m
    shift = rng.normal(0.0, cfg.shift_sigma, 3) if cfg.shift else np.zeros(3)
    out = []
    for s in scans:
        pts = s.points @ m.T + shift
        if cfg.jitter and len(s):
            pts = pts + rng.normal(0.0, cfg.jitter_sigma, pts.shape)
        out.append(s.with_points(pts))
    return out


@dataclass
class Sequence4D:
    """An in-memory labeled sequence in time order (oldest first)."""

    name: str
    scans: list[Scan]
    poses: list[Pose]

    def __len__(self) -> int:
        return len(self.scans)


def window_frames(end: int, window_size: int, stride: int) -> list[int]:
    """Frame indices of the window ending at ``end``, current first, clipped at 0."""
    return [f for f in range(end, end - window_size * stride, -stride) if f >= 0]


def build_window(seq: Sequence4D, end: int, window_size: int, stride: int, use_poses: bool) -> list[Scan]:
    frames = window_frames(end, window_size, stride)
    scans = [seq.scans[f] for f in frames]
    rel = relative_from_absolute([seq.poses[f] for f in frames])
    return align_sequence(scans, rel, use_poses=use_poses)


def training_samples(data: Sequence[Sequence4D], cfg: TrainConfig) -> list[tuple[int, int]]:
    span = (cfg.window_size - 1) * cfg.temporal_stride
    return [(si, end) for si, seq in enumerate(data) for end in range(span, len(seq))]


def _step(params, net_cfg, cfg: TrainConfig, window: list[Scan]):
    tensor = quantize(window, cfg.voxel, dtype=params["stem.weight"].dtype)
    labels = np.concatenate([s.labels for s in window])
    tape, probs = forward_graph(params, tensor, net_cfg, train=True)
    conf = devoxelize(probs.data[:, 1], tensor)
    loss, g_pts = bce_loss(conf, labels, labels == IGNORE)
    g_sites = np.bincount(tensor.point_map, weights=g_pts, minlength=tensor.num_sites)
    g_probs = np.zeros_like(probs.data)
    g_probs[:, 1] = g_sites
    grads = tape.backward(probs, g_probs)
    return loss, grads


def validate(params, net_cfg: NetworkConfig, data: Sequence[Sequence4D], cfg: TrainConfig) -> ConfusionCounts:
    """Threshold single-pass predictions over disjoint windows of every sequence."""
    fusion = FusionConfig(
        window_size=cfg.window_size,
        temporal_stride=cfg.temporal_stride,
        strategy=Strategy.NON_OVERLAPPING,
        use_poses=cfg.use_poses,
    )
    infer = make_infer(params, net_cfg, cfg.voxel)
    seqs = {s.name: (s.scans, s.poses) for s in data}
    return evaluate_sequences(seqs, infer, fusion)[0]


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    val_iou: float
    best_val_iou: float
    seconds: float


def train(
    data: Sequence[Sequence4D],
    net_cfg: NetworkConfig,
    cfg: TrainConfig,
    val_data: Optional[Sequence[Sequence4D]] = None,
    params: Optional[ModelParams] = None,
    opt_state: Optional[AdamState] = None,
    start_epoch: int = 0,
    on_epoch: Optional[Callable[[EpochRecord, ModelParams, AdamState], None]] = None,
    best: Optional[tuple[float, ModelParams]] = None,
) -> tuple[ModelParams, list[EpochRecord]]:
    """Train and return the best-validation parameters with the epoch log.

    Without validation data the last epoch's parameters are returned. When
    resuming, pass the previous ``best`` as ``(val_iou, params)`` so the
    best-so-far tracking carries over.
    """
    samples = training_samples(data, cfg)
    if not samples:
        raise ValueError("training data yields no windows")
    params = params if params is not None else init_params(net_cfg)
    opt_state = opt_state or AdamState.zeros_like(params)
    records: list[EpochRecord] = []
    best_iou, best = (-1.0, params) if best is None else best
    best = {k: v.copy() for k, v in best.items()}
    for epoch in range(start_epoch, cfg.max_epochs):
        t0 = time.perf_counter()
        order = np.random.default_rng([cfg.seed, epoch]).permutation(len(samples))
        if cfg.samples_per_epoch is not None:
            order = order[: cfg.samples_per_epoch]
        losses = []
        acc: dict[str, np.ndarray] = {}
        for n, idx in enumerate(order, 1):
            si, end = samples[idx]
            window = build_window(data[si], end, cfg.window_size, cfg.temporal_stride, cfg.use_poses)
            aug_seed = int(np.random.SeedSequence([cfg.seed, epoch, int(idx)]).generate_state(1)[0])
            window = augment(window, cfg.augment, seed=aug_seed)
            loss, grads = _step(params, net_cfg, cfg, window)
            losses.append(loss)
            for k, g in grads.items():
                acc[k] = acc[k] + g if k in acc else g
            if n % cfg.grad_accumulation == 0 or n == len(order):
                k_acc = (n - 1) % cfg.grad_accumulation + 1
                adam_step(params, {k: g / k_acc for k, g in acc.items()}, opt_state, cfg)
                acc = {}
        val_iou = float("nan")
        if val_data:
            val_iou = iou_mos(validate(params, net_cfg, val_data, cfg))
            if val_iou > best_iou:
                best_iou = val_iou
                best = {k: v.copy() for k, v in params.items()}
        else:
            best = {k: v.copy() for k, v in params.items()}
        rec = EpochRecord(epoch, float(np.mean(losses)), val_iou, best_iou, time.perf_counter() - t0)
        records.append(rec)
        log.info("epoch %d loss %.4f val_iou %.4f best %.4f (%.1fs)", epoch, rec.train_loss, val_iou, best_iou, rec.seconds)
        if on_epoch is not None:
            on_epoch(rec, params, opt_state)
    return best, records
