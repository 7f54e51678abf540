"""Glue between the network and the streaming fusion: prediction over sequences."""

from __future__ import annotations

from typing import Callable, Mapping, Sequence

import numpy as np

from sparsemos.evaluation import ConfusionCounts, accumulate
from sparsemos.fusion import FusedScan, FusionConfig, run_stream
from sparsemos.geometry import IGNORE, Pose, Scan
from sparsemos.network import ModelParams, NetworkConfig, forward_graph
from sparsemos.voxelizer import VoxelConfig, devoxelize, quantize, split_by_scan


def predict_window(params: ModelParams, net_cfg: NetworkConfig, window: Sequence[Scan], voxel: VoxelConfig) -> list[np.ndarray]:
    """Per-scan moving confidences for an aligned, current-first window."""
    if sum(len(s) for s in window) == 0:
        return [np.zeros(0) for _ in window]
    tensor = quantize(window, voxel, dtype=params["stem.weight"].dtype)
    _, probs = forward_graph(params, tensor, net_cfg, train=False)
    conf = devoxelize(probs.data[:, 1].astype(np.float64), tensor)
    return split_by_scan(conf, window)


def make_infer(params: ModelParams, net_cfg: NetworkConfig, voxel: VoxelConfig) -> Callable[[list[Scan]], list[np.ndarray]]:
    return lambda window: predict_window(params, net_cfg, window, voxel)


def fuse_sequence(scans: Sequence[Scan], poses: Sequence[Pose], infer, cfg: FusionConfig) -> list[FusedScan]:
    return run_stream(zip(scans, poses), infer, cfg)


def score(results: Sequence[FusedScan]) -> ConfusionCounts:
    total = ConfusionCounts()
    for r in results:
        if r.scan.labels is None:
            raise ValueError(f"frame {r.frame} has no ground-truth labels")
        total = total + accumulate(r.labels, r.scan.labels, r.scan.labels == IGNORE)
    return total


def evaluate_sequences(
    sequences: Mapping[str, tuple[Sequence[Scan], Sequence[Pose]]],
    infer,
    cfg: FusionConfig,
) -> tuple[ConfusionCounts, dict[str, ConfusionCounts]]:
    per_seq = {}
    for name, (scans, poses) in sequences.items():
        per_seq[name] = score(fuse_sequence(scans, poses, infer, cfg))
    total = ConfusionCounts()
    for c in per_seq.values():
        total = total + c
    return total, per_seq
