"""Model checkpoints: a weight container plus a readable JSON sidecar."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from sparsemos import __version__
from sparsemos.network import ModelParams, NetworkConfig, _check_params
from sparsemos.sparse.serialize import WeightFormatError, load_weights, save_weights
from sparsemos.training import AdamState, TrainConfig

_ADAM_PREFIX = "adam."


@dataclass
class Checkpoint:
    params: ModelParams
    network: NetworkConfig
    train: TrainConfig
    epoch: int
    val_iou: float
    optimizer: Optional[AdamState] = None

    def meta(self) -> dict:
        return {
            "kind": "sparsemos-checkpoint",
            "tool_version": __version__,
            "network": self.network.to_dict(),
            "train": self.train.to_dict(),
            "epoch": self.epoch,
            # strict JSON has no NaN; a run without validation stores null
            "val_iou": None if np.isnan(self.val_iou) else self.val_iou,
            "has_optimizer": self.optimizer is not None,
        }


def sidecar_path(path: str | Path) -> Path:
    return Path(path).with_suffix(".json")


def save_checkpoint(path: str | Path, ckpt: Checkpoint) -> None:
    tensors = dict(ckpt.params)
    if ckpt.optimizer is not None:
        tensors.update(ckpt.optimizer.to_arrays())
    meta = ckpt.meta()
    save_weights(path, tensors, meta)
    sidecar_path(path).write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")


def load_checkpoint(path: str | Path) -> Checkpoint:
    """Load and validate a checkpoint; incompatible files raise :class:`WeightFormatError`."""
    tensors, meta = load_weights(path)
    if meta.get("kind") != "sparsemos-checkpoint":
        raise WeightFormatError(f"{path}: not a model checkpoint")
    try:
        net = NetworkConfig.from_dict(meta["network"])
        train = TrainConfig.from_dict(meta["train"])
    except (KeyError, TypeError, ValueError) as exc:
        raise WeightFormatError(f"{path}: unreadable configuration ({exc})") from exc
    params = {k: v for k, v in tensors.items() if not k.startswith(_ADAM_PREFIX)}
    try:
        _check_params(params, net)
    except ValueError as exc:
        raise WeightFormatError(f"{path}: {exc}") from exc
    opt = None
    if meta.get("has_optimizer"):
        opt = AdamState.from_arrays({k: v for k, v in tensors.items() if k.startswith(_ADAM_PREFIX)})
    val = meta.get("val_iou")
    return Checkpoint(params, net, train, int(meta["epoch"]), float("nan") if val is None else float(val), opt)


def copy_params(params: ModelParams) -> ModelParams:
    return {k: np.array(v, copy=True) for k, v in params.items()}
