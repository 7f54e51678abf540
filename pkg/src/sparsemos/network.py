"""Sparse 4D U-Net predicting a moving confidence for every occupied site.

Topology (``L`` levels, ``B`` residual blocks per level)::

    stem conv -> B blocks                                   level 0
    strided conv -> B blocks                                level 1 .. L-1
    transposed conv -> concat(encoder skip) -> B blocks     level L-2 .. 0
    1x1 conv -> softmax over (static, moving)

Residual block: conv-norm-relu, conv-norm, additive skip (1x1 conv-norm
projection when the width changes), relu.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from sparsemos.sparse.coords import CoordIndex
from sparsemos.sparse.kernel import KernelMap, KernelSpec, build_kernel_map, output_coords, transpose_map
from sparsemos.sparse.tape import Tape, Var
from sparsemos.voxelizer import SparseTensor4D

ModelParams = dict  # ordered layer-name -> array


@dataclass(frozen=True)
class NetworkConfig:
    encoder_channels: tuple[int, ...] = (8, 16, 32, 64)
    decoder_channels: tuple[int, ...] = (32, 16, 8)
    blocks_per_level: int = 1
    kernel: KernelSpec = field(default_factory=KernelSpec)
    down_stride: tuple[int, int, int, int] = (1, 2, 2, 2)
    in_channels: int = 1
    num_classes: int = 2
    seed: int = 0

    def __post_init__(self) -> None:
        enc = tuple(int(c) for c in self.encoder_channels)
        dec = tuple(int(c) for c in self.decoder_channels)
        if not enc:
            raise ValueError("encoder_channels must be non-empty")
        if len(dec) != len(enc) - 1:
            raise ValueError(f"decoder needs {len(enc) - 1} levels to mirror the encoder, got {len(dec)}")
        if self.blocks_per_level < 0:
            raise ValueError("blocks_per_level must be >= 0")
        if self.num_classes != 2:
            raise ValueError("only the two-class (static, moving) head is supported")
        if self.kernel.is_strided:
            raise ValueError("the base kernel must have unit stride; set down_stride instead")
        object.__setattr__(self, "encoder_channels", enc)
        object.__setattr__(self, "decoder_channels", dec)
        object.__setattr__(self, "down_stride", tuple(int(s) for s in self.down_stride))

    @property
    def levels(self) -> int:
        return len(self.encoder_channels)

    @property
    def down_kernel(self) -> KernelSpec:
        return dataclasses.replace(self.kernel, stride=self.down_stride)

    def to_dict(self) -> dict:
        return {
            "encoder_channels": list(self.encoder_channels),
            "decoder_channels": list(self.decoder_channels),
            "blocks_per_level": self.blocks_per_level,
            "kernel": self.kernel.to_dict(),
            "down_stride": list(self.down_stride),
            "in_channels": self.in_channels,
            "num_classes": self.num_classes,
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "NetworkConfig":
        d = dict(d)
        if "kernel" in d and isinstance(d["kernel"], dict):
            d["kernel"] = KernelSpec.from_dict(d["kernel"])
        for key in ("encoder_channels", "decoder_channels", "down_stride"):
            if key in d:
                d[key] = tuple(d[key])
        return cls(**d)


def desk_config(seed: int = 0) -> NetworkConfig:
    return NetworkConfig(seed=seed)


def tiny_config(seed: int = 0) -> NetworkConfig:
    return NetworkConfig(
        encoder_channels=(8, 16, 24),
        decoder_channels=(16, 8),
        blocks_per_level=0,
        seed=seed,
    )


# (name, kind, c_in, c_out); kind is conv, down, up or point (1x1)
def _layer_plan(cfg: NetworkConfig) -> list[tuple[str, str, int, int]]:
    plan: list[tuple[str, str, int, int]] = []
    enc, dec, nb = cfg.encoder_channels, cfg.decoder_channels, cfg.blocks_per_level

    def block(prefix: str, c_in: int, c_out: int) -> None:
        plan.append((f"{prefix}.conv1", "conv", c_in, c_out))
        plan.append((f"{prefix}.conv2", "conv", c_out, c_out))
        if c_in != c_out:
            plan.append((f"{prefix}.proj", "point", c_in, c_out))

    plan.append(("stem", "conv", cfg.in_channels, enc[0]))
    for b in range(nb):
        block(f"enc0.block{b}", enc[0], enc[0])
    for lvl in range(1, cfg.levels):
        plan.append((f"enc{lvl}.down", "down", enc[lvl - 1], enc[lvl]))
        for b in range(nb):
            block(f"enc{lvl}.block{b}", enc[lvl], enc[lvl])
    c_prev = enc[-1]
    for lvl in range(cfg.levels - 2, -1, -1):
        d = dec[cfg.levels - 2 - lvl]
        plan.append((f"dec{lvl}.up", "up", c_prev, d))
        c_cat = d + enc[lvl]
        if nb == 0:
            plan.append((f"dec{lvl}.fuse", "point", c_cat, d))
        for b in range(nb):
            block(f"dec{lvl}.block{b}", c_cat if b == 0 else d, d)
        c_prev = d
    plan.append(("head", "point", c_prev, cfg.num_classes))
    return plan


def _has_norm(name: str) -> bool:
    return name != "head"


def init_params(cfg: NetworkConfig, dtype=np.float32) -> ModelParams:
    """Fan-in scaled normal weights from ``cfg.seed``; norms start at gamma=1, beta=0."""
    rng = np.random.default_rng(cfg.seed)
    k_full = cfg.kernel.num_offsets
    params: ModelParams = {}
    for name, kind, c_in, c_out in _layer_plan(cfg):
        k = 1 if kind == "point" else k_full
        std = np.sqrt(2.0 / (k * c_in))
        params[f"{name}.weight"] = (rng.standard_normal((k, c_in, c_out)) * std).astype(dtype)
        if _has_norm(name):
            params[f"{name}.gamma"] = np.ones(c_out, dtype=dtype)
            params[f"{name}.beta"] = np.zeros(c_out, dtype=dtype)
            params[f"{name}.running_mean"] = np.zeros(c_out, dtype=dtype)
            params[f"{name}.running_var"] = np.ones(c_out, dtype=dtype)
        else:
            params[f"{name}.bias"] = np.zeros(c_out, dtype=dtype)
    return params


def is_buffer(name: str) -> bool:
    return name.endswith(".running_mean") or name.endswith(".running_var")


def trainable(params: ModelParams) -> list[str]:
    return [n for n in params if not is_buffer(n)]


def parameter_count(params: ModelParams) -> int:
    return int(sum(params[n].size for n in trainable(params)))


class CoordinateManager:
    """Per-tensor cache of level coordinates and kernel maps."""

    def __init__(self, coords: np.ndarray, cfg: NetworkConfig):
        self.cfg = cfg
        self.coords = [np.asarray(coords, dtype=np.int64)]
        for _ in range(1, cfg.levels):
            self.coords.append(output_coords(self.coords[-1], cfg.down_kernel))
        self._index = [CoordIndex(c) for c in self.coords]
        self._maps: dict[tuple, KernelMap] = {}

    def conv_map(self, level: int) -> KernelMap:
        key = ("conv", level)
        if key not in self._maps:
            c = self.coords[level]
            self._maps[key] = build_kernel_map(c, c, self.cfg.kernel, in_index=self._index[level])
        return self._maps[key]

    def point_map(self, level: int) -> KernelMap:
        key = ("point", level)
        if key not in self._maps:
            n = self.coords[level].shape[0]
            idx = np.arange(n, dtype=np.int64)
            self._maps[key] = KernelMap(np.zeros((1, 4), np.int64), ((idx, idx),), n, n)
        return self._maps[key]

    def down_map(self, level: int) -> KernelMap:
        """Map from ``level - 1`` to ``level``."""
        key = ("down", level)
        if key not in self._maps:
            self._maps[key] = build_kernel_map(
                self.coords[level - 1], self.coords[level], self.cfg.down_kernel, in_index=self._index[level - 1]
            )
        return self._maps[key]

    def up_map(self, level: int) -> KernelMap:
        """Transposed map from ``level + 1`` back to ``level``."""
        key = ("up", level)
        if key not in self._maps:
            self._maps[key] = transpose_map(self.down_map(level + 1))
        return self._maps[key]


def _check_params(params: ModelParams, cfg: NetworkConfig) -> None:
    k_full = cfg.kernel.num_offsets
    for name, kind, c_in, c_out in _layer_plan(cfg):
        w = params.get(f"{name}.weight")
        k = 1 if kind == "point" else k_full
        if w is None or w.shape != (k, c_in, c_out):
            got = None if w is None else w.shape
            raise ValueError(f"parameter {name}.weight has shape {got}, config expects {(k, c_in, c_out)}")


def forward_graph(
    params: ModelParams,
    tensor: SparseTensor4D,
    cfg: NetworkConfig,
    train: bool = False,
    record: Optional[bool] = None,
    cm: Optional[CoordinateManager] = None,
) -> tuple[Tape, Var]:
    """Run the network and return the tape plus the (S, 2) softmax output."""
    _check_params(params, cfg)
    if tensor.num_channels != cfg.in_channels:
        raise ValueError(f"tensor has {tensor.num_channels} feature channels, network expects {cfg.in_channels}")
    if tensor.num_sites == 0:
        raise ValueError("cannot run the network on an empty tensor")
    tape = Tape(params, train=train, record=train if record is None else record)
    cm = cm or CoordinateManager(tensor.coords, cfg)
    dtype = params["stem.weight"].dtype
    nb = cfg.blocks_per_level

    def cbr(x: Var, name: str, kmap: KernelMap, relu: bool = True) -> Var:
        y = tape.batchnorm(tape.conv(x, kmap, name), name)
        return tape.relu(y) if relu else y

    def block(x: Var, prefix: str, level: int) -> Var:
        y = cbr(x, f"{prefix}.conv1", cm.conv_map(level))
        y = cbr(y, f"{prefix}.conv2", cm.conv_map(level), relu=False)
        skip = x
        if f"{prefix}.proj.weight" in params:
            skip = cbr(x, f"{prefix}.proj", cm.point_map(level), relu=False)
        return tape.relu(tape.add(y, skip))

    x = Var(tensor.features.astype(dtype, copy=False))
    x = cbr(x, "stem", cm.conv_map(0))
    for b in range(nb):
        x = block(x, f"enc0.block{b}", 0)
    skips = [x]
    for lvl in range(1, cfg.levels):
        x = cbr(x, f"enc{lvl}.down", cm.down_map(lvl))
        for b in range(nb):
            x = block(x, f"enc{lvl}.block{b}", lvl)
        skips.append(x)
    for lvl in range(cfg.levels - 2, -1, -1):
        x = cbr(x, f"dec{lvl}.up", cm.up_map(lvl))
        x = tape.concat(x, skips[lvl])
        if nb == 0:
            x = cbr(x, f"dec{lvl}.fuse", cm.point_map(lvl))
        for b in range(nb):
            x = block(x, f"dec{lvl}.block{b}", lvl)
    logits = tape.conv(x, cm.point_map(0), "head")
    return tape, tape.softmax(logits)


def forward(params: ModelParams, tensor: SparseTensor4D, cfg: NetworkConfig) -> np.ndarray:
    """Eval-mode moving confidence in (0, 1) for every input site, in input order."""
    _, probs = forward_graph(params, tensor, cfg, train=False)
    return probs.data[:, 1]
