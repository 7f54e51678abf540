"""Kernel geometry and kernel-map construction for sparse 4D convolutions."""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from enum import Enum
from typing import Optional

import numpy as np

from sparsemos.sparse.coords import CoordIndex, encode, offset_key, unique_coords

# bump when the offset enumeration below changes; stored in weight files
OFFSET_ORDER_VERSION = 1


class KernelShape(str, Enum):
    HYPERCUBE = "hypercube"
    HYPERCROSS = "hypercross"


def _as4(v, name: str) -> tuple[int, int, int, int]:
    if isinstance(v, (int, np.integer)):
        v = (int(v),) * 4
    t = tuple(int(x) for x in v)
    if len(t) != 4:
        raise ValueError(f"{name} must have 4 entries, got {t}")
    return t  # type: ignore[return-value]


@dataclass(frozen=True)
class KernelSpec:
    """Kernel extent, stride and support shape over ``(t, x, y, z)``."""

    size: tuple[int, int, int, int] = (3, 3, 3, 3)
    stride: tuple[int, int, int, int] = (1, 1, 1, 1)
    shape: KernelShape = KernelShape.HYPERCUBE

    def __post_init__(self) -> None:
        size = _as4(self.size, "size")
        stride = _as4(self.stride, "stride")
        if any(s < 1 or s % 2 == 0 for s in size):
            raise ValueError(f"kernel sizes must be odd and >= 1, got {size}")
        if any(s < 1 for s in stride):
            raise ValueError(f"strides must be >= 1, got {stride}")
        object.__setattr__(self, "size", size)
        object.__setattr__(self, "stride", stride)
        object.__setattr__(self, "shape", KernelShape(self.shape))

    @property
    def num_offsets(self) -> int:
        if self.shape is KernelShape.HYPERCUBE:
            return int(np.prod(self.size))
        return 1 + sum(s - 1 for s in self.size)

    @property
    def is_strided(self) -> bool:
        return any(s > 1 for s in self.stride)

    def offsets(self) -> np.ndarray:
        """Kernel offsets, lexicographically sorted (time-major)."""
        ranges = [range(-(s // 2), s // 2 + 1) for s in self.size]
        if self.shape is KernelShape.HYPERCUBE:
            offs = list(itertools.product(*ranges))
        else:
            offs = [(0, 0, 0, 0)]
            for d, r in enumerate(ranges):
                for v in r:
                    if v != 0:
                        o = [0, 0, 0, 0]
                        o[d] = v
                        offs.append(tuple(o))
            offs.sort()
        return np.asarray(offs, dtype=np.int64).reshape(-1, 4)

    def to_dict(self) -> dict:
        return {"size": list(self.size), "stride": list(self.stride), "shape": self.shape.value}

    @classmethod
    def from_dict(cls, d: dict) -> "KernelSpec":
        return cls(size=tuple(d["size"]), stride=tuple(d["stride"]), shape=KernelShape(d["shape"]))


@dataclass(frozen=True, eq=False)
class KernelMap:
    """Per-offset ``(input_site, output_site)`` index pairs.

    ``pairs[k]`` is a tuple ``(in_idx, out_idx)`` of equal-length int64 arrays
    for ``offsets[k]``.
    """

    offsets: np.ndarray
    pairs: tuple[tuple[np.ndarray, np.ndarray], ...]
    num_in: int
    num_out: int

    @property
    def num_pairs(self) -> int:
        return int(sum(p[0].shape[0] for p in self.pairs))

    def triples(self) -> set[tuple[int, int, int]]:
        return {(k, int(i), int(o)) for k, (ii, oo) in enumerate(self.pairs) for i, o in zip(ii, oo)}


def output_coords(
    in_coords: np.ndarray,
    spec: KernelSpec,
    transposed: bool = False,
    target: Optional[np.ndarray] = None,
) -> np.ndarray:
    """Output site coordinates of a convolution.

    Stride 1 keeps the input sites; a strided convolution keeps the unique
    ``floor(c / stride)`` sites. A transposed convolution writes onto
    caller-supplied ``target`` sites, which must all have a parent among
    ``in_coords``.
    """
    in_coords = np.asarray(in_coords, dtype=np.int64).reshape(-1, 4)
    stride = np.asarray(spec.stride, dtype=np.int64)
    if transposed:
        if target is None:
            raise ValueError("transposed convolution requires target coordinates")
        target = np.asarray(target, dtype=np.int64).reshape(-1, 4)
        parents = np.floor_divide(target, stride)
        if CoordIndex(in_coords).lookup(parents).min(initial=0) < 0:
            raise ValueError("target coordinates are not compatible with the coarse input sites")
        return target
    if not spec.is_strided:
        return in_coords
    return unique_coords(np.floor_divide(in_coords, stride))[0]


def build_kernel_map(
    in_coords: np.ndarray,
    out_coords: np.ndarray,
    spec: KernelSpec,
    transposed: bool = False,
    in_index: Optional[CoordIndex] = None,
    out_index: Optional[CoordIndex] = None,
) -> KernelMap:
    """Pair sites under every kernel offset.

    Regular: ``(i, o)`` pairs under offset ``k`` iff ``in[i] == out[o] * stride + k``.
    Transposed: ``(i, o)`` pairs iff ``out[o] == in[i] * stride + k``.
    """
    in_coords = np.asarray(in_coords, dtype=np.int64).reshape(-1, 4)
    out_coords = np.asarray(out_coords, dtype=np.int64).reshape(-1, 4)
    stride = np.asarray(spec.stride, dtype=np.int64)
    offsets = spec.offsets()
    if transposed:
        base = in_coords * stride
        index = out_index or CoordIndex(out_coords)
        src = np.arange(in_coords.shape[0], dtype=np.int64)
    else:
        base = out_coords * stride
        index = in_index or CoordIndex(in_coords)
        src = np.arange(out_coords.shape[0], dtype=np.int64)
    base_keys = encode(base)
    pairs = []
    for off in offsets:
        hit = index.lookup_keys(base_keys + offset_key(off))
        mask = hit >= 0
        matched = hit[mask]
        own = src[mask]
        pairs.append((own, matched) if transposed else (matched, own))
    return KernelMap(offsets=offsets, pairs=tuple(pairs), num_in=in_coords.shape[0], num_out=out_coords.shape[0])


def transpose_map(kmap: KernelMap) -> KernelMap:
    """Swap input and output roles of every pair."""
    return KernelMap(
        offsets=kmap.offsets,
        pairs=tuple((oo, ii) for ii, oo in kmap.pairs),
        num_in=kmap.num_out,
        num_out=kmap.num_in,
    )

