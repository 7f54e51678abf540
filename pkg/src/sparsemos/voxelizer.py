"""Quantization of aligned scan windows into sparse 4D occupancy tensors."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from sparsemos.geometry import Scan
from sparsemos.sparse.coords import unique_coords

OCCUPANCY_FEATURE = 0.5


class DataError(ValueError):
    """Raised for malformed point data."""


@dataclass(frozen=True)
class VoxelConfig:
    """Spatial resolution ``delta_s`` (m) and temporal resolution ``delta_t`` (s).

    The time axis of the tensor is the scan position in the window; ``delta_t``
    records the physical spacing between those scans.
    """

    delta_s: float = 0.1
    delta_t: float = 0.1

    def __post_init__(self) -> None:
        if not self.delta_s > 0:
            raise ValueError(f"delta_s must be positive, got {self.delta_s}")
        if not self.delta_t > 0:
            raise ValueError(f"delta_t must be positive, got {self.delta_t}")


@dataclass(frozen=True, eq=False)
class SparseTensor4D:
    """Occupied ``(t, x, y, z)`` voxels in canonical lexicographic order.

    Attributes:
        coords: (S, 4) int64 site coordinates, unique and sorted.
        features: (S, C) per-site feature rows.
        point_map: (P,) site index of every input point, scans concatenated.
        sites_per_scan: (T,) number of sites in each time slice.
        points_per_scan: (T,) number of points each scan contributed.
    """

    coords: np.ndarray
    features: np.ndarray
    point_map: np.ndarray
    sites_per_scan: np.ndarray
    points_per_scan: np.ndarray

    def __post_init__(self) -> None:
        if self.features.shape[0] != self.coords.shape[0]:
            raise ValueError("features must have one row per site")
        if self.point_map.size and (self.point_map.min() < 0 or self.point_map.max() >= self.num_sites):
            raise ValueError("point_map references an invalid site")

    @property
    def num_sites(self) -> int:
        return self.coords.shape[0]

    @property
    def num_channels(self) -> int:
        return self.features.shape[1]

    def with_features(self, features: np.ndarray) -> "SparseTensor4D":
        return SparseTensor4D(self.coords, features, self.point_map, self.sites_per_scan, self.points_per_scan)

    def dump(self, path: str | Path) -> None:
        """Write one ``t x y z f0 ... fC-1`` line per site."""
        with open(path, "w") as fh:
            for c, f in zip(self.coords, self.features):
                fh.write(" ".join(str(int(v)) for v in c))
                fh.write(" " + " ".join(repr(float(v)) for v in f) + "\n")


def quantize(aligned: Sequence[Scan], cfg: VoxelConfig, dtype=np.float32) -> SparseTensor4D:
    """Voxelize an aligned, current-first window.

    Point ``p`` of the ``j``-th scan lands in site ``(j, floor(p / delta_s))``.
    Every occupied site carries the single feature 0.5.
    """
    blocks = []
    counts = []
    for j, scan in enumerate(aligned):
        pts = scan.points
        bad = ~np.isfinite(pts).all(axis=1)
        if bad.any():
            idx = int(np.flatnonzero(bad)[0])
            raise DataError(f"scan {j} point {idx} has non-finite coordinates {pts[idx].tolist()}")
        c = np.empty((pts.shape[0], 4), dtype=np.int64)
        c[:, 0] = j
        c[:, 1:] = np.floor(pts / cfg.delta_s).astype(np.int64)
        blocks.append(c)
        counts.append(pts.shape[0])
    all_c = np.concatenate(blocks) if blocks else np.zeros((0, 4), dtype=np.int64)
    coords, inverse = unique_coords(all_c)
    features = np.full((coords.shape[0], 1), OCCUPANCY_FEATURE, dtype=dtype)
    sites_per_scan = np.bincount(coords[:, 0], minlength=len(aligned)).astype(np.int64)
    return SparseTensor4D(
        coords=coords,
        features=features,
        point_map=inverse.astype(np.int64),
        sites_per_scan=sites_per_scan,
        points_per_scan=np.asarray(counts, dtype=np.int64),
    )


def devoxelize(site_scores: np.ndarray, tensor: SparseTensor4D) -> np.ndarray:
    """Give each point the score of the site it was quantized into."""
    scores = np.asarray(site_scores)
    if scores.shape[0] != tensor.num_sites:
        raise ValueError(f"expected {tensor.num_sites} site scores, got {scores.shape[0]}")
    return scores[tensor.point_map]


def split_by_scan(per_point: np.ndarray, aligned: Sequence[Scan]) -> list[np.ndarray]:
    sizes = [len(s) for s in aligned]
    per_point = np.asarray(per_point)
    if per_point.shape[0] != sum(sizes):
        raise ValueError(f"expected {sum(sizes)} per-point values, got {per_point.shape[0]}")
    return np.split(per_point, np.cumsum(sizes)[:-1]) if sizes else []
