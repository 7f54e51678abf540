"""Readers and writers for the KITTI odometry / SemanticKITTI file layout.

A sequence directory holds ``velodyne/NNNNNN.bin``, ``labels/NNNNNN.label``,
``poses.txt`` and ``calib.txt``; predictions go to ``predictions/NNNNNN.label``.
"""

from __future__ import annotations

import json
import logging
import os
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np

from sparsemos.geometry import IGNORE, MOVING, STATIC, Pose, Scan

log = logging.getLogger(__name__)

_CLASS_NAMES = {"static": STATIC, "moving": MOVING, "ignore": IGNORE}


class FormatError(ValueError):
    """Raised for truncated or malformed dataset files."""


@dataclass
class LabelRemap:
    """Maps raw semantic ids onto static / moving / ignore."""

    moving_ids: set[int] = field(default_factory=set)
    static_ids: set[int] = field(default_factory=set)
    ignore_ids: set[int] = field(default_factory=set)
    default: str = "static"
    static_out: int = 9
    moving_out: int = 251
    warn_unknown: bool = True
    name: str = "custom"

    def __post_init__(self) -> None:
        if self.default not in _CLASS_NAMES:
            raise ValueError(f"default must be one of {sorted(_CLASS_NAMES)}, got {self.default!r}")
        self.moving_ids, self.static_ids, self.ignore_ids = (
            set(map(int, self.moving_ids)),
            set(map(int, self.static_ids)),
            set(map(int, self.ignore_ids)),
        )

    @classmethod
    def from_dict(cls, d: dict) -> "LabelRemap":
        return cls(
            moving_ids=d.get("moving_ids", []),
            static_ids=d.get("static_ids", []),
            ignore_ids=d.get("ignore_ids", []),
            default=d.get("default", "static"),
            static_out=int(d.get("static_out", 9)),
            moving_out=int(d.get("moving_out", 251)),
            warn_unknown=bool(d.get("warn_unknown", True)),
            name=d.get("name", "custom"),
        )

    @classmethod
    def load(cls, path: str | os.PathLike) -> "LabelRemap":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))

    @classmethod
    def default_config(cls) -> "LabelRemap":
        text = resources.files("sparsemos.data").joinpath("default_remap.json").read_text()
        return cls.from_dict(json.loads(text))

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "moving_ids": sorted(self.moving_ids),
            "static_ids": sorted(self.static_ids),
            "ignore_ids": sorted(self.ignore_ids),
            "default": self.default,
            "static_out": self.static_out,
            "moving_out": self.moving_out,
            "warn_unknown": self.warn_unknown,
        }

    def apply(self, raw: np.ndarray) -> np.ndarray:
        raw = np.asarray(raw, dtype=np.int64)
        out = np.full(raw.shape, _CLASS_NAMES[self.default], dtype=np.int8)
        known = np.zeros(raw.shape, dtype=bool)
        for ids, cls_ in ((self.static_ids, STATIC), (self.moving_ids, MOVING), (self.ignore_ids, IGNORE)):
            if ids:
                m = np.isin(raw, list(ids))
                out[m] = cls_
                known |= m
        if self.warn_unknown and not known.all():
            unknown = np.unique(raw[~known])
            log.warning("label ids %s not in remap %r; treated as %s", unknown.tolist(), self.name, self.default)
        return out

    def encode(self, labels: np.ndarray) -> np.ndarray:
        labels = np.asarray(labels)
        out = np.where(labels == MOVING, self.moving_out, self.static_out).astype(np.uint32)
        out[labels == IGNORE] = 0
        return out


def read_scan_bin(path: str | os.PathLike, seq_index: int = 0, max_range: Optional[float] = None) -> Scan:
    """Load ``x y z intensity`` float32 records; intensity is dropped."""
    data = _read_bytes(path)
    if len(data) % 16:
        raise FormatError(f"{path}: size {len(data)} is not a multiple of 16 bytes")
    pts = np.frombuffer(data, dtype="<f4").reshape(-1, 4)[:, :3].astype(np.float64)
    scan = Scan(points=pts, seq_index=seq_index)
    if max_range is not None:
        scan = crop_range(scan, max_range)
    return scan


def write_scan_bin(path: str | os.PathLike, points: np.ndarray) -> None:
    pts = np.asarray(points).reshape(-1, 3)
    rec = np.zeros((pts.shape[0], 4), dtype="<f4")
    rec[:, :3] = pts
    Path(path).write_bytes(rec.tobytes())


def crop_range(scan: Scan, max_range: float) -> Scan:
    keep = np.linalg.norm(scan.points, axis=1) <= max_range
    labels = None if scan.labels is None else scan.labels[keep]
    return Scan(points=scan.points[keep], labels=labels, seq_index=scan.seq_index, meta=dict(scan.meta, keep=keep))


def read_raw_labels(path: str | os.PathLike) -> np.ndarray:
    data = _read_bytes(path)
    if len(data) % 4:
        raise FormatError(f"{path}: size {len(data)} is not a multiple of 4 bytes")
    return np.frombuffer(data, dtype="<u4") & 0xFFFF


def read_labels(path: str | os.PathLike, remap: Optional[LabelRemap] = None) -> np.ndarray:
    """Per-point STATIC / MOVING / IGNORE classes (low 16 bits are the semantic id)."""
    remap = remap or LabelRemap.default_config()
    return remap.apply(read_raw_labels(path))


def write_labels(path: str | os.PathLike, labels: np.ndarray, remap: Optional[LabelRemap] = None) -> None:
    remap = remap or LabelRemap.default_config()
    Path(path).write_bytes(remap.encode(labels).astype("<u4").tobytes())


def write_raw_labels(path: str | os.PathLike, raw: np.ndarray) -> None:
    Path(path).write_bytes(np.asarray(raw, dtype="<u4").tobytes())


def _parse_matrix_line(tokens: Sequence[str], where: str) -> np.ndarray:
    if len(tokens) != 12:
        raise FormatError(f"{where}: expected 12 values, got {len(tokens)}")
    try:
        vals = np.array([float(t) for t in tokens])
    except ValueError as exc:
        raise FormatError(f"{where}: {exc}") from None
    m = np.eye(4)
    m[:3, :] = vals.reshape(3, 4)
    return m


def _to_pose(m: np.ndarray, where: str) -> Pose:
    # text files carry ~7 significant digits; snap the rotation back onto SO(3)
    rot = m[:3, :3]
    err = np.max(np.abs(rot.T @ rot - np.eye(3)))
    if err > 1e-3:
        raise FormatError(f"{where}: rotation is not orthonormal (error {err:.2e})")
    u, _, vt = np.linalg.svd(rot)
    m = m.copy()
    m[:3, :3] = u @ vt
    return Pose(m)


def read_calib(path: str | os.PathLike) -> Pose:
    """The ``Tr`` (LiDAR to camera) transform from a KITTI calib file."""
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        key, _, rest = line.partition(":")
        if key.strip() == "Tr":
            return _to_pose(_parse_matrix_line(rest.split(), f"{path}:{lineno}"), f"{path}:{lineno}")
    raise FormatError(f"{path}: no 'Tr:' entry")


def read_poses(poses_path: str | os.PathLike, calib_path: Optional[str | os.PathLike] = None) -> list[Pose]:
    """World-frame sensor poses, one per scan.

    With a calibration file the camera-frame poses are conjugated into the
    LiDAR frame: ``inv(Tr) @ P @ Tr``.
    """
    tr = read_calib(calib_path) if calib_path is not None else None
    poses = []
    for lineno, line in enumerate(Path(poses_path).read_text().splitlines(), 1):
        if not line.strip():
            continue
        where = f"{poses_path}:{lineno}"
        m = _parse_matrix_line(line.split(), where)
        if tr is not None:
            m = tr.inverse().matrix @ m @ tr.matrix
        poses.append(_to_pose(m, where))
    return poses


def format_pose_line(pose: Pose) -> str:
    return " ".join(f"{v:.12e}" for v in pose.matrix[:3, :].reshape(-1))


def write_poses(path: str | os.PathLike, poses: Iterable[Pose]) -> None:
    Path(path).write_text("".join(format_pose_line(p) + "\n" for p in poses))


def write_identity_calib(path: str | os.PathLike) -> None:
    Path(path).write_text("Tr: " + format_pose_line(Pose.identity()) + "\n")


def _read_bytes(path: str | os.PathLike) -> bytes:
    try:
        return Path(path).read_bytes()
    except OSError as exc:
        raise OSError(f"cannot read {path}: {exc.strerror}") from exc


def frame_name(i: int) -> str:
    return f"{i:06d}"


class SequenceDir:
    """Lazy access to one KITTI-layout sequence directory."""

    def __init__(self, path: str | os.PathLike, remap: Optional[LabelRemap] = None, max_range: Optional[float] = None):
        self.path = Path(path)
        self.remap = remap or LabelRemap.default_config()
        self.max_range = max_range
        vel = self.path / "velodyne"
        if not vel.is_dir():
            raise FileNotFoundError(f"{vel} does not exist")
        self.frames = sorted(int(p.stem) for p in vel.glob("*.bin"))
        calib = self.path / "calib.txt"
        self.poses = read_poses(self.path / "poses.txt", calib if calib.exists() else None)
        if len(self.poses) < len(self.frames):
            raise FormatError(f"{self.path}: {len(self.poses)} poses for {len(self.frames)} scans")

    @property
    def name(self) -> str:
        return self.path.name

    def __len__(self) -> int:
        return len(self.frames)

    def has_labels(self) -> bool:
        return (self.path / "labels").is_dir()

    def scan(self, i: int, with_labels: bool = True) -> Scan:
        frame = self.frames[i]
        s = read_scan_bin(self.path / "velodyne" / f"{frame_name(frame)}.bin", seq_index=frame)
        labels = None
        label_path = self.path / "labels" / f"{frame_name(frame)}.label"
        if with_labels and label_path.exists():
            labels = read_labels(label_path, self.remap)
            if labels.shape[0] != len(s):
                raise FormatError(f"{label_path}: {labels.shape[0]} labels for {len(s)} points")
        s = Scan(points=s.points, labels=labels, seq_index=frame)
        if self.max_range is not None:
            s = crop_range(s, self.max_range)
        return s

    def pose(self, i: int) -> Pose:
        return self.poses[self.frames[i]]
