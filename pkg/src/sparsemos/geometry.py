"""Rigid-body pose algebra and scan alignment.

Scans are indexed current-first: index 0 is the newest scan, index ``j``
lies ``j`` steps in the past. ``relative_poses[k]`` maps points from the
frame of scan ``k + 1`` into the frame of scan ``k``.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np

ORTHONORMAL_TOL = 1e-6


class PoseError(ValueError):
    """Raised when a matrix is not a valid rigid transform."""


@dataclass(frozen=True, eq=False)
class Pose:
    """A 4x4 homogeneous rigid transform (translation in meters)."""

    matrix: np.ndarray

    def __post_init__(self) -> None:
        m = np.array(self.matrix, dtype=np.float64)
        if m.shape != (4, 4):
            raise PoseError(f"pose must be 4x4, got shape {m.shape}")
        if not np.all(np.isfinite(m)):
            raise PoseError("pose contains non-finite entries")
        if not np.array_equal(m[3], [0.0, 0.0, 0.0, 1.0]):
            raise PoseError(f"pose bottom row must be [0,0,0,1], got {m[3].tolist()}")
        rot = m[:3, :3]
        if np.max(np.abs(rot.T @ rot - np.eye(3))) >= ORTHONORMAL_TOL:
            raise PoseError("rotation block is not orthonormal")
        if np.linalg.det(rot) <= 0:
            raise PoseError("rotation block has non-positive determinant")
        m.setflags(write=False)
        object.__setattr__(self, "matrix", m)

    @classmethod
    def identity(cls) -> "Pose":
        return cls(np.eye(4))

    @classmethod
    def from_rt(cls, rotation: np.ndarray, translation: Sequence[float]) -> "Pose":
        m = np.eye(4)
        m[:3, :3] = rotation
        m[:3, 3] = translation
        return cls(m)

    @classmethod
    def from_translation(cls, translation: Sequence[float]) -> "Pose":
        return cls.from_rt(np.eye(3), translation)

    @classmethod
    def from_yaw(cls, yaw: float, translation: Sequence[float] = (0.0, 0.0, 0.0)) -> "Pose":
        c, s = np.cos(yaw), np.sin(yaw)
        rot = np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])
        return cls.from_rt(rot, translation)

    @property
    def rotation(self) -> np.ndarray:
        return self.matrix[:3, :3]

    @property
    def translation(self) -> np.ndarray:
        return self.matrix[:3, 3]

    def inverse(self) -> "Pose":
        rot_t = self.rotation.T
        m = np.eye(4)
        m[:3, :3] = rot_t
        m[:3, 3] = -rot_t @ self.translation
        return Pose(m)

    def __matmul__(self, other: "Pose") -> "Pose":
        m = self.matrix @ other.matrix
        m[3] = (0.0, 0.0, 0.0, 1.0)
        return Pose(m)

    def apply(self, points: np.ndarray) -> np.ndarray:
        """Map an (M, 3) array of points through the transform."""
        pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
        return pts @ self.rotation.T + self.translation

    def __repr__(self) -> str:
        return f"Pose({self.matrix.tolist()!r})"


@dataclass(frozen=True, eq=False)
class Scan:
    """One LiDAR sweep.

    Attributes:
        points: (M, 3) float64 cartesian coordinates in meters.
        labels: optional (M,) int8 array with values from :data:`STATIC`,
            :data:`MOVING` or :data:`IGNORE`.
        seq_index: position ``j`` of the scan in its window (0 = current)
            or, for streams, the frame number.
    """

    points: np.ndarray
    labels: Optional[np.ndarray] = None
    seq_index: int = 0
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self) -> None:
        pts = np.asarray(self.points, dtype=np.float64)
        if pts.size == 0:
            pts = pts.reshape(0, 3)
        if pts.ndim != 2 or pts.shape[1] != 3:
            raise ValueError(f"points must be (M, 3), got {pts.shape}")
        pts.setflags(write=False)
        object.__setattr__(self, "points", pts)
        if self.labels is not None:
            lab = np.asarray(self.labels, dtype=np.int8).reshape(-1)
            if lab.shape[0] != pts.shape[0]:
                raise ValueError(
                    f"labels length {lab.shape[0]} does not match point count {pts.shape[0]}"
                )
            lab.setflags(write=False)
            object.__setattr__(self, "labels", lab)

    def __len__(self) -> int:
        return self.points.shape[0]

    def with_points(self, points: np.ndarray) -> "Scan":
        return replace(self, points=points)


# per-point label classes shared by every module
STATIC = 0
MOVING = 1
IGNORE = -1


def compose_to_current(relative_poses: Sequence[Pose], j: int) -> Pose:
    """Chain relative transforms so scan ``j`` maps into the current frame.

    Returns ``T_1^0 @ T_2^1 @ ... @ T_j^{j-1}``; ``j == 0`` gives identity.
    """
    if j < 0 or j > len(relative_poses):
        raise IndexError(f"scan index {j} out of range for {len(relative_poses)} relative poses")
    m = np.eye(4)
    for k in range(j):
        m = m @ relative_poses[k].matrix
    m[3] = (0.0, 0.0, 0.0, 1.0)
    return Pose(m)


def transform_scan(scan: Scan, pose: Pose) -> Scan:
    if len(scan) == 0:
        return scan
    return scan.with_points(pose.apply(scan.points))


def align_sequence(
    scans: Sequence[Scan], relative_poses: Sequence[Pose], use_poses: bool = True
) -> list[Scan]:
    """Bring every scan of a current-first window into the frame of scan 0.

    With ``use_poses=False`` the scans are returned untouched, which drops the
    ego-motion compensation entirely.
    """
    if len(relative_poses) != max(len(scans) - 1, 0):
        raise ValueError(
            f"expected {max(len(scans) - 1, 0)} relative poses for {len(scans)} scans, "
            f"got {len(relative_poses)}"
        )
    if not use_poses:
        return list(scans)
    out = []
    m = np.eye(4)
    for j, scan in enumerate(scans):
        if j > 0:
            m = m @ relative_poses[j - 1].matrix
        out.append(scan if j == 0 else transform_scan(scan, Pose(_rigid(m))))
    return out


def relative_from_absolute(absolute: Sequence[Pose]) -> list[Pose]:
    """Relative poses for a current-first list of world-frame sensor poses.

    Entry ``k`` is ``inv(absolute[k]) @ absolute[k + 1]``.
    """
    return [absolute[k].inverse() @ absolute[k + 1] for k in range(len(absolute) - 1)]


def _rigid(m: np.ndarray) -> np.ndarray:
    m = m.copy()
    m[3] = (0.0, 0.0, 0.0, 1.0)
    return m
