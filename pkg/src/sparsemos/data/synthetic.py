"""Labeled synthetic LiDAR streams for desk-scale training and evaluation.

The world holds static boxes (buildings, parked cars), a ground plane and
objects moving at constant velocity: boxes for vehicles and vertical
cylinders for pedestrians. A sensor drives through it and every scan
samples points on the surfaces within range, expressed in the sensor frame.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from sparsemos.data import kitti
from sparsemos.geometry import MOVING, STATIC, Pose, Scan

# raw semantic ids written to label files (SemanticKITTI numbering)
ID_GROUND = 40
ID_BUILDING = 50
ID_PARKED_CAR = 10
ID_PERSON = 30
ID_MOVING_CAR = 252
ID_MOVING_PERSON = 254


@dataclass
class SyntheticSceneConfig:
    arena_size: float = 40.0
    sensor_range: float = 16.0
    num_buildings: int = 5
    building_extent: tuple[float, float] = (3.0, 8.0)
    num_parked: int = 3
    num_static_people: int = 1
    num_moving_cars: int = 2
    num_moving_people: int = 2
    speed_range: tuple[float, float] = (0.5, 3.0)
    stop_and_go: bool = True
    sensor_speed: float = 1.5
    sensor_yaw_rate: float = 0.05
    scans_per_sequence: int = 20
    period: float = 0.1
    noise_sigma: float = 0.02
    surface_density: float = 12.0
    # beyond this range each scan keeps a point with probability (falloff / r)**2;
    # None keeps every point in range
    falloff_range: Optional[float] = 6.0
    ground_points: int = 400
    # draw fresh surface samples every scan instead of re-observing fixed ones
    resample: bool = False
    # round coordinates to float32 so KITTI .bin round-trips are bit-exact
    float32_points: bool = True
    seed: int = 0

    def __post_init__(self) -> None:
        lo, hi = self.speed_range
        if lo < 0 or hi < lo:
            raise ValueError(f"invalid speed range {self.speed_range}")
        if self.period <= 0:
            raise ValueError("period must be positive")
        if self.scans_per_sequence < 1:
            raise ValueError("scans_per_sequence must be >= 1")
        if self.noise_sigma < 0:
            raise ValueError("noise_sigma must be non-negative")

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "SyntheticSceneConfig":
        d = dict(d)
        for key in ("building_extent", "speed_range"):
            if key in d:
                d[key] = tuple(d[key])
        return cls(**d)


@dataclass
class _Body:
    kind: str  # "box" or "cylinder"
    size: np.ndarray  # box: (l, w, h); cylinder: (radius, height, 0)
    start: np.ndarray  # base center at t = 0, world frame
    heading: float
    speed: float
    stop_time: Optional[float]
    raw_moving: int
    raw_static: int
    local_points: Optional[np.ndarray] = None

    def position(self, t: float) -> np.ndarray:
        travel = self.speed * (t if self.stop_time is None else min(t, self.stop_time))
        return self.start + travel * np.array([np.cos(self.heading), np.sin(self.heading), 0.0])

    def is_moving(self, t: float) -> bool:
        return self.speed > 0 and (self.stop_time is None or t < self.stop_time)

    def area(self) -> float:
        if self.kind == "box":
            l, w, h = self.size
            return 2 * (l * h + w * h) + l * w
        r, h, _ = self.size
        return 2 * np.pi * r * h + np.pi * r * r


@dataclass
class SyntheticFrame:
    scan: Scan
    pose: Pose
    raw_labels: np.ndarray
    point_ids: np.ndarray


def _sample_surface(body: _Body, n: int, rng: np.random.Generator) -> np.ndarray:
    """Points on the body's surface in its local frame (base center origin, no bottom face)."""
    if body.kind == "box":
        l, w, h = body.size
        faces = np.array([l * h, l * h, w * h, w * h, l * w])
        which = rng.choice(5, size=n, p=faces / faces.sum())
        u, v = rng.random(n), rng.random(n)
        pts = np.empty((n, 3))
        x, y, z = (u - 0.5) * l, (v - 0.5) * w, v * h
        pts[:] = np.c_[x, y, z]
        m = which == 0
        pts[m] = np.c_[x[m], np.full(m.sum(), w / 2), v[m] * h]
        m = which == 1
        pts[m] = np.c_[x[m], np.full(m.sum(), -w / 2), v[m] * h]
        m = which == 2
        pts[m] = np.c_[np.full(m.sum(), l / 2), (u[m] - 0.5) * w, v[m] * h]
        m = which == 3
        pts[m] = np.c_[np.full(m.sum(), -l / 2), (u[m] - 0.5) * w, v[m] * h]
        m = which == 4
        pts[m] = np.c_[x[m], (v[m] - 0.5) * w, np.full(m.sum(), h)]
        return pts
    r, h, _ = body.size
    side = 2 * np.pi * r * h
    top = np.pi * r * r
    on_top = rng.random(n) < top / (side + top)
    ang = rng.uniform(0, 2 * np.pi, n)
    rad = np.where(on_top, r * np.sqrt(rng.random(n)), r)
    z = np.where(on_top, h, rng.random(n) * h)
    return np.c_[rad * np.cos(ang), rad * np.sin(ang), z]


def _local_to_world(body: _Body, pts: np.ndarray, t: float) -> np.ndarray:
    c, s = np.cos(body.heading), np.sin(body.heading)
    rot = np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])
    return pts @ rot.T + body.position(t)


def _sensor_pose(cfg: SyntheticSceneConfig, t: float, yaw0: float, start: np.ndarray) -> Pose:
    yaw = yaw0 + cfg.sensor_yaw_rate * t
    if abs(cfg.sensor_yaw_rate) > 1e-12:
        # arc with constant speed and yaw rate
        r = cfg.sensor_speed / cfg.sensor_yaw_rate
        dx = r * (np.sin(yaw) - np.sin(yaw0))
        dy = -r * (np.cos(yaw) - np.cos(yaw0))
    else:
        dx = cfg.sensor_speed * t * np.cos(yaw0)
        dy = cfg.sensor_speed * t * np.sin(yaw0)
    return Pose.from_yaw(yaw, start + np.array([dx, dy, 0.0]))


SENSOR_HEIGHT = 1.7


def _build_world(cfg: SyntheticSceneConfig, rng: np.random.Generator, sensor_path: np.ndarray) -> list[_Body]:
    half = cfg.arena_size / 2
    bodies: list[_Body] = []

    def place(min_clear: float) -> np.ndarray:
        # keep objects off the sensor's own path
        for _ in range(200):
            p = np.array([rng.uniform(-half, half), rng.uniform(-half, half), 0.0])
            if np.min(np.linalg.norm(sensor_path[:, :2] - p[:2], axis=1)) > min_clear:
                return p
        return p

    def near(min_clear: float, max_dist: float) -> np.ndarray:
        for _ in range(200):
            anchor = sensor_path[rng.integers(len(sensor_path))]
            ang = rng.uniform(0, 2 * np.pi)
            d = rng.uniform(min_clear, max_dist)
            p = anchor + d * np.array([np.cos(ang), np.sin(ang), 0.0])
            if np.min(np.linalg.norm(sensor_path[:, :2] - p[:2], axis=1)) > min_clear:
                return p
        return p

    lo, hi = cfg.building_extent
    for _ in range(cfg.num_buildings):
        size = np.array([rng.uniform(lo, hi), rng.uniform(lo, hi), rng.uniform(3.0, 6.0)])
        bodies.append(_Body("box", size, place(4.0 + size[:2].max() / 2), rng.uniform(0, np.pi), 0.0, None, ID_BUILDING, ID_BUILDING))
    for _ in range(cfg.num_parked):
        size = np.array([rng.uniform(3.8, 4.6), rng.uniform(1.6, 1.9), rng.uniform(1.4, 1.7)])
        bodies.append(_Body("box", size, near(3.0, 10.0), rng.uniform(0, 2 * np.pi), 0.0, None, ID_PARKED_CAR, ID_PARKED_CAR))
    for _ in range(cfg.num_static_people):
        size = np.array([rng.uniform(0.25, 0.35), rng.uniform(1.6, 1.9), 0.0])
        bodies.append(_Body("cylinder", size, near(2.0, 10.0), 0.0, 0.0, None, ID_PERSON, ID_PERSON))
    duration = cfg.scans_per_sequence * cfg.period
    slo, shi = cfg.speed_range
    for k in range(cfg.num_moving_cars):
        size = np.array([rng.uniform(3.8, 4.6), rng.uniform(1.6, 1.9), rng.uniform(1.4, 1.7)])
        stop = None
        if cfg.stop_and_go and k == 0:
            stop = rng.uniform(0.3, 0.7) * duration
        bodies.append(_Body("box", size, near(3.0, 10.0), rng.uniform(0, 2 * np.pi), rng.uniform(slo, shi), stop, ID_MOVING_CAR, ID_PARKED_CAR))
    for _ in range(cfg.num_moving_people):
        size = np.array([rng.uniform(0.25, 0.35), rng.uniform(1.6, 1.9), 0.0])
        bodies.append(_Body("cylinder", size, near(2.0, 10.0), rng.uniform(0, 2 * np.pi), rng.uniform(slo, max(slo, min(shi, 2.0))), None, ID_MOVING_PERSON, ID_PERSON))
    for b in bodies:
        b.start[2] = -SENSOR_HEIGHT
    return bodies


def generate_synthetic(cfg: SyntheticSceneConfig) -> list[SyntheticFrame]:
    """One deterministic sequence of labeled scans with exact sensor poses.

    Frames are returned in time order (oldest first), like files on disk.
    """
    rng = np.random.default_rng(cfg.seed)
    times = np.arange(cfg.scans_per_sequence) * cfg.period
    yaw0 = rng.uniform(0, 2 * np.pi)
    start = np.array([rng.uniform(-2, 2), rng.uniform(-2, 2), 0.0])
    poses = [_sensor_pose(cfg, t, yaw0, start) for t in times]
    path = np.array([p.translation for p in poses])
    bodies = _build_world(cfg, rng, path)
    if not cfg.resample:
        for b in bodies:
            b.local_points = _sample_surface(b, max(1, int(round(b.area() * cfg.surface_density))), rng)
        ground_fixed = _ground(rng, cfg, path)

    frames = []
    for f, (t, pose) in enumerate(zip(times, poses)):
        world, raw, ids = [], [], []
        sensor = pose.translation
        for bi, b in enumerate(bodies):
            if np.linalg.norm(b.position(t)[:2] - sensor[:2]) > cfg.sensor_range + 10:
                continue
            if b.local_points is not None:
                local = b.local_points
            else:
                local = _sample_surface(b, max(1, int(rng.poisson(b.area() * cfg.surface_density))), rng)
            w = _local_to_world(b, local, t)
            world.append(w)
            raw.append(np.full(len(w), b.raw_moving if b.is_moving(t) else b.raw_static))
            ids.append((bi + 1) * 1_000_000 + np.arange(len(w)))
        g = ground_fixed if not cfg.resample else _ground(rng, cfg, sensor[None, :])
        world.append(g)
        raw.append(np.full(len(g), ID_GROUND))
        ids.append(np.arange(len(g)))
        w = np.concatenate(world)
        raw_l = np.concatenate(raw).astype(np.uint32)
        pid = np.concatenate(ids).astype(np.int64)
        rng_xy = np.linalg.norm(w[:, :2] - sensor[:2], axis=1)
        keep = rng_xy <= cfg.sensor_range
        if cfg.falloff_range is not None:
            keep &= rng.random(len(w)) < (cfg.falloff_range / np.maximum(rng_xy, cfg.falloff_range)) ** 2
        w, raw_l, pid = w[keep], raw_l[keep], pid[keep]
        local = pose.inverse().apply(w)
        if cfg.noise_sigma > 0:
            local = local + rng.normal(0.0, cfg.noise_sigma, local.shape)
        if cfg.float32_points:
            local = local.astype(np.float32).astype(np.float64)
        labels = np.where(np.isin(raw_l, [ID_MOVING_CAR, ID_MOVING_PERSON]), MOVING, STATIC).astype(np.int8)
        scan = Scan(points=local, labels=labels, seq_index=f)
        frames.append(SyntheticFrame(scan=scan, pose=pose, raw_labels=raw_l, point_ids=pid))
    return frames


def _ground(rng: np.random.Generator, cfg: SyntheticSceneConfig, centers: np.ndarray) -> np.ndarray:
    """Ground samples covering discs of sensor range around ``centers``.

    ``ground_points`` is the count per disc area; overlapping discs share it.
    """
    radius = cfg.sensor_range
    travel = float(np.sum(np.linalg.norm(np.diff(centers[:, :2], axis=0), axis=1)))
    n = int(round(cfg.ground_points * (1 + 2 * travel / (np.pi * radius))))
    c = centers[rng.integers(len(centers), size=n)]
    r = radius * np.sqrt(rng.random(n))
    a = rng.uniform(0, 2 * np.pi, n)
    return np.c_[c[:, 0] + r * np.cos(a), c[:, 1] + r * np.sin(a), np.full(n, -SENSOR_HEIGHT)]


def write_sequence(frames: list[SyntheticFrame], seq_dir: str | Path) -> None:
    """Store frames in the KITTI odometry layout."""
    seq_dir = Path(seq_dir)
    (seq_dir / "velodyne").mkdir(parents=True, exist_ok=True)
    (seq_dir / "labels").mkdir(parents=True, exist_ok=True)
    for i, fr in enumerate(frames):
        kitti.write_scan_bin(seq_dir / "velodyne" / f"{kitti.frame_name(i)}.bin", fr.scan.points)
        kitti.write_raw_labels(seq_dir / "labels" / f"{kitti.frame_name(i)}.label", fr.raw_labels)
    kitti.write_poses(seq_dir / "poses.txt", [fr.pose for fr in frames])
    kitti.write_identity_calib(seq_dir / "calib.txt")

