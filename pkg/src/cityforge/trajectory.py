"""Camera trajectories and layout-projection annotations.

Orbit paths circle a layout point at a fixed radius and altitude (authored
in meters, converted to voxels through the raster's ground resolution);
keypoint paths interpolate positions and look-at targets linearly. The
annotation projector casts one ray per pixel against the implicit layout
volume and records the first occupied voxel.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ValidationError
from .geo import SemanticClass
from .layout import BuildingInstance, CityLayout, instance_label_map
from .volren import CameraIntrinsics, CameraPose, make_rays

ORBIT_RADIUS_RANGE_M = (125.0, 813.0)
ORBIT_ALTITUDE_RANGE_M = (112.0, 884.0)

EVAL_FRAME_COUNT = 40
EVAL_RESOLUTION = (960, 540)

WORLD_UP = np.array([0.0, 0.0, 1.0])


@dataclass(frozen=True)
class Trajectory:
    frames: tuple[tuple[CameraPose, CameraIntrinsics], ...]

    def __post_init__(self):
        if len(self.frames) < 2:
            raise ValidationError("a trajectory needs at least 2 poses")
        res = {(intr.width, intr.height) for _, intr in self.frames}
        if len(res) != 1:
            raise ValidationError("all trajectory frames must share one resolution")

    def __len__(self) -> int:
        return len(self.frames)

    def positions(self) -> np.ndarray:
        return np.stack([pose.position for pose, _ in self.frames])

    def to_json(self) -> dict:
        return {
            "frames": [
                {
                    "rotation": pose.rotation.tolist(),
                    "position": pose.position.tolist(),
                    "intrinsics": {
                        "fx": intr.fx, "fy": intr.fy, "cx": intr.cx, "cy": intr.cy,
                        "width": intr.width, "height": intr.height,
                    },
                }
                for pose, intr in self.frames
            ]
        }

    @classmethod
    def from_json(cls, obj: dict) -> "Trajectory":
        frames = []
        for f in obj["frames"]:
            k = f["intrinsics"]
            frames.append(
                (
                    CameraPose(np.array(f["rotation"], float), np.array(f["position"], float)),
                    CameraIntrinsics(k["fx"], k["fy"], k["cx"], k["cy"], int(k["width"]), int(k["height"])),
                )
            )
        return cls(tuple(frames))

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_json()))

    @classmethod
    def load(cls, path: str | Path) -> "Trajectory":
        return cls.from_json(json.loads(Path(path).read_text()))


def look_at_pose(position, target, up=WORLD_UP) -> CameraPose:
    """Zero-roll pose looking from position toward target (x right, y down,
    z forward); falls back to the +y up vector when looking straight along up."""
    position = np.asarray(position, np.float64)
    forward = np.asarray(target, np.float64) - position
    norm = np.linalg.norm(forward)
    if norm < 1e-12:
        raise ValidationError("look-at target coincides with the camera position")
    forward = forward / norm
    right = np.cross(forward, up)
    if np.linalg.norm(right) < 1e-9:
        right = np.cross(forward, np.array([0.0, 1.0, 0.0]))
    right /= np.linalg.norm(right)
    down = np.cross(forward, right)
    return CameraPose(np.stack([right, down, forward]), position)


@dataclass(frozen=True)
class OrbitSpec:
    center: tuple[float, float]  # (x, y) layout voxels
    radius_m: float
    altitude_m: float
    intrinsics: CameraIntrinsics
    frames: int = 60
    allow_range_override: bool = False

    def __post_init__(self):
        if self.frames < 2:
            raise ValidationError("an orbit needs at least 2 frames")
        if not self.allow_range_override:
            lo, hi = ORBIT_RADIUS_RANGE_M
            if not lo <= self.radius_m <= hi:
                raise ValidationError(f"orbit radius {self.radius_m} m outside the validated {lo}-{hi} m range")
            lo, hi = ORBIT_ALTITUDE_RANGE_M
            if not lo <= self.altitude_m <= hi:
                raise ValidationError(f"orbit altitude {self.altitude_m} m outside the validated {lo}-{hi} m range")


def orbit_trajectory(spec: OrbitSpec, layout: CityLayout) -> Trajectory:
    """Equally spaced cameras on a circle, each looking at the ground center."""
    H, W = layout.shape
    cx, cy = spec.center
    if not (0 <= cx < W and 0 <= cy < H):
        raise ValidationError("orbit center outside the layout")
    voxel_m = layout.semantic.config.voxel_size_m()
    r = spec.radius_m / voxel_m
    alt = spec.altitude_m / voxel_m
    target = np.array([cx, cy, 0.0])
    frames = []
    for k in range(spec.frames):
        theta = 2.0 * math.pi * k / spec.frames
        pos = np.array([cx + r * math.cos(theta), cy + r * math.sin(theta), alt])
        frames.append((look_at_pose(pos, target), spec.intrinsics))
    return Trajectory(tuple(frames))


def keypoint_trajectory(
    points: list[tuple[np.ndarray, np.ndarray]],
    steps_per_segment: int,
    intrinsics: CameraIntrinsics,
) -> Trajectory:
    """Piecewise-linear path through (position, look_at) keypoints."""
    if len(points) < 2:
        raise ValidationError("need at least 2 keypoints")
    if steps_per_segment < 1:
        raise ValidationError("steps_per_segment must be >= 1")
    pts = [(np.asarray(p, float), np.asarray(t, float)) for p, t in points]
    for a, b in zip(pts, pts[1:]):
        if np.allclose(a[0], b[0]) and np.allclose(a[1], b[1]):
            raise ValidationError("duplicate consecutive keypoints")
    frames = []
    for (p0, t0), (p1, t1) in zip(pts, pts[1:]):
        for k in range(steps_per_segment):
            s = k / steps_per_segment
            frames.append((look_at_pose(p0 + s * (p1 - p0), t0 + s * (t1 - t0)), intrinsics))
    frames.append((look_at_pose(pts[-1][0], pts[-1][1]), intrinsics))
    return Trajectory(tuple(frames))


def evaluation_preset(center: tuple[float, float], voxel_m: float | None = None) -> OrbitSpec:
    """The evaluation protocol: 40-frame orbit at 960x540."""
    w, h = EVAL_RESOLUTION
    intr = CameraIntrinsics(fx=800.0, fy=800.0, cx=w / 2, cy=h / 2, width=w, height=h)
    return OrbitSpec(center=center, radius_m=400.0, altitude_m=300.0, intrinsics=intr, frames=EVAL_FRAME_COUNT)


def project_annotations(
    layout: CityLayout,
    instances: list[BuildingInstance],
    pose: CameraPose,
    intr: CameraIntrinsics,
    step: float = 0.5,
    near: float = 0.05,
    depth_extent: float | None = None,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Hard first-hit projection of the layout through a camera.

    Returns per-pixel (semantic class, building instance id, ray depth);
    misses give (null, 0, inf). Sampling phase matches the volumetric
    marcher: midpoints of `step` intervals from the ray's box entry.
    """
    H, W = layout.shape
    label_map = instance_label_map(instances, (H, W))
    rays = make_rays(intr, pose)
    h, w = rays.shape
    origins = rays.origins.reshape(-1, 3)
    dirs = rays.dirs.reshape(-1, 3)
    n = origins.shape[0]

    ztop = float(layout.height.grid.max()) + 1.0 if depth_extent is None else float(depth_extent)
    lo = np.array([0.0, 0.0, 0.0])
    hi = np.array([W, H, ztop], np.float64)
    d = np.where(np.abs(dirs) < 1e-12, np.where(dirs >= 0, 1e-12, -1e-12), dirs)
    inv = 1.0 / d
    t1 = (lo - origins) * inv
    t2 = (hi - origins) * inv
    tmin = np.maximum(np.minimum(t1, t2).max(axis=1), near)
    tmax = np.maximum(t1, t2).min(axis=1)

    sem = np.zeros(n, np.uint8)
    inst = np.zeros(n, np.int32)
    depth = np.full(n, np.inf)
    t = tmin + 0.5 * step
    active = t < tmax
    while active.any():
        idx = np.flatnonzero(active)
        p = origins[idx] + t[idx, None] * dirs[idx]
        li = np.floor(p[:, 1]).astype(np.int64)
        lj = np.floor(p[:, 0]).astype(np.int64)
        lk = np.floor(p[:, 2]).astype(np.int64)
        cls = layout.classes_at(li, lj, lk)
        hit = cls != SemanticClass.NULL
        if hit.any():
            hidx = idx[hit]
            sem[hidx] = cls[hit]
            depth[hidx] = t[hidx]
            ii = np.clip(li[hit], 0, H - 1)
            jj = np.clip(lj[hit], 0, W - 1)
            owner = label_map[ii, jj]
            inst[hidx] = np.where(cls[hit] == SemanticClass.BUILDINGS, owner, 0)
        t[idx] += step
        active[idx] = (t[idx] < tmax[idx]) & ~hit
    return sem.reshape(h, w), inst.reshape(h, w), depth.reshape(h, w)
