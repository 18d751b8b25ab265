"""Dataset export: per-frame rasters, camera files, and a checksum manifest."""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

from .errors import ValidationError
from .geo import load_height_png, load_semantic_png, save_height_png, save_semantic_png
from .trajectory import Trajectory
from .volren import CameraIntrinsics, CameraPose

MANIFEST_NAME = "manifest.json"


@dataclass
class DatasetSample:
    index: int
    color: np.ndarray      # (H, W, 3) uint8
    semantic: np.ndarray   # (H, W) uint8
    instance: np.ndarray   # (H, W) int32
    pose: CameraPose
    intrinsics: CameraIntrinsics


def save_camera_txt(pose: CameraPose, intr: CameraIntrinsics, path: Path) -> None:
    rot = " ".join(repr(float(v)) for v in pose.rotation.ravel())
    pos = " ".join(repr(float(v)) for v in pose.position)
    k = f"{float(intr.fx)!r} {float(intr.fy)!r} {float(intr.cx)!r} {float(intr.cy)!r} {intr.width} {intr.height}"
    path.write_text(f"rotation: {rot}\nposition: {pos}\nintrinsics: {k}\n")


def load_camera_txt(path: Path) -> tuple[CameraPose, CameraIntrinsics]:
    fields = {}
    for line in path.read_text().splitlines():
        key, _, rest = line.partition(":")
        fields[key.strip()] = rest.split()
    rot = np.array([float(v) for v in fields["rotation"]]).reshape(3, 3)
    pos = np.array([float(v) for v in fields["position"]])
    k = fields["intrinsics"]
    intr = CameraIntrinsics(float(k[0]), float(k[1]), float(k[2]), float(k[3]), int(k[4]), int(k[5]))
    return CameraPose(rot, pos), intr


def _to_uint8(color: np.ndarray) -> np.ndarray:
    if color.dtype == np.uint8:
        return color
    return np.clip(np.rint(np.asarray(color, np.float64) * 255.0), 0, 255).astype(np.uint8)


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def export_dataset(
    trajectory: Trajectory,
    renders: list,
    annotations: list | None,
    out_dir: str | Path,
    config: dict | None = None,
) -> dict:
    """Write frames, cameras, and a manifest with per-file checksums.

    renders may hold RenderOutput instances or anything with an `image`
    attribute (composites). annotations, when given, provides per-frame
    (semantic, instance, depth) tuples; otherwise the render's own
    semantic/instance channels are exported.
    """
    if len(renders) != len(trajectory):
        raise ValidationError("render count does not match the trajectory")
    if annotations is not None and len(annotations) != len(trajectory):
        raise ValidationError("annotation count does not match the trajectory")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)

    files = []
    for idx, ((pose, intr), render) in enumerate(zip(trajectory.frames, renders)):
        color = render.image if hasattr(render, "image") else render.color
        if annotations is not None:
            sem, inst, _ = annotations[idx]
        else:
            sem, inst = render.semantic, render.instance
        if int(np.max(inst, initial=0)) > 0xFFFF:
            raise ValidationError("instance ids exceed the 16-bit PNG range")
        names = {
            "color": f"frame_{idx:05d}_color.png",
            "semantic": f"frame_{idx:05d}_semantic.png",
            "instance": f"frame_{idx:05d}_instance.png",
            "camera": f"frame_{idx:05d}_camera.txt",
        }
        Image.fromarray(_to_uint8(color)).save(out / names["color"])
        save_semantic_png(sem, out / names["semantic"])
        save_height_png(np.asarray(inst, np.int32), out / names["instance"])
        save_camera_txt(pose, intr, out / names["camera"])
        files.extend(names.values())

    manifest = {
        "frames": len(trajectory),
        "resolution": [trajectory.frames[0][1].width, trajectory.frames[0][1].height],
        "files": [{"name": n, "sha256": _sha256(out / n)} for n in sorted(files)],
        "config_hash": hashlib.sha256(
            json.dumps(config or {}, sort_keys=True).encode()
        ).hexdigest(),
    }
    (out / MANIFEST_NAME).write_text(json.dumps(manifest, indent=2))
    return manifest


def load_dataset(in_dir: str | Path) -> list[DatasetSample]:
    src = Path(in_dir)
    manifest = json.loads((src / MANIFEST_NAME).read_text())
    samples = []
    for idx in range(manifest["frames"]):
        pose, intr = load_camera_txt(src / f"frame_{idx:05d}_camera.txt")
        samples.append(
            DatasetSample(
                index=idx,
                color=np.asarray(Image.open(src / f"frame_{idx:05d}_color.png")),
                semantic=load_semantic_png(src / f"frame_{idx:05d}_semantic.png"),
                instance=load_height_png(src / f"frame_{idx:05d}_instance.png"),
                pose=pose,
                intrinsics=intr,
            )
        )
    return samples


def verify_manifest(in_dir: str | Path) -> bool:
    src = Path(in_dir)
    manifest = json.loads((src / MANIFEST_NAME).read_text())
    return all(_sha256(src / f["name"]) == f["sha256"] for f in manifest["files"])
