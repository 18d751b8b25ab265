"""Mask derivation, image compositing, and scene-level error metrics."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DegenerateInputError, ValidationError
from .sceneparam import StyleCode
from .trajectory import Trajectory
from .volren import RenderOutput


@dataclass
class CompositeResult:
    image: np.ndarray            # (H, W, 3)
    masks: list[np.ndarray]      # background first, then per instance
    winner: np.ndarray           # (H, W) source index, 0 = background


def derive_masks(bg: RenderOutput, buildings: list[RenderOutput]) -> list[np.ndarray]:
    """Binary source masks: per pixel, the qualifying source (alpha >= 0.5)
    with the smallest depth wins; the background wins when none qualifies.

    Ties go to the earliest source, so the result is deterministic.
    """
    shape = bg.depth.shape
    for b in buildings:
        if b.depth.shape != shape:
            raise ValidationError("render resolutions differ")
    depths = [np.where(src.alpha >= 0.5, src.depth, np.inf) for src in [bg] + list(buildings)]
    stack = np.stack(depths)
    winner = stack.argmin(axis=0)  # all-inf columns resolve to index 0 (background)
    return [(winner == k).astype(np.uint8) for k in range(len(depths))]


def composite(bg: RenderOutput, buildings: list[RenderOutput], masks: list[np.ndarray]) -> CompositeResult:
    """Masked sum of the background and building images."""
    sources = [bg] + list(buildings)
    if len(masks) != len(sources):
        raise ValidationError("need one mask per source")
    total = np.zeros(bg.depth.shape, np.int64)
    for m in masks:
        if m.shape != bg.depth.shape:
            raise ValidationError("mask resolution mismatch")
        total += m
    if not (total == 1).all():
        raise ValidationError("masks must partition the image")
    image = np.zeros_like(bg.color)
    winner = np.zeros(bg.depth.shape, np.int32)
    for k, (src, m) in enumerate(zip(sources, masks)):
        image += src.color * m[..., None]
        winner[m.astype(bool)] = k
    return CompositeResult(image=image, masks=list(masks), winner=winner)


def composite_channels(bg: RenderOutput, buildings: list[RenderOutput], winner: np.ndarray) -> RenderOutput:
    """Select every auxiliary channel from the winning source per pixel."""
    sources = [bg] + list(buildings)
    out = RenderOutput(
        color=bg.color.copy(),
        depth=bg.depth.copy(),
        alpha=bg.alpha.copy(),
        semantic=bg.semantic.copy(),
        instance=bg.instance.copy(),
    )
    for k, src in enumerate(sources[1:], start=1):
        sel = winner == k
        out.color[sel] = src.color[sel]
        out.depth[sel] = src.depth[sel]
        out.alpha[sel] = src.alpha[sel]
        out.semantic[sel] = src.semantic[sel]
        out.instance[sel] = src.instance[sel]
    return out


# ---------------------------------------------------------------------------
# Metrics
# ---------------------------------------------------------------------------


def _normalize(values: np.ndarray) -> np.ndarray:
    mean = values.mean()
    std = values.std()
    if std <= 0.0 or not np.isfinite(std):
        raise DegenerateInputError("depth map has zero variance on the evaluated pixels")
    return (values - mean) / std


def depth_error(d_pred: np.ndarray, d_ref: np.ndarray, mask: np.ndarray | None = None) -> float:
    """L2 distance between mean/variance-normalized depth maps.

    Normalization removes scale and shift, so affinely related maps score 0.
    """
    d_pred = np.asarray(d_pred, np.float64)
    d_ref = np.asarray(d_ref, np.float64)
    if d_pred.shape != d_ref.shape:
        raise ValidationError("depth map shapes differ")
    if mask is None:
        mask = np.isfinite(d_pred) & np.isfinite(d_ref)
    else:
        mask = np.asarray(mask, bool)
        if mask.shape != d_pred.shape:
            raise ValidationError("mask shape mismatch")
    if mask.sum() < 2:
        raise DegenerateInputError("need at least 2 valid pixels")
    a = _normalize(d_pred[mask])
    b = _normalize(d_ref[mask])
    return float(((a - b) ** 2).mean())


def camera_error(traj_a: Trajectory, traj_b: Trajectory, include_rotation: bool = False) -> float:
    """Scale-invariant L2 between corresponding camera centers.

    Both center sets are translated to a zero centroid and scaled to unit
    RMS radius before the mean squared distance is taken. The optional
    rotation term adds the mean squared geodesic angle (radians) between
    corresponding orientations; it is off by default.
    """
    if len(traj_a) != len(traj_b):
        raise ValidationError("trajectories must have equal pose counts")

    def normalize(tr: Trajectory) -> np.ndarray:
        c = tr.positions()
        c = c - c.mean(axis=0)
        rms = np.sqrt((c**2).sum(axis=1).mean())
        if rms <= 0.0:
            raise DegenerateInputError("camera centers are coincident")
        return c / rms

    a = normalize(traj_a)
    b = normalize(traj_b)
    err = float(((a - b) ** 2).sum(axis=1).mean())
    if include_rotation:
        total = 0.0
        for (pa, _), (pb, _) in zip(traj_a.frames, traj_b.frames):
            rel = pa.rotation @ pb.rotation.T
            cos = np.clip((np.trace(rel) - 1.0) / 2.0, -1.0, 1.0)
            total += float(np.arccos(cos)) ** 2
        err += total / len(traj_a)
    return err


def style_interpolate(z1: StyleCode, z2: StyleCode, t: float) -> StyleCode:
    """Linear interpolation between two style codes."""
    if z1.z.shape != z2.z.shape:
        raise ValidationError("style codes differ in length")
    if not 0.0 <= t <= 1.0:
        raise ValidationError("t must lie in [0, 1]")
    return StyleCode((1.0 - t) * z1.z + t * z2.z)
