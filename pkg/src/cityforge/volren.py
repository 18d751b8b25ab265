"""Pinhole cameras and volumetric ray marching over layout windows.

World coordinates are (x, y, z) with x along raster columns, y along rows,
and z up in voxel units; cell (i, j) spans x in [j, j+1), y in [i, i+1).
Cameras follow the x-right / y-down / z-forward convention. The marcher
uses midpoint sampling with alpha compositing and composites residual
transmittance against a sky color.
"""

from __future__ import annotations

import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ValidationError
from .geo import SEMANTIC_PALETTE, SemanticClass
from .layout import FACADE, ROOF, CityLayout, LocalWindow

_EPS = 1e-12
_TILE_ROWS = 16  # fixed tiling so thread count never changes results


@dataclass(frozen=True)
class CameraIntrinsics:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0:
            raise ValidationError("focal lengths must be positive")
        if not (0 <= self.cx <= self.width and 0 <= self.cy <= self.height):
            raise ValidationError("principal point outside the image")


@dataclass(frozen=True)
class CameraPose:
    rotation: np.ndarray  # (3, 3) world -> camera
    position: np.ndarray  # camera center, world voxels

    def __post_init__(self):
        r = np.ascontiguousarray(self.rotation, np.float64)
        p = np.ascontiguousarray(self.position, np.float64)
        if r.shape != (3, 3) or p.shape != (3,):
            raise ValidationError("pose needs a 3x3 rotation and 3-vector position")
        if np.abs(r.T @ r - np.eye(3)).max() > 1e-9:
            raise ValidationError("rotation is not orthonormal")
        if np.linalg.det(r) < 0:
            raise ValidationError("rotation must be proper (det +1)")
        object.__setattr__(self, "rotation", r)
        object.__setattr__(self, "position", p)


@dataclass(frozen=True)
class Ray:
    origin: np.ndarray
    direction: np.ndarray
    near: float = 0.05
    far: float = np.inf

    def __post_init__(self):
        d = np.asarray(self.direction, np.float64)
        if abs(np.linalg.norm(d) - 1.0) > 1e-9:
            raise ValidationError("ray direction must be unit length")
        if not self.near < self.far:
            raise ValidationError("ray needs near < far")


@dataclass
class RayBundle:
    origins: np.ndarray  # (H, W, 3)
    dirs: np.ndarray     # (H, W, 3), unit

    @property
    def shape(self) -> tuple[int, int]:
        return self.dirs.shape[:2]


def make_rays(intr: CameraIntrinsics, pose: CameraPose) -> RayBundle:
    """One ray through each pixel center (u + 0.5, v + 0.5)."""
    u = np.arange(intr.width) + 0.5
    v = np.arange(intr.height) + 0.5
    uu, vv = np.meshgrid(u, v)
    d_cam = np.stack([(uu - intr.cx) / intr.fx, (vv - intr.cy) / intr.fy, np.ones_like(uu)], axis=-1)
    d_world = d_cam @ pose.rotation  # (R^T d) for row vectors
    d_world /= np.linalg.norm(d_world, axis=-1, keepdims=True)
    origins = np.broadcast_to(pose.position, d_world.shape).copy()
    return RayBundle(origins, d_world)


def project_points(points: np.ndarray, intr: CameraIntrinsics, pose: CameraPose) -> tuple[np.ndarray, np.ndarray]:
    """World points to pixel coordinates; returns (uv, camera depth z)."""
    pts = np.atleast_2d(points)
    pc = (pts - pose.position) @ pose.rotation.T
    z = pc[:, 2]
    with np.errstate(divide="ignore", invalid="ignore"):
        u = intr.fx * pc[:, 0] / z + intr.cx
        v = intr.fy * pc[:, 1] / z + intr.cy
    return np.stack([u, v], axis=1), z


@dataclass(frozen=True)
class RenderSettings:
    step_size: float = 0.5
    max_steps: int = 8192
    stop_transmittance: float = 1e-3
    sky_color: tuple[float, float, float] = (0.63, 0.76, 0.89)
    near: float = 0.05
    far: float | None = None
    tile_workers: int = 1
    record_transmittance: bool = False

    def __post_init__(self):
        if self.step_size <= 0:
            raise ValidationError("step_size must be positive")


@dataclass
class RenderOutput:
    color: np.ndarray      # (H, W, 3) in [0, 1]
    depth: np.ndarray      # (H, W), inf where nothing was hit
    alpha: np.ndarray      # (H, W) = 1 - final transmittance
    semantic: np.ndarray   # (H, W) class ids, null below alpha 0.5
    instance: np.ndarray   # (H, W) instance ids, 0 = none
    weight_total: np.ndarray | None = None       # sum of quadrature weights
    transmittance_log: np.ndarray | None = None  # (steps, H, W) when recorded


# ---------------------------------------------------------------------------
# Radiance fields
# ---------------------------------------------------------------------------


@dataclass
class MlpLayer:
    weight: np.ndarray  # (rows=in, cols=out)
    bias: np.ndarray
    activation: str = "none"  # none | relu | sigmoid


@dataclass
class MlpWeights:
    layers: list[MlpLayer]

    def __post_init__(self):
        prev = None
        for k, layer in enumerate(self.layers):
            w = np.asarray(layer.weight, np.float32)
            b = np.asarray(layer.bias, np.float32)
            if w.ndim != 2 or b.shape != (w.shape[1],):
                raise ValidationError(f"layer {k}: malformed weight/bias shapes")
            if not (np.isfinite(w).all() and np.isfinite(b).all()):
                raise ValidationError(f"layer {k}: non-finite parameters")
            if layer.activation not in ("none", "relu", "sigmoid"):
                raise ValidationError(f"layer {k}: unknown activation {layer.activation!r}")
            if prev is not None and w.shape[0] != prev:
                raise ValidationError(f"layer {k}: input dim {w.shape[0]} != previous output {prev}")
            prev = w.shape[1]

    def save(self, path: str | Path) -> None:
        codes = {"none": 0, "relu": 1, "sigmoid": 2}
        with open(path, "wb") as f:
            f.write(struct.pack("<I", len(self.layers)))
            for layer in self.layers:
                rows, cols = layer.weight.shape
                f.write(struct.pack("<III", rows, cols, codes[layer.activation]))
                f.write(np.asarray(layer.weight, "<f4").tobytes())
                f.write(np.asarray(layer.bias, "<f4").tobytes())

    @classmethod
    def load(cls, path: str | Path) -> "MlpWeights":
        names = {0: "none", 1: "relu", 2: "sigmoid"}
        raw = Path(path).read_bytes()
        (count,) = struct.unpack_from("<I", raw, 0)
        off = 4
        layers = []
        for _ in range(count):
            rows, cols, act = struct.unpack_from("<III", raw, off)
            off += 12
            w = np.frombuffer(raw, "<f4", rows * cols, off).reshape(rows, cols).copy()
            off += 4 * rows * cols
            b = np.frombuffer(raw, "<f4", cols, off).copy()
            off += 4 * cols
            layers.append(MlpLayer(w, b, names[act]))
        return cls(layers)


def mlp_forward(weights: MlpWeights, x: np.ndarray) -> np.ndarray:
    out = np.asarray(x, np.float64)
    if out.shape[-1] != weights.layers[0].weight.shape[0]:
        raise ValidationError(
            f"input dim {out.shape[-1]} != first layer {weights.layers[0].weight.shape[0]}"
        )
    for layer in weights.layers:
        out = out @ layer.weight + layer.bias
        if layer.activation == "relu":
            out = np.maximum(out, 0.0)
        elif layer.activation == "sigmoid":
            out = 1.0 / (1.0 + np.exp(-out))
    return out


def _palette_float() -> np.ndarray:
    pal = np.zeros((9, 3), np.float64)
    for code, rgb in SEMANTIC_PALETTE.items():
        if code < 9:
            pal[code] = np.array(rgb) / 255.0
    return pal


class ProceduralField:
    """Deterministic stand-in radiance field.

    Density is kappa on occupied voxels and zero elsewhere; color is the
    class palette modulated by a smooth function of the lookup feature and
    the style code, so different scenes and styles stay distinguishable.
    """

    density_needs_features = False

    def __init__(self, kappa: float = 8.0, seed: int = 0):
        self.kappa = kappa
        self.seed = seed
        self._palette = _palette_float()
        self._coef_cache: dict[int, np.ndarray] = {}

    def _coefs(self, dim: int) -> np.ndarray:
        if dim not in self._coef_cache:
            rng = np.random.default_rng(self.seed)
            self._coef_cache[dim] = rng.normal(scale=1.0, size=dim)
        return self._coef_cache[dim]

    def density(self, feats, labels) -> np.ndarray:
        return self.kappa * (np.asarray(labels) != SemanticClass.NULL)

    def color(self, feats, labels, style) -> np.ndarray:
        base = self._palette[np.asarray(labels)]
        if feats is not None:
            u = 0.5 + 0.5 * np.sin(np.asarray(feats, np.float64) @ self._coefs(feats.shape[-1]))
        else:
            u = 0.5
        s = 0.5 if style is None else 0.5 + 0.5 * float(np.tanh(style.z[:4].mean()))
        shade = 0.72 + 0.32 * u + 0.12 * (s - 0.5)
        return np.clip(base * np.asarray(shade)[..., None], 0.0, 1.0)


class MlpField:
    """Radiance field backed by tiny MLP heads.

    The density head consumes the lookup feature alone; the color head sees
    the feature, a one-hot class label, and optionally the style code.
    """

    def __init__(self, density_net: MlpWeights, color_net: MlpWeights, num_classes: int = 9):
        self.density_net = density_net
        self.color_net = color_net
        self.num_classes = num_classes

    def density(self, feats, labels) -> np.ndarray:
        if feats is None:
            raise ValidationError("MlpField needs a feature closure")
        out = mlp_forward(self.density_net, feats)
        return np.maximum(out[..., 0], 0.0)

    def color(self, feats, labels, style) -> np.ndarray:
        onehot = np.eye(self.num_classes)[np.asarray(labels)]
        parts = [np.asarray(feats, np.float64), onehot]
        if style is not None:
            parts.append(np.broadcast_to(style.z, onehot.shape[:-1] + style.z.shape))
        x = np.concatenate(parts, axis=-1)
        return np.clip(mlp_forward(self.color_net, x)[..., :3], 0.0, 1.0)


# ---------------------------------------------------------------------------
# Marching
# ---------------------------------------------------------------------------


def _aabb_intersect(origins, dirs, lo, hi):
    d = np.where(np.abs(dirs) < _EPS, np.where(dirs >= 0, _EPS, -_EPS), dirs)
    inv = 1.0 / d
    t1 = (lo - origins) * inv
    t2 = (hi - origins) * inv
    tmin = np.minimum(t1, t2).max(axis=-1)
    tmax = np.maximum(t1, t2).min(axis=-1)
    return tmin, tmax


def _march_rays(window, origins_local, dirs, lo_local, hi_local, patch_lo_local,
                features, field, settings, style):
    """March rays given in origin_shift-relative coordinates.

    (lo_local, hi_local) bound the marched box and patch_lo_local is the
    window's corner in the same frame; doing all arithmetic locally keeps
    renders bitwise translation invariant.
    """
    n = origins_local.shape[0]
    tmin, tmax = _aabb_intersect(origins_local, dirs, lo_local, hi_local)
    t_start = np.maximum(tmin, settings.near)
    t_end = np.minimum(tmax, settings.far if settings.far is not None else np.inf)
    delta = settings.step_size

    T = np.ones(n)
    weight_sum = np.zeros(n)
    depth_sum = np.zeros(n)
    color = np.zeros((n, 3))
    class_w = np.zeros((n, 9))
    t = t_start + 0.5 * delta
    active = (t < t_end) & np.isfinite(t)
    steps = 0
    t_log = [] if settings.record_transmittance else None

    # fields like ProceduralField derive density from labels alone, which
    # lets us defer the (expensive) feature lookup to contributing samples
    eager_feats = features is not None and getattr(field, "density_needs_features", True)

    while active.any() and steps < settings.max_steps:
        idx = np.flatnonzero(active)
        p = origins_local[idx] + t[idx, None] * dirs[idx]
        li = np.floor(p[:, 1] - patch_lo_local[1]).astype(np.int64)
        lj = np.floor(p[:, 0] - patch_lo_local[0]).astype(np.int64)
        lk = np.floor(p[:, 2] - patch_lo_local[2]).astype(np.int64)
        labels = window.classes_at(li, lj, lk)
        feats = features(p) if eager_feats else None
        sigma = np.asarray(field.density(feats, labels), np.float64)
        alpha = 1.0 - np.exp(-sigma * delta)
        w = T[idx] * alpha
        hit = w > 0.0
        if hit.any():
            sub = idx[hit]
            if feats is not None:
                feats_hit = feats[hit]
            elif features is not None:
                feats_hit = features(p[hit])
            else:
                feats_hit = None
            c = np.asarray(field.color(feats_hit, labels[hit], style), np.float64)
            color[sub] += w[hit, None] * c
            depth_sum[sub] += w[hit] * t[sub]
            weight_sum[sub] += w[hit]
            class_w[sub, labels[hit]] += w[hit]
        T[idx] = T[idx] * (1.0 - alpha)
        t[idx] += delta
        active[idx] = (t[idx] < t_end[idx]) & (T[idx] > settings.stop_transmittance)
        steps += 1
        if t_log is not None:
            t_log.append(T.copy())

    sky = np.asarray(settings.sky_color, np.float64)
    color += T[:, None] * sky
    alpha_out = 1.0 - T
    with np.errstate(invalid="ignore", divide="ignore"):
        depth = np.where(weight_sum > 0.0, depth_sum / np.maximum(weight_sum, _EPS), np.inf)
    semantic = np.where(alpha_out >= 0.5, class_w.argmax(axis=1), int(SemanticClass.NULL)).astype(np.uint8)
    instance = np.where(
        (semantic == FACADE) | (semantic == ROOF), np.int32(window.instance_id), np.int32(0)
    )
    return color, depth, alpha_out, semantic, instance, weight_sum, t_log


def march(
    window: LocalWindow,
    rays: RayBundle,
    features,
    field,
    settings: RenderSettings | None = None,
    style=None,
    origin_shift: np.ndarray | None = None,
    aabb: tuple[np.ndarray, np.ndarray] | None = None,
) -> RenderOutput:
    """Volumetric quadrature through a layout window.

    features is an optional closure mapping sample positions (n, 3) to
    feature vectors; positions are expressed relative to origin_shift
    (default: the window origin, or a building center for instance
    windows), which keeps renders translation invariant. aabb optionally
    restricts marching to a tighter world-space box, e.g. one building's
    extent inside a mostly empty instance window.
    """
    settings = settings or RenderSettings()
    h, w = rays.shape
    if origin_shift is None:
        origin_shift = np.array([window.origin[1], window.origin[0], 0.0])
    shift = np.asarray(origin_shift, np.float64)
    origins = rays.origins.reshape(-1, 3).astype(np.float64) - shift
    dirs = rays.dirs.reshape(-1, 3).astype(np.float64)
    win_lo = np.array([window.origin[1], window.origin[0], 0.0])
    if aabb is None:
        lo_world = win_lo
        nh, nw, nd = window.dims
        hi_world = win_lo + np.array([nw, nh, nd], np.float64)
    else:
        lo_world = np.asarray(aabb[0], np.float64)
        hi_world = np.asarray(aabb[1], np.float64)
    lo_local = lo_world - shift
    hi_local = hi_world - shift
    patch_lo_local = win_lo - shift  # voxel indexing stays window relative

    tiles = []
    for r0 in range(0, h, _TILE_ROWS):
        r1 = min(r0 + _TILE_ROWS, h)
        tiles.append((r0 * w, r1 * w))

    def run(span):
        a, b = span
        return _march_rays(
            window, origins[a:b], dirs[a:b], lo_local, hi_local, patch_lo_local,
            features, field, settings, style,
        )

    if settings.tile_workers > 1 and len(tiles) > 1:
        with ThreadPoolExecutor(max_workers=settings.tile_workers) as ex:
            results = list(ex.map(run, tiles))
    else:
        results = [run(s) for s in tiles]

    color = np.concatenate([r[0] for r in results]).reshape(h, w, 3)
    depth = np.concatenate([r[1] for r in results]).reshape(h, w)
    alpha = np.concatenate([r[2] for r in results]).reshape(h, w)
    semantic = np.concatenate([r[3] for r in results]).reshape(h, w)
    instance = np.concatenate([r[4] for r in results]).reshape(h, w)
    weight = np.concatenate([r[5] for r in results]).reshape(h, w)
    t_log = None
    if settings.record_transmittance:
        n_steps = max(len(r[6]) for r in results)
        t_log = np.ones((n_steps, h * w))
        at = 0
        for (a, b), r in zip(tiles, results):
            for s, snapshot in enumerate(r[6]):
                t_log[s, a:b] = snapshot
            for s in range(len(r[6]), n_steps):
                t_log[s, a:b] = r[6][-1] if r[6] else 1.0
        t_log = t_log.reshape(n_steps, h, w)
    return RenderOutput(color, depth, alpha, semantic, instance, weight, t_log)


def render_window(layout_window: LocalWindow, intr: CameraIntrinsics, pose: CameraPose, field,
                  settings: RenderSettings | None = None, features=None, style=None,
                  origin_shift=None) -> RenderOutput:
    """Convenience wrapper: camera in, image out."""
    return march(layout_window, make_rays(intr, pose), features, field, settings, style, origin_shift)


# ---------------------------------------------------------------------------
# Relighting
# ---------------------------------------------------------------------------


def surface_normals(depth: np.ndarray, intr: CameraIntrinsics, pose: CameraPose) -> np.ndarray:
    """Unit normals from a depth map, oriented toward the camera.

    Depth is the expected ray distance from march(); pixels without finite
    depth, or without finite neighbors, get a zero normal.
    """
    rays = make_rays(intr, pose)
    valid = np.isfinite(depth)
    pts = rays.origins + np.where(valid, depth, 0.0)[..., None] * rays.dirs
    h, w = depth.shape
    normals = np.zeros((h, w, 3))
    if h < 3 or w < 3:
        return normals
    dx = pts[1:-1, 2:] - pts[1:-1, :-2]
    dy = pts[2:, 1:-1] - pts[:-2, 1:-1]
    n = np.cross(dx, dy)
    norm = np.linalg.norm(n, axis=-1, keepdims=True)
    with np.errstate(invalid="ignore", divide="ignore"):
        n = np.where(norm > _EPS, n / norm, 0.0)
    ok = (
        valid[1:-1, 1:-1]
        & valid[1:-1, 2:]
        & valid[1:-1, :-2]
        & valid[2:, 1:-1]
        & valid[:-2, 1:-1]
    )
    to_cam = pose.position - pts[1:-1, 1:-1]
    flip = (n * to_cam).sum(axis=-1) < 0
    n = np.where(flip[..., None], -n, n)
    normals[1:-1, 1:-1] = np.where(ok[..., None], n, 0.0)
    return normals


def lambertian_shade(normals: np.ndarray, light_dir: np.ndarray) -> np.ndarray:
    """Cosine shading: max(0, n . -light); zero normals shade to 0."""
    l = np.asarray(light_dir, np.float64)
    l = l / np.linalg.norm(l)
    return np.clip(-(normals @ l), 0.0, 1.0)


SHADOW_STEP = 0.25
SHADOW_BIAS = 0.5


def shadow_map(layout: CityLayout, light_dir: np.ndarray, points: np.ndarray,
               step: float = SHADOW_STEP, bias: float = SHADOW_BIAS) -> np.ndarray:
    """Binary light visibility for world points.

    Samples p + (bias + n*step) * u toward the light (u = -light_dir) and
    reports 0 as soon as an occupied voxel is sampled, 1 if the ray rises
    above the skyline or leaves the raster.
    """
    l = np.asarray(light_dir, np.float64)
    l = l / np.linalg.norm(l)
    if l[2] >= 0:
        raise ValidationError("light must have a downward component")
    u = -l
    pts = np.atleast_2d(np.asarray(points, np.float64))
    n = pts.shape[0]
    zmax = float(layout.height.grid.max()) + 1.0
    H, W = layout.shape

    vis = np.ones(n, np.uint8)
    s = bias
    active = np.ones(n, bool)
    while active.any():
        idx = np.flatnonzero(active)
        p = pts[idx] + s * u
        out = (
            (p[:, 2] > zmax)
            | (p[:, 0] < 0.0)
            | (p[:, 0] >= W)
            | (p[:, 1] < 0.0)
            | (p[:, 1] >= H)
        )
        li = np.floor(p[:, 1]).astype(np.int64)
        lj = np.floor(p[:, 0]).astype(np.int64)
        lk = np.floor(p[:, 2]).astype(np.int64)
        occupied = (layout.classes_at(li, lj, lk) != SemanticClass.NULL) & ~out
        vis[idx[occupied]] = 0
        active[idx] = ~(out | occupied)
        s += step
    return vis
