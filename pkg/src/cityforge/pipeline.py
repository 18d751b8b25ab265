"""Full-frame rendering: background march, per-instance building marches,
and depth-based composition into one image.

The background sees the layout with building extrusions flattened to the
ground (footprints keep their class), so building pixels come exclusively
from the instance renders; each instance window is relabeled to facade/roof
and isolated so its render is transparent off the target. Sources are
folded with the same nearest-qualifying-depth rule the compositor uses.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .geo import SemanticClass
from .layout import (
    BUILDING_WINDOW_DIMS,
    BuildingInstance,
    CityLayout,
    LocalWindow,
    extract_window,
    relabel_instance_window,
)
from .rng import derive_seed
from .sceneparam import (
    HashGridConfig,
    HashGridTable,
    ProceduralGlobalEncoder,
    ProceduralLocalEncoder,
    StyleCode,
    building_feature,
    grid_lookup,
)
from .volren import (
    CameraIntrinsics,
    CameraPose,
    ProceduralField,
    RayBundle,
    RenderOutput,
    RenderSettings,
    make_rays,
    march,
)

DEFAULT_BG_GRID = HashGridConfig(
    levels=4, table_size=2**15, channels=4, base_resolution=16, max_resolution=512,
)


def flatten_buildings(window: LocalWindow) -> LocalWindow:
    """Background variant of a window: building columns drop to the ground."""
    hp = window.height_patch.copy()
    hp[window.semantic_patch == SemanticClass.BUILDINGS] = 0
    return replace(window, height_patch=hp)


def isolate_instance(window: LocalWindow) -> LocalWindow:
    """Keep only the relabeled target; everything else becomes empty space."""
    keep = window.semantic_patch == np.uint8(7)  # facade cells
    sp = np.where(keep, window.semantic_patch, np.uint8(SemanticClass.NULL))
    hp = np.where(keep, window.height_patch, 0).astype(window.height_patch.dtype)
    return replace(window, semantic_patch=sp, height_patch=hp)


class FeatureFactory:
    """Default scene-parameterization closures for the render pipeline.

    Background positions go through a seeded hash grid conditioned on the
    window's scene-level feature; building positions are lifted with the
    sinusoidal encoding of per-pixel encoder output around the instance.
    """

    def __init__(self, seed: int = 0, grid_config: HashGridConfig = DEFAULT_BG_GRID):
        self.seed = seed
        self.grid_config = grid_config
        self.table = HashGridTable.initialize(grid_config, seed=derive_seed(seed, "bg-grid"))
        self.global_encoder = ProceduralGlobalEncoder(depth=grid_config.window_dims[2])

    def background(self, window: LocalWindow):
        cfg = self.grid_config
        nh, nw, nd = window.dims
        cfg = replace(cfg, window_dims=(nh, nw, nd))
        f_g = self.global_encoder(window.height_patch, window.semantic_patch)
        hi = np.array([nw, nh, nd], np.float64) - 1e-6

        def closure(p):
            return grid_lookup(np.clip(p, 0.0, hi), f_g, self.table, cfg)

        return closure

    def building(self, window: LocalWindow, instance: BuildingInstance):
        # encode only the instance neighborhood; positions arrive relative to
        # the instance center, so shift into the patch frame before lookup
        margin = 8
        imin, jmin, imax, jmax = instance.bbox
        i0, j0 = imin - margin, jmin - margin
        nh = imax - imin + 1 + 2 * margin
        nw = jmax - jmin + 1 + 2 * margin
        ii0 = i0 - window.origin[0]
        jj0 = j0 - window.origin[1]
        hp = np.zeros((nh, nw), np.int32)
        sp = np.zeros((nh, nw), np.uint8)
        wi0, wj0 = max(ii0, 0), max(jj0, 0)
        wi1 = min(ii0 + nh, window.dims[0])
        wj1 = min(jj0 + nw, window.dims[1])
        hp[wi0 - ii0 : wi1 - ii0, wj0 - jj0 : wj1 - jj0] = window.height_patch[wi0:wi1, wj0:wj1]
        sp[wi0 - ii0 : wi1 - ii0, wj0 - jj0 : wj1 - jj0] = window.semantic_patch[wi0:wi1, wj0:wj1]
        encoder = ProceduralLocalEncoder(seed=derive_seed(self.seed, f"inst{instance.id}"))
        f_b = encoder(hp, sp)
        depth = window.dims[2]
        off = np.array([instance.center[1] - j0, instance.center[0] - i0, 0.0])
        lim = np.array([nw - 1.0, nh - 1.0, depth], np.float64)

        def closure(p):
            q = np.clip(p + off, 0.0, lim)
            return building_feature(q, f_b, depth)

        return closure


@dataclass
class FrameSources:
    """Composited frame plus the raw background render for diagnostics."""

    composite: RenderOutput
    background: RenderOutput
    visible_instances: list[int]


def _rays_hitting_aabb(origins, dirs, lo, hi, near):
    d = np.where(np.abs(dirs) < 1e-12, np.where(dirs >= 0, 1e-12, -1e-12), dirs)
    inv = 1.0 / d
    t1 = (lo - origins) * inv
    t2 = (hi - origins) * inv
    tmin = np.minimum(t1, t2).max(axis=1)
    tmax = np.maximum(t1, t2).min(axis=1)
    return tmax > np.maximum(tmin, near)


def render_city_frame(
    layout: CityLayout,
    instances: list[BuildingInstance],
    pose: CameraPose,
    intr: CameraIntrinsics,
    settings: RenderSettings | None = None,
    style_seed: int = 0,
    field=None,
    features: FeatureFactory | None = None,
    style_codes: dict[int, StyleCode] | None = None,
    bg_window_dims: tuple[int, int, int] | None = None,
    building_window_dims: tuple[int, int, int] = BUILDING_WINDOW_DIMS,
) -> FrameSources:
    settings = settings or RenderSettings()
    field = field or ProceduralField()
    H, W = layout.shape

    # background window around the optical target (or the layout center)
    fwd = pose.rotation[2]
    if fwd[2] < -1e-6:
        t_ground = -pose.position[2] / fwd[2]
        gx, gy = pose.position[0] + t_ground * fwd[0], pose.position[1] + t_ground * fwd[1]
    else:
        gx, gy = W / 2, H / 2
    center = (int(np.clip(gy, 0, H - 1)), int(np.clip(gx, 0, W - 1)))
    if bg_window_dims is None:
        side = max(H, W)
        bg_window_dims = (side, side, 640)
        center = (H // 2, W // 2)
    bg_window = flatten_buildings(extract_window(layout, center, bg_window_dims))
    bg_feats = features.background(bg_window) if features is not None else None
    rays = make_rays(intr, pose)
    bg = march(bg_window, rays, bg_feats, field, settings)

    h, w = rays.shape
    origins = rays.origins.reshape(-1, 3)
    dirs = rays.dirs.reshape(-1, 3)

    fg_depth = np.full(h * w, np.inf)
    fg_found = np.zeros(h * w, bool)
    fg_color = np.zeros((h * w, 3))
    fg_alpha = np.zeros(h * w)
    fg_sem = np.zeros(h * w, np.uint8)
    fg_inst = np.zeros(h * w, np.int32)

    visible = []
    for inst in instances:
        imin, jmin, imax, jmax = inst.bbox
        lo = np.array([jmin - 0.5, imin - 0.5, 0.0])
        hi = np.array([jmax + 1.5, imax + 1.5, inst.height_max + 1.5])
        sel = _rays_hitting_aabb(origins, dirs, lo, hi, settings.near)
        if not sel.any():
            continue
        visible.append(inst.id)
        window = extract_window(layout, inst.center, building_window_dims)
        window = isolate_instance(relabel_instance_window(window, inst, instances))
        b_feats = features.building(window, inst) if features is not None else None
        style = (style_codes or {}).get(inst.id) or StyleCode.seeded(derive_seed(style_seed, f"style{inst.id}"))
        shift = np.array([inst.center[1], inst.center[0], 0.0])
        sub = RayBundle(origins[sel].reshape(-1, 1, 3), dirs[sel].reshape(-1, 1, 3))
        # marching only the occupied extent skips the window's empty space
        tight = (
            np.array([jmin, imin, 0.0]),
            np.array([jmax + 1.0, imax + 1.0, inst.height_max + 1.0]),
        )
        out = march(window, sub, b_feats, field, settings, style=style, origin_shift=shift, aabb=tight)
        sidx = np.flatnonzero(sel)
        qual = out.alpha.ravel() >= 0.5
        better = qual & (out.depth.ravel() < fg_depth[sidx])
        tgt = sidx[better]
        fg_depth[tgt] = out.depth.ravel()[better]
        fg_color[tgt] = out.color.reshape(-1, 3)[better]
        fg_alpha[tgt] = out.alpha.ravel()[better]
        fg_sem[tgt] = out.semantic.ravel()[better]
        fg_inst[tgt] = out.instance.ravel()[better]
        fg_found[tgt] = True

    # same decision rule as derive_masks: nearest qualifying source, ties
    # and non-qualifying pixels go to the background
    bg_depth = np.where(bg.alpha.ravel() >= 0.5, bg.depth.ravel(), np.inf)
    use_fg = fg_found & (fg_depth < bg_depth)
    comp = RenderOutput(
        color=np.where(use_fg[:, None], fg_color, bg.color.reshape(-1, 3)).reshape(h, w, 3),
        depth=np.where(use_fg, fg_depth, bg.depth.ravel()).reshape(h, w),
        alpha=np.where(use_fg, fg_alpha, bg.alpha.ravel()).reshape(h, w),
        semantic=np.where(use_fg, fg_sem, bg.semantic.ravel()).reshape(h, w).astype(np.uint8),
        instance=np.where(use_fg, fg_inst, 0).reshape(h, w).astype(np.int32),
    )
    return FrameSources(composite=comp, background=bg, visible_instances=visible)
