"""Implicit 3D city layout.

A city is stored as the (semantic map, height field) pair; the 3D volume is
never materialized. A cell (i, j) occupies voxel layers k = 0..H(i, j) with
its map class, and empty space above is the null class. Local windows crop
the pair for rendering, and building instances are connected components of
the buildings class.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .errors import ValidationError
from .geo import HeightField, SemanticClass, SemanticMap

FACADE = 7  # building side voxels, only inside relabeled instance windows
ROOF = 8    # top-most occupied voxel layer of an instance

_FOUR_CONNECTED = np.array([[0, 1, 0], [1, 1, 1], [0, 1, 0]], dtype=np.int_)

BACKGROUND_WINDOW_DIMS = (1536, 1536, 640)
BUILDING_WINDOW_DIMS = (672, 672, 640)


@dataclass(frozen=True)
class CityLayout:
    semantic: SemanticMap
    height: HeightField

    def __post_init__(self):
        if self.semantic.grid.shape != self.height.grid.shape:
            raise ValidationError("semantic and height grids differ in shape")

    @property
    def shape(self) -> tuple[int, int]:
        return self.semantic.grid.shape

    def at(self, i: int, j: int, k: int) -> int:
        """Class at voxel (i, j, k); out-of-bounds cells read as null."""
        h, w = self.shape
        if not (0 <= i < h and 0 <= j < w) or k < 0:
            return int(SemanticClass.NULL)
        if k <= self.height.grid[i, j]:
            return int(self.semantic.grid[i, j])
        return int(SemanticClass.NULL)

    def classes_at(self, ii: np.ndarray, jj: np.ndarray, kk: np.ndarray) -> np.ndarray:
        """Vectorized layout query; invalid indices read as null."""
        h, w = self.shape
        ii = np.asarray(ii)
        jj = np.asarray(jj)
        kk = np.asarray(kk)
        inside = (ii >= 0) & (ii < h) & (jj >= 0) & (jj < w) & (kk >= 0)
        ic = np.clip(ii, 0, h - 1)
        jc = np.clip(jj, 0, w - 1)
        occupied = inside & (kk <= self.height.grid[ic, jc])
        return np.where(occupied, self.semantic.grid[ic, jc], np.uint8(SemanticClass.NULL))


def layout_at(layout: CityLayout, i: int, j: int, k: int) -> int:
    return layout.at(i, j, k)


@dataclass(frozen=True)
class LocalWindow:
    """Cropped (height, semantic) patches around a center cell.

    Area beyond the layout bounds is padded with (others, 0) so rays that
    leave the city still hit flat ground. Building windows additionally set
    instance_id and roof_on_top after relabeling.
    """

    origin: tuple[int, int]              # (i, j) of patch cell (0, 0) in layout coords
    dims: tuple[int, int, int]           # (rows, cols, depth) in voxels
    height_patch: np.ndarray
    semantic_patch: np.ndarray
    instance_id: int = 0
    roof_on_top: bool = False

    def __post_init__(self):
        nh, nw, nd = self.dims
        if nh <= 0 or nw <= 0 or nd <= 0:
            raise ValidationError("window dims must be positive")
        if self.height_patch.shape != (nh, nw) or self.semantic_patch.shape != (nh, nw):
            raise ValidationError("window patches do not match dims")

    @property
    def depth(self) -> int:
        return self.dims[2]

    def at(self, i: int, j: int, k: int) -> int:
        """Class at window-local voxel (i, j, k); outside the patch is null."""
        nh, nw, _ = self.dims
        if not (0 <= i < nh and 0 <= j < nw) or k < 0:
            return int(SemanticClass.NULL)
        h = int(self.height_patch[i, j])
        if k > h:
            return int(SemanticClass.NULL)
        c = int(self.semantic_patch[i, j])
        if self.roof_on_top and c == FACADE and k == h:
            return ROOF
        return c

    def classes_at(self, ii: np.ndarray, jj: np.ndarray, kk: np.ndarray) -> np.ndarray:
        nh, nw, _ = self.dims
        inside = (ii >= 0) & (ii < nh) & (jj >= 0) & (jj < nw) & (kk >= 0)
        ic = np.clip(ii, 0, nh - 1)
        jc = np.clip(jj, 0, nw - 1)
        h = self.height_patch[ic, jc]
        occupied = inside & (kk <= h)
        cls = np.where(occupied, self.semantic_patch[ic, jc], np.uint8(SemanticClass.NULL))
        if self.roof_on_top:
            cls = np.where(occupied & (cls == FACADE) & (kk == h), np.uint8(ROOF), cls)
        return cls


def extract_window(layout: CityLayout, center: tuple[int, int], dims: tuple[int, int, int]) -> LocalWindow:
    """Crop a (rows, cols, depth) window centered at a layout cell."""
    nh, nw, nd = dims
    if nh <= 0 or nw <= 0 or nd <= 0:
        raise ValidationError("window dims must be positive")
    i0 = center[0] - nh // 2
    j0 = center[1] - nw // 2
    H, W = layout.shape
    hp = np.zeros((nh, nw), np.int32)
    sp = np.full((nh, nw), int(SemanticClass.OTHERS), np.uint8)
    si0, sj0 = max(0, i0), max(0, j0)
    si1, sj1 = min(H, i0 + nh), min(W, j0 + nw)
    if si1 > si0 and sj1 > sj0:
        hp[si0 - i0 : si1 - i0, sj0 - j0 : sj1 - j0] = layout.height.grid[si0:si1, sj0:sj1]
        sp[si0 - i0 : si1 - i0, sj0 - j0 : sj1 - j0] = layout.semantic.grid[si0:si1, sj0:sj1]
    return LocalWindow(origin=(i0, j0), dims=dims, height_patch=hp, semantic_patch=sp)


@dataclass(frozen=True)
class BuildingInstance:
    id: int
    center: tuple[int, int]      # bbox center, rounded down
    footprint: np.ndarray        # (n, 2) cell coordinates, scanline order
    bbox: tuple[int, int, int, int]  # (imin, jmin, imax, jmax), inclusive
    height_max: int = 0

    @property
    def size(self) -> int:
        return self.footprint.shape[0]


def instantiate_buildings(semantic: SemanticMap, height: HeightField | None = None) -> list[BuildingInstance]:
    """Split the buildings class into 4-connected instances.

    Ids run 1..n in scanline order of each component's first cell. The
    optional height field fills height_max (0 when absent).
    """
    labels, n = ndimage.label(semantic.grid == SemanticClass.BUILDINGS, structure=_FOUR_CONNECTED)
    if n == 0:
        return []
    flat = labels.ravel()
    nz = np.flatnonzero(flat)
    labs = flat[nz]
    order = np.argsort(labs, kind="stable")  # stable keeps scanline order inside groups
    sorted_cells = nz[order]
    sorted_labs = labs[order]
    starts = np.searchsorted(sorted_labs, np.arange(1, n + 1))
    ends = np.concatenate([starts[1:], [sorted_cells.size]])

    wdt = semantic.grid.shape[1]
    ii = (sorted_cells // wdt).astype(np.int32)
    jj = (sorted_cells % wdt).astype(np.int32)
    footprints = np.stack([ii, jj], axis=1)
    imin = np.minimum.reduceat(ii, starts)
    imax = np.maximum.reduceat(ii, starts)
    jmin = np.minimum.reduceat(jj, starts)
    jmax = np.maximum.reduceat(jj, starts)
    if height is not None:
        hmax = np.maximum.reduceat(height.grid.ravel()[sorted_cells], starts)
    else:
        hmax = np.zeros(n, np.int32)

    # ids follow scanline order of each component's first cell
    rank_order = np.argsort(sorted_cells[starts], kind="stable")
    instances = []
    for new_id, g in enumerate(rank_order, start=1):
        instances.append(
            BuildingInstance(
                id=new_id,
                center=(int(imin[g] + imax[g]) // 2, int(jmin[g] + jmax[g]) // 2),
                footprint=footprints[starts[g] : ends[g]],
                bbox=(int(imin[g]), int(jmin[g]), int(imax[g]), int(jmax[g])),
                height_max=int(hmax[g]),
            )
        )
    return instances


def instance_label_map(instances: list[BuildingInstance], shape: tuple[int, int]) -> np.ndarray:
    """Per-cell owning instance id (0 where no building)."""
    out = np.zeros(shape, np.int32)
    for inst in instances:
        out[inst.footprint[:, 0], inst.footprint[:, 1]] = inst.id
    return out


def relabel_instance_window(
    window: LocalWindow,
    target: BuildingInstance,
    all_instances: list[BuildingInstance],
) -> LocalWindow:
    """Prepare a building window: target becomes facade (+ roof on top),
    every other instance is erased to null at height 0, the rest is kept."""
    nh, nw, _ = window.dims
    ci = target.center[0] - window.origin[0]
    cj = target.center[1] - window.origin[1]
    if not (0 <= ci < nh and 0 <= cj < nw):
        raise ValidationError(f"instance {target.id} does not overlap the window")

    sp = window.semantic_patch.copy()
    hp = window.height_patch.copy()
    for inst in all_instances:
        ii = inst.footprint[:, 0] - window.origin[0]
        jj = inst.footprint[:, 1] - window.origin[1]
        keep = (ii >= 0) & (ii < nh) & (jj >= 0) & (jj < nw)
        ii, jj = ii[keep], jj[keep]
        if inst.id == target.id:
            sp[ii, jj] = FACADE
        else:
            sp[ii, jj] = int(SemanticClass.NULL)
            hp[ii, jj] = 0
    return LocalWindow(
        origin=window.origin,
        dims=window.dims,
        height_patch=hp,
        semantic_patch=sp,
        instance_id=target.id,
        roof_on_top=True,
    )


def edit_building_height(layout: CityLayout, instance: BuildingInstance, new_height: int) -> CityLayout:
    """Return a copy of the layout with the instance extruded to new_height."""
    if new_height < 1:
        raise ValidationError("building height must be >= 1 voxel")
    ii = instance.footprint[:, 0]
    jj = instance.footprint[:, 1]
    if (layout.semantic.grid[ii, jj] != SemanticClass.BUILDINGS).any():
        raise ValidationError(f"instance {instance.id} does not match the layout's building cells")
    hg = layout.height.grid.copy()
    hg[ii, jj] = new_height
    return CityLayout(layout.semantic, HeightField(hg))
