"""Vector city geometry ingestion and rasterization.

Converts lon/lat vector features (roads, buildings, water, ...) into a
paired semantic map and height field on a Web-Mercator pixel grid
(EPSG:3857 with 256-pixel tiles). Zoom 18 gives roughly 0.597 m per pixel
at the equator, which is also the edge length of one voxel in the derived
3D layout.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import IntEnum
from pathlib import Path

import numpy as np
from PIL import Image

from .errors import ValidationError
from .rng import derive_seed

TILE_SIZE = 256
MAX_LATITUDE = 85.051128779806589  # atan(sinh(pi)), edge of the Mercator square
EARTH_CIRCUMFERENCE_M = 40075016.686

ROAD_HEIGHT_VOXELS = 4
TREE_HEIGHT_RANGE = (8, 16)
DEFAULT_STROKE_WIDTH_M = 4.0


class SemanticClass(IntEnum):
    NULL = 0  # empty space above the height field, never stored in a map
    ROADS = 1
    BUILDINGS = 2
    GREEN_LANDS = 3
    CONSTRUCTION = 4
    WATER = 5
    OTHERS = 6


# Overlap resolution when features cover the same cell; higher wins.
CLASS_PRIORITY = {
    SemanticClass.OTHERS: 0,
    SemanticClass.GREEN_LANDS: 1,
    SemanticClass.CONSTRUCTION: 2,
    SemanticClass.WATER: 3,
    SemanticClass.ROADS: 4,
    SemanticClass.BUILDINGS: 5,
}

# RGB palette for map exports. Indices 7/8 are the facade/roof labels that
# only appear inside relabeled building windows.
SEMANTIC_PALETTE = {
    0: (0, 0, 0),
    1: (228, 26, 28),      # roads, red
    2: (255, 217, 47),     # buildings, yellow
    3: (77, 175, 74),      # green lands, green
    4: (0, 205, 205),      # construction, cyan
    5: (55, 126, 184),     # water, blue
    6: (160, 160, 160),    # others, gray
    7: (245, 130, 48),     # facade
    8: (145, 30, 180),     # roof
}


def lonlat_to_pixel(lon: float, lat: float, zoom: int) -> tuple[float, float]:
    """Project lon/lat degrees to continuous global Web-Mercator pixels."""
    if not -MAX_LATITUDE <= lat <= MAX_LATITUDE:
        raise ValidationError(f"latitude {lat} outside Web-Mercator bounds +-{MAX_LATITUDE}")
    n = TILE_SIZE * (2**zoom)
    x = (lon + 180.0) / 360.0 * n
    y = (1.0 - math.log(math.tan(math.pi / 4.0 + math.radians(lat) / 2.0)) / math.pi) / 2.0 * n
    return x, y


def pixel_to_lonlat(x: float, y: float, zoom: int) -> tuple[float, float]:
    """Inverse of lonlat_to_pixel."""
    n = TILE_SIZE * (2**zoom)
    lon = x / n * 360.0 - 180.0
    lat = math.degrees(math.atan(math.sinh(math.pi * (1.0 - 2.0 * y / n))))
    return lon, lat


def meters_per_pixel(zoom: int, lat: float = 0.0) -> float:
    """Ground resolution of one Web-Mercator pixel at the given latitude."""
    return EARTH_CIRCUMFERENCE_M * math.cos(math.radians(lat)) / (TILE_SIZE * (2**zoom))


@dataclass(frozen=True)
class RasterConfig:
    """Placement of a raster on the global Web-Mercator pixel grid."""

    zoom: int
    origin_pixel: tuple[float, float]  # global pixel of the raster's (0, 0) corner
    width: int
    height: int
    seed: int = 0

    def __post_init__(self):
        if self.zoom < 0:
            raise ValidationError("zoom must be >= 0")
        if self.width <= 0 or self.height <= 0:
            raise ValidationError("raster dimensions must be positive")

    def center_lonlat(self) -> tuple[float, float]:
        cx = self.origin_pixel[0] + self.width / 2.0
        cy = self.origin_pixel[1] + self.height / 2.0
        return pixel_to_lonlat(cx, cy, self.zoom)

    def voxel_size_m(self) -> float:
        """Edge length of one raster pixel (= one voxel) in meters."""
        _, lat = self.center_lonlat()
        return meters_per_pixel(self.zoom, lat)


def synthetic_config(width: int, height: int, seed: int = 0, zoom: int = 18) -> RasterConfig:
    """Config for generated (non-georeferenced) layouts, centered on the equator."""
    half = TILE_SIZE * (2**zoom) / 2.0
    return RasterConfig(
        zoom=zoom,
        origin_pixel=(half - width / 2.0, half - height / 2.0),
        width=width,
        height=height,
        seed=seed,
    )


@dataclass(frozen=True)
class SemanticMap:
    """Per-cell class ids, row-major (height, width)."""

    grid: np.ndarray
    config: RasterConfig

    def __post_init__(self):
        g = np.ascontiguousarray(self.grid, dtype=np.uint8)
        if g.shape != (self.config.height, self.config.width):
            raise ValidationError(
                f"semantic grid shape {g.shape} does not match config "
                f"({self.config.height}, {self.config.width})"
            )
        if g.max(initial=0) > max(SemanticClass):
            raise ValidationError("semantic grid holds invalid class ids")
        g.flags.writeable = False
        object.__setattr__(self, "grid", g)


@dataclass(frozen=True)
class HeightField:
    """Per-cell extrusion heights in voxel units, row-major (height, width)."""

    grid: np.ndarray

    def __post_init__(self):
        g = np.ascontiguousarray(self.grid, dtype=np.int32)
        if g.ndim != 2:
            raise ValidationError("height grid must be 2D")
        if (g < 0).any():
            raise ValidationError("height values must be non-negative")
        g.flags.writeable = False
        object.__setattr__(self, "grid", g)


@dataclass(frozen=True)
class GeoFeature:
    vertices: np.ndarray  # (n, 2) lon/lat degrees
    kind: str  # "polygon" | "polyline"
    semantic: SemanticClass
    height_m: float | None = None
    width_m: float | None = None  # stroke width for polylines


@dataclass(frozen=True)
class GeoVectorSet:
    features: tuple[GeoFeature, ...]

    @classmethod
    def from_geojson(cls, obj: dict) -> "GeoVectorSet":
        """Parse a GeoJSON-style FeatureCollection.

        Expects per-feature properties: "class" (name or id), optional
        "height" (meters, required for buildings), optional "width"
        (stroke meters for line features).
        """
        if obj.get("type") != "FeatureCollection":
            raise ValidationError("expected a FeatureCollection")
        feats = []
        for idx, f in enumerate(obj.get("features", [])):
            geom = f.get("geometry") or {}
            props = f.get("properties") or {}
            cls_val = props.get("class")
            semantic = _parse_class(cls_val, idx)
            height = props.get("height")
            width = props.get("width")
            gtype = geom.get("type")
            coords = geom.get("coordinates")
            if gtype == "Polygon":
                for ring in coords:
                    feats.append(GeoFeature(np.asarray(ring, float), "polygon", semantic, height, width))
            elif gtype == "MultiPolygon":
                for poly in coords:
                    for ring in poly:
                        feats.append(GeoFeature(np.asarray(ring, float), "polygon", semantic, height, width))
            elif gtype == "LineString":
                feats.append(GeoFeature(np.asarray(coords, float), "polyline", semantic, height, width))
            elif gtype == "MultiLineString":
                for line in coords:
                    feats.append(GeoFeature(np.asarray(line, float), "polyline", semantic, height, width))
            else:
                raise ValidationError(f"feature {idx}: unsupported geometry type {gtype!r}")
        vs = cls(tuple(feats))
        vs.validate()
        return vs

    def validate(self) -> None:
        for idx, f in enumerate(self.features):
            v = f.vertices
            if v.ndim != 2 or v.shape[1] != 2 or v.shape[0] < 2:
                raise ValidationError(f"feature {idx}: malformed vertex list")
            if (np.abs(v[:, 0]) > 180.0).any() or (np.abs(v[:, 1]) > MAX_LATITUDE).any():
                raise ValidationError(f"feature {idx}: coordinates outside Mercator bounds")
            if f.kind == "polygon":
                if v.shape[0] < 4 or not np.allclose(v[0], v[-1]):
                    raise ValidationError(f"feature {idx}: polygon ring is not closed")
                if _ring_self_intersects(v[:-1]):
                    raise ValidationError(f"feature {idx}: polygon ring self-intersects")
            elif f.kind != "polyline":
                raise ValidationError(f"feature {idx}: unknown kind {f.kind!r}")


def _parse_class(value, idx: int) -> SemanticClass:
    if isinstance(value, str):
        try:
            return SemanticClass[value.upper()]
        except KeyError:
            raise ValidationError(f"feature {idx}: unknown class name {value!r}") from None
    try:
        return SemanticClass(int(value))
    except (TypeError, ValueError):
        raise ValidationError(f"feature {idx}: missing or invalid class {value!r}") from None


def _segments_properly_intersect(p1, p2, q1, q2) -> bool:
    def orient(a, b, c):
        v = (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])
        return 0 if v == 0 else (1 if v > 0 else -1)

    o1 = orient(p1, p2, q1)
    o2 = orient(p1, p2, q2)
    o3 = orient(q1, q2, p1)
    o4 = orient(q1, q2, p2)
    return o1 != o2 and o3 != o4 and 0 not in (o1, o2, o3, o4)


def _ring_self_intersects(pts: np.ndarray) -> bool:
    n = pts.shape[0]
    for i in range(n):
        a1, a2 = pts[i], pts[(i + 1) % n]
        for j in range(i + 1, n):
            if j == i or (j + 1) % n == i or (i + 1) % n == j:
                continue  # adjacent edges share a vertex
            b1, b2 = pts[j], pts[(j + 1) % n]
            if _segments_properly_intersect(a1, a2, b1, b2):
                return True
    return False


# ---------------------------------------------------------------------------
# Perlin noise (tree canopy heights)
# ---------------------------------------------------------------------------

_PERLIN_PERIOD = 32  # lattice period in cells
_PERLIN_OCTAVES = ((1.0, 1.0), (2.0, 0.5))

_GRADIENTS = np.array(
    [
        (1.0, 0.0), (-1.0, 0.0), (0.0, 1.0), (0.0, -1.0),
        (math.sqrt(0.5), math.sqrt(0.5)), (-math.sqrt(0.5), math.sqrt(0.5)),
        (math.sqrt(0.5), -math.sqrt(0.5)), (-math.sqrt(0.5), -math.sqrt(0.5)),
    ]
)


def _permutation_table(seed: int) -> np.ndarray:
    perm = np.random.default_rng(derive_seed(seed, "perlin")).permutation(256)
    return np.concatenate([perm, perm]).astype(np.int64)


def _gradient_noise(x: np.ndarray, y: np.ndarray, perm: np.ndarray) -> np.ndarray:
    """Classic 2D gradient-lattice noise, output roughly in [-0.75, 0.75]."""
    xi = np.floor(x).astype(np.int64)
    yi = np.floor(y).astype(np.int64)
    xf = x - xi
    yf = y - yi

    def grad_dot(ix, iy, dx, dy):
        g = _GRADIENTS[perm[perm[ix & 255] + (iy & 255)] & 7]
        return g[..., 0] * dx + g[..., 1] * dy

    n00 = grad_dot(xi, yi, xf, yf)
    n10 = grad_dot(xi + 1, yi, xf - 1.0, yf)
    n01 = grad_dot(xi, yi + 1, xf, yf - 1.0)
    n11 = grad_dot(xi + 1, yi + 1, xf - 1.0, yf - 1.0)

    u = xf * xf * xf * (xf * (xf * 6.0 - 15.0) + 10.0)
    v = yf * yf * yf * (yf * (yf * 6.0 - 15.0) + 10.0)
    nx0 = n00 + u * (n10 - n00)
    nx1 = n01 + u * (n11 - n01)
    return nx0 + v * (nx1 - nx0)


def perlin_noise(ii: np.ndarray, jj: np.ndarray, seed: int) -> np.ndarray:
    """Two-octave Perlin value in [-1, 1] at raster cells (ii, jj)."""
    perm = _permutation_table(seed)
    x = np.asarray(jj, float) / _PERLIN_PERIOD
    y = np.asarray(ii, float) / _PERLIN_PERIOD
    total = np.zeros_like(x)
    norm = 0.0
    for freq, amp in _PERLIN_OCTAVES:
        # offset the octave so lattices do not line up
        total += amp * _gradient_noise(x * freq + 13.37 * freq, y * freq + 71.13 * freq, perm)
        norm += amp
    return total / norm


def heights_from_noise(noise: np.ndarray) -> np.ndarray:
    """Affine map of [-1, 1] noise onto integer tree heights in [8, 16]."""
    lo, hi = TREE_HEIGHT_RANGE
    mid = (lo + hi) / 2.0
    half = (hi - lo) / 2.0
    return np.rint(mid + half * np.clip(noise, -1.0, 1.0)).astype(np.int32)


def perlin_height(mask: np.ndarray, seed: int) -> np.ndarray:
    """Tree canopy heights for the masked cells; zero elsewhere.

    Deterministic in (mask positions, seed): the value at a cell depends
    only on its coordinates, so overlapping calls agree.
    """
    mask = np.asarray(mask, bool)
    if not mask.any():
        raise ValidationError("perlin_height: empty region")
    ii, jj = np.nonzero(mask)
    out = np.zeros(mask.shape, np.int32)
    out[ii, jj] = heights_from_noise(perlin_noise(ii, jj, seed))
    return out


# ---------------------------------------------------------------------------
# Rasterization
# ---------------------------------------------------------------------------


def _fill_polygon(mask: np.ndarray, xs: np.ndarray, ys: np.ndarray) -> None:
    """Even-odd scanline fill at pixel centers; set covered cells in mask."""
    h, w = mask.shape
    x0 = xs
    y0 = ys
    x1 = np.roll(xs, -1)
    y1 = np.roll(ys, -1)
    keep = y0 != y1  # horizontal edges contribute no crossings
    x0, y0, x1, y1 = x0[keep], y0[keep], x1[keep], y1[keep]
    if x0.size == 0:
        return
    imin = max(0, int(math.floor(ys.min() - 0.5)))
    imax = min(h - 1, int(math.ceil(ys.max())))
    for i in range(imin, imax + 1):
        yc = i + 0.5
        hit = ((y0 <= yc) & (yc < y1)) | ((y1 <= yc) & (yc < y0))
        if not hit.any():
            continue
        xc = x0[hit] + (yc - y0[hit]) * (x1[hit] - x0[hit]) / (y1[hit] - y0[hit])
        xc.sort()
        for a, b in zip(xc[0::2], xc[1::2]):
            j0 = max(0, int(math.ceil(a - 0.5)))
            j1 = min(w, int(math.ceil(b - 0.5)))
            if j1 > j0:
                mask[i, j0:j1] = True


def _stroke_polyline(mask: np.ndarray, xs: np.ndarray, ys: np.ndarray, width_px: float) -> None:
    """Mark cells whose centers lie within width_px/2 of any segment."""
    h, w = mask.shape
    r = max(width_px, 1.0) / 2.0
    for k in range(xs.size - 1):
        ax, ay, bx, by = xs[k], ys[k], xs[k + 1], ys[k + 1]
        jlo = max(0, int(math.floor(min(ax, bx) - r - 0.5)))
        jhi = min(w - 1, int(math.ceil(max(ax, bx) + r)))
        ilo = max(0, int(math.floor(min(ay, by) - r - 0.5)))
        ihi = min(h - 1, int(math.ceil(max(ay, by) + r)))
        if jhi < jlo or ihi < ilo:
            continue
        jj, ii = np.meshgrid(np.arange(jlo, jhi + 1), np.arange(ilo, ihi + 1))
        px = jj + 0.5
        py = ii + 0.5
        dx, dy = bx - ax, by - ay
        seg_len2 = dx * dx + dy * dy
        if seg_len2 == 0.0:
            t = np.zeros_like(px)
        else:
            t = np.clip(((px - ax) * dx + (py - ay) * dy) / seg_len2, 0.0, 1.0)
        dist2 = (px - (ax + t * dx)) ** 2 + (py - (ay + t * dy)) ** 2
        sub = dist2 <= r * r
        mask[ilo : ihi + 1, jlo : jhi + 1] |= sub


def _feature_cells(f: GeoFeature, config: RasterConfig) -> np.ndarray:
    """Boolean mask of raster cells covered by the feature."""
    gx, gy = [], []
    for lon, lat in f.vertices:
        x, y = lonlat_to_pixel(lon, lat, config.zoom)
        gx.append(x - config.origin_pixel[0])
        gy.append(y - config.origin_pixel[1])
    xs = np.asarray(gx)
    ys = np.asarray(gy)
    mask = np.zeros((config.height, config.width), bool)
    if f.kind == "polygon":
        _fill_polygon(mask, xs[:-1], ys[:-1])
    else:
        width_m = f.width_m if f.width_m is not None else DEFAULT_STROKE_WIDTH_M
        _stroke_polyline(mask, xs, ys, width_m / config.voxel_size_m())
    return mask


def rasterize(vectors: GeoVectorSet, config: RasterConfig) -> tuple[SemanticMap, HeightField]:
    """Burn vector features into a semantic map and height field.

    Cells without geometry get class others at height zero; overlap is
    resolved by CLASS_PRIORITY, so the result is independent of feature
    order. Buildings overlapping buildings keep the larger height.
    """
    vectors.validate()
    semantic = np.full((config.height, config.width), int(SemanticClass.OTHERS), np.uint8)
    priority = np.zeros((config.height, config.width), np.int8)
    building_h = np.zeros((config.height, config.width), np.int32)
    voxel_m = config.voxel_size_m()

    for idx, f in enumerate(vectors.features):
        cells = _feature_cells(f, config)
        if not cells.any():
            continue
        if f.semantic == SemanticClass.BUILDINGS:
            if f.height_m is None:
                raise ValidationError(f"feature {idx}: building is missing a height attribute")
            h_vox = max(1, math.ceil(f.height_m / voxel_m))
            np.maximum(building_h, np.where(cells, h_vox, 0), out=building_h)
        p = CLASS_PRIORITY[f.semantic]
        win = cells & (priority < p)
        semantic[win] = int(f.semantic)
        priority[win] = p

    heights = np.zeros((config.height, config.width), np.int32)
    heights[semantic == SemanticClass.ROADS] = ROAD_HEIGHT_VOXELS
    buildings = semantic == SemanticClass.BUILDINGS
    heights[buildings] = building_h[buildings]
    green = semantic == SemanticClass.GREEN_LANDS
    if green.any():
        heights[green] = perlin_height(green, config.seed)[green]
    # water, construction and others stay at zero
    return SemanticMap(semantic, config), HeightField(heights)


# ---------------------------------------------------------------------------
# Raster file IO
# ---------------------------------------------------------------------------


def _flat_palette() -> list[int]:
    flat = []
    for code in range(256):
        flat.extend(SEMANTIC_PALETTE.get(code, (0, 0, 0)))
    return flat


def save_semantic_png(grid: np.ndarray, path: str | Path) -> None:
    img = Image.fromarray(np.asarray(grid, np.uint8), mode="P")
    img.putpalette(_flat_palette())
    img.save(path)


def load_semantic_png(path: str | Path) -> np.ndarray:
    return np.asarray(Image.open(path), dtype=np.uint8)


def save_height_png(grid: np.ndarray, path: str | Path) -> None:
    g = np.asarray(grid)
    if g.max(initial=0) > 0xFFFF:
        raise ValidationError("height exceeds 16-bit PNG range")
    Image.fromarray(g.astype(np.uint16)).save(path)


def load_height_png(path: str | Path) -> np.ndarray:
    return np.asarray(Image.open(path), dtype=np.int32)


def save_metadata(config: RasterConfig, path: str | Path) -> None:
    lines = [
        f"zoom={config.zoom}",
        f"origin_x={config.origin_pixel[0]!r}",
        f"origin_y={config.origin_pixel[1]!r}",
        f"width={config.width}",
        f"height={config.height}",
        f"seed={config.seed}",
    ]
    Path(path).write_text("\n".join(lines) + "\n")


def load_metadata(path: str | Path) -> RasterConfig:
    kv = {}
    for line in Path(path).read_text().splitlines():
        if "=" in line:
            k, v = line.split("=", 1)
            kv[k.strip()] = v.strip()
    return RasterConfig(
        zoom=int(kv["zoom"]),
        origin_pixel=(float(kv["origin_x"]), float(kv["origin_y"])),
        width=int(kv["width"]),
        height=int(kv["height"]),
        seed=int(kv["seed"]),
    )


def save_city(semantic: SemanticMap, height: HeightField, out_dir: str | Path) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    save_semantic_png(semantic.grid, out / "semantic.png")
    save_height_png(height.grid, out / "height.png")
    save_metadata(semantic.config, out / "metadata.txt")


def load_city(in_dir: str | Path) -> tuple[SemanticMap, HeightField]:
    src = Path(in_dir)
    config = load_metadata(src / "metadata.txt")
    sem = load_semantic_png(src / "semantic.png")
    hgt = load_height_png(src / "height.png")
    return SemanticMap(sem, config), HeightField(hgt)
