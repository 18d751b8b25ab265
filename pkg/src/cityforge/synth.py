"""Unbounded layout synthesis over a discrete token grid.

Maps are generated patch by patch: a 512 px window slides with 25% overlap
(stride 384 px), tokens already generated are clamped as context, and a
pluggable sampler fills the masked remainder. The tokenizer maps between
raster patches and token indices; the default implementation snaps each
16 x 16 block to the nearest entry of a fixed exemplar table, which keeps
the whole path deterministic and free of learned weights.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ValidationError
from .geo import HeightField, RasterConfig, SemanticClass, SemanticMap, synthetic_config
from .rng import derive_seed, hash_ints, hash_unit

MASK_TOKEN = -1


@dataclass(frozen=True)
class PatchSpec:
    patch_px: int = 512
    downsample: int = 16

    def __post_init__(self):
        if self.patch_px % self.downsample != 0:
            raise ValidationError("patch_px must be divisible by downsample")

    @property
    def token_side(self) -> int:
        return self.patch_px // self.downsample

    @property
    def stride_px(self) -> int:
        """Sliding stride for 25% overlap."""
        return self.patch_px - self.patch_px // 4


@dataclass
class TokenGrid:
    """2D grid of token indices; MASK_TOKEN marks cells to be sampled.

    origin is the grid's offset (row, col) in the global token raster, so
    samplers can synthesize content that is consistent across placements.
    """

    cells: np.ndarray
    origin: tuple[int, int] = (0, 0)

    def __post_init__(self):
        self.cells = np.asarray(self.cells, np.int32)
        if self.cells.ndim != 2:
            raise ValidationError("token grid must be 2D")

    @property
    def shape(self) -> tuple[int, int]:
        return self.cells.shape


@dataclass(frozen=True)
class Codebook:
    entries: np.ndarray  # (K, D) float32

    def __post_init__(self):
        e = np.ascontiguousarray(self.entries, np.float32)
        if e.ndim != 2 or e.shape[0] < 1 or e.shape[1] < 1:
            raise ValidationError("codebook entries must be a (K, D) matrix")
        if not np.isfinite(e).all():
            raise ValidationError("codebook entries must be finite")
        object.__setattr__(self, "entries", e)

    @property
    def size(self) -> int:
        return self.entries.shape[0]

    @property
    def dim(self) -> int:
        return self.entries.shape[1]

    def save(self, path: str | Path) -> None:
        with open(path, "wb") as f:
            f.write(struct.pack("<II", self.size, self.dim))
            f.write(self.entries.astype("<f4").tobytes())

    @classmethod
    def load(cls, path: str | Path) -> "Codebook":
        raw = Path(path).read_bytes()
        k, d = struct.unpack_from("<II", raw, 0)
        entries = np.frombuffer(raw, dtype="<f4", count=k * d, offset=8).reshape(k, d)
        return cls(entries.copy())


class ExemplarTokenizer:
    """Tokenizer backed by a fixed table of uniform (class, height) blocks.

    Entry layout for K tokens: others, roads, water, construction, then
    green lands at tree heights 8..16, and the remainder buildings at
    increasing heights. encode() snaps each block to the nearest exemplar
    by (majority class, mean height); decode() paints the exemplar block,
    so decode(encode(x)) == x whenever x is tiled from exemplar blocks.
    """

    GREEN_BASE = 4
    BUILDING_BASE = 13

    def __init__(self, spec: PatchSpec | None = None, codebook_size: int = 512):
        if codebook_size < self.BUILDING_BASE + 1:
            raise ValidationError("codebook too small for the exemplar table")
        self.spec = spec or PatchSpec()
        self.K = codebook_size
        cls = np.empty(codebook_size, np.uint8)
        hgt = np.empty(codebook_size, np.int32)
        cls[0], hgt[0] = SemanticClass.OTHERS, 0
        cls[1], hgt[1] = SemanticClass.ROADS, 4
        cls[2], hgt[2] = SemanticClass.WATER, 0
        cls[3], hgt[3] = SemanticClass.CONSTRUCTION, 0
        cls[self.GREEN_BASE : self.BUILDING_BASE] = SemanticClass.GREEN_LANDS
        hgt[self.GREEN_BASE : self.BUILDING_BASE] = np.arange(8, 17)
        n_bld = codebook_size - self.BUILDING_BASE
        cls[self.BUILDING_BASE :] = SemanticClass.BUILDINGS
        hgt[self.BUILDING_BASE :] = 8 + np.arange(n_bld)
        self.token_class = cls
        self.token_height = hgt
        self.max_building_height = int(hgt[-1])

    def token_for(self, semantic: int, height: int = 0) -> int:
        """Nearest exemplar index for a (class, height) pair."""
        if semantic == SemanticClass.GREEN_LANDS:
            return self.GREEN_BASE + int(np.clip(round(height) - 8, 0, 8))
        if semantic == SemanticClass.BUILDINGS:
            return self.BUILDING_BASE + int(np.clip(round(height) - 8, 0, self.K - self.BUILDING_BASE - 1))
        fixed = {
            int(SemanticClass.OTHERS): 0,
            int(SemanticClass.NULL): 0,
            int(SemanticClass.ROADS): 1,
            int(SemanticClass.WATER): 2,
            int(SemanticClass.CONSTRUCTION): 3,
        }
        return fixed[int(semantic)]

    def tokens_for(self, semantic: np.ndarray, height: np.ndarray) -> np.ndarray:
        """Vectorized token_for."""
        semantic = np.asarray(semantic)
        height = np.asarray(height)
        out = np.zeros(semantic.shape, np.int32)
        out[semantic == SemanticClass.ROADS] = 1
        out[semantic == SemanticClass.WATER] = 2
        out[semantic == SemanticClass.CONSTRUCTION] = 3
        green = semantic == SemanticClass.GREEN_LANDS
        out[green] = self.GREEN_BASE + np.clip(np.rint(height[green]) - 8, 0, 8).astype(np.int32)
        bld = semantic == SemanticClass.BUILDINGS
        hi = self.K - self.BUILDING_BASE - 1
        out[bld] = self.BUILDING_BASE + np.clip(np.rint(height[bld]) - 8, 0, hi).astype(np.int32)
        return out

    def encode(self, semantic: np.ndarray, height: np.ndarray) -> TokenGrid:
        ds = self.spec.downsample
        semantic = np.asarray(semantic)
        height = np.asarray(height)
        if semantic.shape != height.shape:
            raise ValidationError("semantic/height shapes differ")
        h, w = semantic.shape
        if h % ds or w % ds:
            raise ValidationError(f"raster dims must be multiples of {ds}")
        th, tw = h // ds, w // ds
        blocks_s = semantic.reshape(th, ds, tw, ds).transpose(0, 2, 1, 3).reshape(th, tw, ds * ds)
        blocks_h = height.reshape(th, ds, tw, ds).transpose(0, 2, 1, 3).reshape(th, tw, ds * ds)
        counts = np.stack([(blocks_s == c).sum(axis=2) for c in range(7)], axis=2)
        majority = counts.argmax(axis=2).astype(np.uint8)
        mean_h = blocks_h.mean(axis=2)
        return TokenGrid(self.tokens_for(majority, mean_h))

    def decode(self, grid: TokenGrid) -> tuple[np.ndarray, np.ndarray]:
        cells = grid.cells
        if (cells == MASK_TOKEN).any():
            raise ValidationError("cannot decode a grid with masked tokens")
        if (cells < 0).any() or (cells >= self.K).any():
            raise ValidationError("token index out of codebook range")
        ds = self.spec.downsample
        sem = np.repeat(np.repeat(self.token_class[cells], ds, axis=0), ds, axis=1)
        hgt = np.repeat(np.repeat(self.token_height[cells], ds, axis=0), ds, axis=1)
        return sem, hgt

    def codebook(self, dim: int = 512) -> Codebook:
        """Embed the exemplar signatures into a (K, dim) codebook."""
        entries = np.zeros((self.K, dim), np.float32)
        for c in range(7):
            entries[self.token_class == c, c] = 1.0
        entries[:, 7] = self.token_height / 512.0
        return Codebook(entries)


class ReplaySampler:
    """Serves token values from a fixed global token raster (test double)."""

    def __init__(self, tokens: np.ndarray):
        self.tokens = np.asarray(tokens, np.int32)

    def next(self, grid: TokenGrid, seed: int) -> TokenGrid:
        ty, tx = grid.origin
        h, w = grid.shape
        if ty < 0 or tx < 0 or ty + h > self.tokens.shape[0] or tx + w > self.tokens.shape[1]:
            raise ValidationError("replay source does not cover the requested window")
        crop = self.tokens[ty : ty + h, tx : tx + w]
        out = np.where(grid.cells == MASK_TOKEN, crop, grid.cells)
        return TokenGrid(out, grid.origin)


class ProceduralSampler:
    """Seeded rule-based city synthesis in token space.

    Every token is a pure function of (seed, global token coordinates):
    road rows/columns on a seeded spacing, blocks of small buildings with
    hashed heights, and occasional parks, water and construction. Because
    the function is global, content lines up across placement seams and
    roads continue through stride boundaries.
    """

    def __init__(self, tokenizer: ExemplarTokenizer | None = None):
        self.tokenizer = tokenizer or ExemplarTokenizer()

    def next(self, grid: TokenGrid, seed: int) -> TokenGrid:
        ty, tx = grid.origin
        h, w = grid.shape
        TY, TX = np.meshgrid(np.arange(ty, ty + h), np.arange(tx, tx + w), indexing="ij")
        field = self._field(TX, TY, seed)
        out = np.where(grid.cells == MASK_TOKEN, field, grid.cells)
        return TokenGrid(out, grid.origin)

    def _field(self, TX: np.ndarray, TY: np.ndarray, seed: int) -> np.ndarray:
        tok = self.tokenizer
        sx = 6 + int(hash_ints(derive_seed(seed, "sx")) % 5)
        sy = 6 + int(hash_ints(derive_seed(seed, "sy")) % 5)
        ox = int(hash_ints(derive_seed(seed, "ox")) % sx)
        oy = int(hash_ints(derive_seed(seed, "oy")) % sy)

        lx = (TX - ox) % sx  # 0 on a road column
        ly = (TY - oy) % sy
        road = (lx == 0) | (ly == 0)
        bx = (TX - ox) // sx
        by = (TY - oy) // sy

        block_u = hash_unit(derive_seed(seed, "block"), bx, by)
        out = np.full(TX.shape, tok.token_for(SemanticClass.OTHERS), np.int32)

        # parks: per-token tree heights
        tree_h = 8 + (hash_ints(derive_seed(seed, "tree"), TX, TY) % np.uint64(9)).astype(np.int64)
        green_tok = tok.GREEN_BASE + (tree_h - 8).astype(np.int32)
        park = (block_u >= 0.62) & (block_u < 0.78)
        out[park] = green_tok[park]

        water = (block_u >= 0.78) & (block_u < 0.86)
        out[water] = tok.token_for(SemanticClass.WATER)
        constr = block_u >= 0.95
        out[constr] = tok.token_for(SemanticClass.CONSTRUCTION)
        # 0.86..0.95 stays as plaza (others)

        # building blocks: sub-buildings separated by one-token gaps
        bld_block = block_u < 0.62
        gx = 3 + (hash_ints(derive_seed(seed, "gx"), bx, by) % np.uint64(2)).astype(np.int64)
        gy = 3 + (hash_ints(derive_seed(seed, "gy"), bx, by) % np.uint64(2)).astype(np.int64)
        gap = ((lx % gx) == 0) | ((ly % gy) == 0)
        sbx = lx // gx
        sby = ly // gy
        hu = hash_unit(derive_seed(seed, "bheight"), bx, by, sbx, sby)
        bld_h = 10 + np.floor(170.0 * hu**3).astype(np.int64)
        bld_tok = tok.BUILDING_BASE + np.clip(bld_h - 8, 0, tok.K - tok.BUILDING_BASE - 1).astype(np.int32)
        bld = bld_block & ~gap
        out[bld] = bld_tok[bld]
        out[bld_block & gap] = tok.token_for(SemanticClass.OTHERS)

        out[road] = tok.token_for(SemanticClass.ROADS)
        return out


def _placements(total_px: int, patch_px: int, stride_px: int) -> list[int]:
    offs = list(range(0, max(total_px - patch_px, 0) + 1, stride_px))
    if offs[-1] + patch_px < total_px:
        offs.append(total_px - patch_px)
    return offs


def _run_placements(token_map, sampler, seed, spec, width_px, height_px):
    """Row-major sliding-window fill of masked tokens; context is clamped."""
    ds = spec.downsample
    patch = min(spec.patch_px, width_px, height_px)
    stride = patch - patch // 4
    side = patch // ds
    for py in _placements(height_px, patch, stride):
        for px in _placements(width_px, patch, stride):
            ty, tx = py // ds, px // ds
            view = token_map[ty : ty + side, tx : tx + side]
            if not (view == MASK_TOKEN).any():
                continue
            crop = view.copy()
            filled = sampler.next(TokenGrid(crop, (ty, tx)), seed)
            if (filled.cells == MASK_TOKEN).any():
                raise ValidationError("sampler returned masked tokens")
            newly = crop == MASK_TOKEN
            view[newly] = filled.cells[newly]


def extrapolate(
    target: tuple[int, int],
    tokenizer: ExemplarTokenizer,
    sampler,
    seed: int,
    spec: PatchSpec | None = None,
    config: RasterConfig | None = None,
) -> tuple[SemanticMap, HeightField]:
    """Generate a (width, height) px map by sliding-window sampling."""
    spec = spec or tokenizer.spec
    width, height = target
    if width < spec.patch_px or height < spec.patch_px:
        raise ValidationError(f"target must be at least {spec.patch_px} px per side")
    if width % spec.downsample or height % spec.downsample:
        raise ValidationError(f"target dims must be multiples of {spec.downsample}")
    ds = spec.downsample
    token_map = np.full((height // ds, width // ds), MASK_TOKEN, np.int32)
    _run_placements(token_map, sampler, seed, spec, width, height)
    sem, hgt = tokenizer.decode(TokenGrid(token_map))
    cfg = config or synthetic_config(width, height, seed=seed)
    return SemanticMap(sem, cfg), HeightField(hgt)


def inpaint(
    semantic: SemanticMap,
    height: HeightField,
    region: np.ndarray,
    tokenizer: ExemplarTokenizer,
    sampler,
    seed: int,
    spec: PatchSpec | None = None,
) -> tuple[SemanticMap, HeightField]:
    """Re-sample the token blocks intersecting region; other cells are kept
    bit-identical. A full-map region reproduces a fresh extrapolate run."""
    spec = spec or tokenizer.spec
    region = np.asarray(region, bool)
    if region.shape != semantic.grid.shape:
        raise ValidationError("region shape does not match the map")
    if not region.any():
        raise ValidationError("inpaint region is empty")
    ds = spec.downsample
    h, w = semantic.grid.shape
    if h % ds or w % ds:
        raise ValidationError(f"map dims must be multiples of {ds}")

    token_map = tokenizer.encode(semantic.grid, height.grid).cells
    blocks = region.reshape(h // ds, ds, w // ds, ds).any(axis=(1, 3))
    token_map[blocks] = MASK_TOKEN
    _run_placements(token_map, sampler, seed, spec, w, h)
    sem_dec, hgt_dec = tokenizer.decode(TokenGrid(token_map))

    px_mask = np.repeat(np.repeat(blocks, ds, axis=0), ds, axis=1)
    out_sem = semantic.grid.copy()
    out_hgt = height.grid.copy()
    out_sem[px_mask] = sem_dec[px_mask]
    out_hgt[px_mask] = hgt_dec[px_mask]
    return SemanticMap(out_sem, semantic.config), HeightField(out_hgt)


# ---------------------------------------------------------------------------
# Patch quality metrics
# ---------------------------------------------------------------------------


def _grid(x) -> np.ndarray:
    return np.asarray(getattr(x, "grid", x))


def height_l1(pred, gt) -> float:
    a, b = _grid(pred).astype(np.float64), _grid(gt).astype(np.float64)
    if a.shape != b.shape:
        raise ValidationError("height_l1: shape mismatch")
    return float(np.abs(a - b).mean())


def semantic_cross_entropy(pred_logits: np.ndarray, gt) -> float:
    """Mean negative log-softmax of the true class; logits are (H, W, C)."""
    logits = np.asarray(pred_logits, np.float64)
    labels = _grid(gt).astype(np.int64)
    if logits.ndim != 3 or logits.shape[:2] != labels.shape:
        raise ValidationError("semantic_cross_entropy: shape mismatch")
    if logits.shape[2] < 7:
        raise ValidationError("logits must cover the 7 semantic classes")
    m = logits.max(axis=2, keepdims=True)
    lse = m[..., 0] + np.log(np.exp(logits - m).sum(axis=2))
    true_logit = np.take_along_axis(logits, labels[..., None], axis=2)[..., 0]
    return float((lse - true_logit).mean())


def height_smoothness(pred, guide, edge_scale: float = 10.0) -> float:
    """Edge-aware height gradient penalty.

    Height differences across semantic class boundaries are down-weighted
    by exp(-edge_scale), so sharp building edges are not penalized while
    gradients inside a uniform region are.
    """
    h = _grid(pred).astype(np.float64)
    g = _grid(guide)
    if h.shape != g.shape:
        raise ValidationError("height_smoothness: shape mismatch")
    out = 0.0
    for axis in (0, 1):
        dh = np.abs(np.diff(h, axis=axis))
        edge = (np.diff(g.astype(np.int64), axis=axis) != 0).astype(np.float64)
        out += float((dh * np.exp(-edge_scale * edge)).mean()) if dh.size else 0.0
    return out


@dataclass(frozen=True)
class MetricConfig:
    lambda_height: float = 10.0
    lambda_smooth: float = 10.0
    lambda_semantic: float = 1.0
    smoothness_edge_scale: float = 10.0


def combined_patch_loss(pred_height, gt_height, pred_logits, gt_semantic, config: MetricConfig = MetricConfig()) -> float:
    """Weighted patch reconstruction figure (reporting only)."""
    return (
        config.lambda_height * height_l1(pred_height, gt_height)
        + config.lambda_smooth * height_smoothness(pred_height, gt_semantic, config.smoothness_edge_scale)
        + config.lambda_semantic * semantic_cross_entropy(pred_logits, gt_semantic)
    )
