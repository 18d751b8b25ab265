"""Scene parameterization: hashed feature grids and positional encodings.

The multi-level hash grid indexes a feature table by XOR-ing lattice
coordinates multiplied by fixed primes. The lattice lives in a hyperspace:
three spatial axes plus the quantized components of a scene-level feature
vector, so the same table yields different fields for different scenes.
Building features instead use per-pixel encoder output lifted by a
sinusoidal encoding.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ValidationError
from .geo import SemanticClass
from .rng import hash_unit

HASH_PRIMES = (1, 2654435761, 805459861, 3674653429, 2097192037)

SINCOS_LEVELS = 10
PIXEL_FEATURE_CHANNELS = 63


@dataclass(frozen=True)
class HashGridConfig:
    levels: int = 16
    table_size: int = 2**19
    channels: int = 8
    base_resolution: int = 16
    max_resolution: int = 1536
    feature_dim: int = 2
    feature_quant: int = 1024
    window_dims: tuple[int, int, int] = (1536, 1536, 640)  # (rows, cols, depth)

    def __post_init__(self):
        if self.levels < 1:
            raise ValidationError("levels must be >= 1")
        if self.table_size < 1 or self.table_size & (self.table_size - 1):
            raise ValidationError("table_size must be a power of two")
        if 3 + self.feature_dim > len(HASH_PRIMES):
            raise ValidationError("not enough primes for the requested feature_dim")

    @property
    def primes(self) -> tuple[int, ...]:
        return HASH_PRIMES[: 3 + self.feature_dim]

    def level_resolutions(self) -> np.ndarray:
        """Geometric growth from base_resolution up to max_resolution."""
        if self.levels == 1:
            return np.array([self.base_resolution])
        g = (self.max_resolution / self.base_resolution) ** (1.0 / (self.levels - 1))
        res = np.floor(self.base_resolution * g ** np.arange(self.levels)).astype(np.int64)
        return res


def hash_index(lattice: np.ndarray, config: HashGridConfig) -> np.ndarray:
    """XOR-of-primes lattice hash into [0, table_size).

    lattice holds integer coordinates along the last axis: x, y, z first,
    then the quantized scene-feature components. Multiplication wraps
    modulo 2^64 before the final modulus.
    """
    lat = np.asarray(lattice)
    if lat.shape[-1] != 3 + config.feature_dim:
        raise ValidationError(f"lattice must have {3 + config.feature_dim} coordinates")
    lat_u = lat.astype(np.int64).astype(np.uint64)
    with np.errstate(over="ignore"):
        acc = lat_u[..., 0] * np.uint64(config.primes[0])
        for m in range(1, lat_u.shape[-1]):
            acc = acc ^ (lat_u[..., m] * np.uint64(config.primes[m]))
    return (acc & np.uint64(config.table_size - 1)).astype(np.int64)


@dataclass
class HashGridTable:
    data: np.ndarray  # (levels, table_size, channels) float32
    config: HashGridConfig
    seed: int = 0

    def __post_init__(self):
        expect = (self.config.levels, self.config.table_size, self.config.channels)
        if self.data.shape != expect:
            raise ValidationError(f"table shape {self.data.shape} != {expect}")

    @classmethod
    def initialize(cls, config: HashGridConfig, seed: int = 0) -> "HashGridTable":
        rng = np.random.default_rng(seed)
        data = rng.uniform(-1e-4, 1e-4, size=(config.levels, config.table_size, config.channels)).astype(np.float32)
        return cls(data, config, seed)

    def save(self, path: str | Path) -> None:
        with open(path, "wb") as f:
            f.write(struct.pack("<IIIq", self.config.levels, self.config.table_size, self.config.channels, self.seed))
            f.write(self.data.astype("<f4").tobytes())

    @classmethod
    def load(cls, path: str | Path, config: HashGridConfig | None = None) -> "HashGridTable":
        raw = Path(path).read_bytes()
        levels, table_size, channels, seed = struct.unpack_from("<IIIq", raw, 0)
        if config is None:
            config = HashGridConfig(levels=levels, table_size=table_size, channels=channels)
        if (levels, table_size, channels) != (config.levels, config.table_size, config.channels):
            raise ValidationError("snapshot header does not match the config")
        n = levels * table_size * channels
        data = np.frombuffer(raw, dtype="<f4", count=n, offset=20).reshape(levels, table_size, channels)
        return cls(data.copy(), config, seed)


_CORNERS = np.array(
    [[0, 0, 0], [0, 0, 1], [0, 1, 0], [0, 1, 1], [1, 0, 0], [1, 0, 1], [1, 1, 0], [1, 1, 1]],
    np.int64,
)


def quantize_feature(f_g: np.ndarray, config: HashGridConfig) -> np.ndarray:
    return np.floor(np.asarray(f_g, np.float64) * config.feature_quant).astype(np.int64)


def grid_lookup(p: np.ndarray, f_g: np.ndarray, table: HashGridTable, config: HashGridConfig) -> np.ndarray:
    """Multi-level trilinear lookup at window positions p.

    p is (..., 3) in window voxel units (x, y, z); f_g is the scene feature,
    quantized and held fixed while the spatial fraction interpolates the
    eight surrounding corners per level. Output is (..., levels*channels).
    """
    p = np.asarray(p, np.float64)
    single = p.ndim == 1
    pts = np.atleast_2d(p)
    n = pts.shape[0]
    dims = np.array([config.window_dims[1], config.window_dims[0], config.window_dims[2]], np.float64)
    u = pts / dims  # normalized to [0, 1]
    fq = quantize_feature(f_g, config)
    if fq.shape != (config.feature_dim,):
        raise ValidationError(f"scene feature must have {config.feature_dim} components")

    out = np.empty((n, config.levels * config.channels), np.float32)
    for lvl, res in enumerate(config.level_resolutions()):
        scaled = u * res
        base = np.floor(scaled).astype(np.int64)  # (n, 3)
        frac = scaled - base
        corners = base[:, None, :] + _CORNERS[None, :, :]  # (n, 8, 3)
        lattice = np.concatenate(
            [corners, np.broadcast_to(fq, (n, 8, config.feature_dim))], axis=2
        )
        idx = hash_index(lattice, config)  # (n, 8)
        vals = table.data[lvl][idx]  # (n, 8, channels)
        w = np.ones((n, 8), np.float64)
        for axis in range(3):
            hi = _CORNERS[:, axis] == 1
            w *= np.where(hi[None, :], frac[:, axis : axis + 1], 1.0 - frac[:, axis : axis + 1])
        out[:, lvl * config.channels : (lvl + 1) * config.channels] = (
            (vals * w[:, :, None]).sum(axis=1).astype(np.float32)
        )
    return out[0] if single else out


def sincos_encode(x: np.ndarray, levels: int = SINCOS_LEVELS) -> np.ndarray:
    """Per-value sinusoidal lifting {sin(2^i pi x), cos(2^i pi x)}, i ascending.

    Caller normalizes inputs to [-1, 1]. Output interleaves (sin_i, cos_i)
    per input value, giving 2*levels*len(x) values.
    """
    x = np.asarray(x, np.float64)
    if x.ndim == 0:
        x = x[None]
    freqs = (2.0 ** np.arange(levels)) * np.pi
    ang = x[..., None] * freqs  # (..., n, levels)
    out = np.empty(ang.shape[:-1] + (2 * levels,), np.float64)
    out[..., 0::2] = np.sin(ang)
    out[..., 1::2] = np.cos(ang)
    return out.reshape(x.shape[:-1] + (x.shape[-1] * 2 * levels,))


def building_feature(p: np.ndarray, f_b: np.ndarray, depth: int, levels: int = SINCOS_LEVELS) -> np.ndarray:
    """Assemble the encoded feature for building positions.

    Fetches the pixel feature at the nearest cell under (p_x, p_y), appends
    the normalized height p_z/depth, and sincos-encodes the whole vector.
    """
    p = np.asarray(p, np.float64)
    single = p.ndim == 1
    pts = np.atleast_2d(p)
    nh, nw, nc = f_b.shape
    jj = np.rint(pts[:, 0]).astype(np.int64)
    ii = np.rint(pts[:, 1]).astype(np.int64)
    if (ii < 0).any() or (ii >= nh).any() or (jj < 0).any() or (jj >= nw).any():
        raise ValidationError("position outside the pixel feature map")
    if (pts[:, 2] < 0).any() or (pts[:, 2] > depth).any():
        raise ValidationError("position outside the window depth")
    vec = np.concatenate([f_b[ii, jj], (pts[:, 2] / depth)[:, None]], axis=1)
    enc = sincos_encode(vec, levels)
    return enc[0] if single else enc


# ---------------------------------------------------------------------------
# Encoders and style codes
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class StyleCode:
    z: np.ndarray

    def __post_init__(self):
        z = np.ascontiguousarray(self.z, np.float32)
        if not np.isfinite(z).all():
            raise ValidationError("style code must be finite")
        object.__setattr__(self, "z", z)

    @classmethod
    def seeded(cls, seed: int, length: int = 256) -> "StyleCode":
        return cls(np.random.default_rng(seed).standard_normal(length).astype(np.float32))


class ProceduralGlobalEncoder:
    """Scene-level feature: [normalized mean height, building-area fraction]."""

    def __init__(self, depth: int = 640):
        self.depth = depth

    def __call__(self, height_patch: np.ndarray, semantic_patch: np.ndarray) -> np.ndarray:
        mean_h = float(height_patch.mean()) / self.depth
        frac = float((semantic_patch == SemanticClass.BUILDINGS).mean())
        return np.array([mean_h, frac], np.float64)


class MlpGlobalEncoder:
    """Weights-backed scene encoder over the procedural summary statistics.

    The MLP input is the flattened [normalized mean height, building-area
    fraction, water fraction, road fraction] vector; the output dimension
    is the scene feature dimension. Weights use the standard MLP file
    format (see volren.MlpWeights).
    """

    def __init__(self, weights, depth: int = 640):
        self.weights = weights
        self.depth = depth

    def __call__(self, height_patch: np.ndarray, semantic_patch: np.ndarray) -> np.ndarray:
        from .volren import mlp_forward

        stats = np.array(
            [
                float(height_patch.mean()) / self.depth,
                float((semantic_patch == SemanticClass.BUILDINGS).mean()),
                float((semantic_patch == SemanticClass.WATER).mean()),
                float((semantic_patch == SemanticClass.ROADS).mean()),
            ]
        )
        return np.asarray(mlp_forward(self.weights, stats), np.float64)


class ProceduralLocalEncoder:
    """Per-pixel feature map: normalized height, one-hot class, hash channels."""

    def __init__(self, seed: int = 0, channels: int = PIXEL_FEATURE_CHANNELS, depth: int = 640):
        if channels < 10:
            raise ValidationError("need at least 10 channels for height + one-hot")
        self.seed = seed
        self.channels = channels
        self.depth = depth

    def __call__(self, height_patch: np.ndarray, semantic_patch: np.ndarray) -> np.ndarray:
        nh, nw = height_patch.shape
        out = np.zeros((nh, nw, self.channels), np.float32)
        out[:, :, 0] = height_patch / self.depth
        sem = np.asarray(semantic_patch, np.int64)
        for c in range(9):
            out[:, :, 1 + c] = sem == c
        n_hash = self.channels - 10
        if n_hash > 0:
            ii, jj = np.meshgrid(np.arange(nh), np.arange(nw), indexing="ij")
            for c in range(n_hash):
                out[:, :, 10 + c] = 2.0 * hash_unit(self.seed, ii, jj, c) - 1.0
        return out
