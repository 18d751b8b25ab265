"""Token-grid synthesis: tokenizer, samplers, extrapolation, inpainting, metrics."""

import math

import numpy as np
import pytest

from cityforge.errors import ValidationError
from cityforge.geo import SemanticClass
from cityforge.synth import (
    MASK_TOKEN,
    Codebook,
    ExemplarTokenizer,
    MetricConfig,
    PatchSpec,
    ProceduralSampler,
    ReplaySampler,
    TokenGrid,
    _placements,
    combined_patch_loss,
    extrapolate,
    height_l1,
    height_smoothness,
    inpaint,
    semantic_cross_entropy,
)


def test_patch_spec_geometry():
    spec = PatchSpec()
    assert spec.token_side == 32
    assert spec.stride_px == 384  # 512 * (1 - 0.25)


def test_placement_arithmetic():
    assert _placements(512, 512, 384) == [0]
    assert _placements(896, 512, 384) == [0, 384]
    assert _placements(1280, 512, 384) == [0, 384, 768]


# ---------------------------------------------------------------------------
# Tokenizer
# ---------------------------------------------------------------------------


def test_tokenizer_roundtrip_on_exemplar_tiles():
    tok = ExemplarTokenizer()
    rng = np.random.default_rng(0)
    cells = rng.integers(0, tok.K, size=(6, 6), dtype=np.int32)
    sem, hgt = tok.decode(TokenGrid(cells))
    again = tok.encode(sem, hgt)
    assert np.array_equal(again.cells, cells)


def test_tokenizer_majority_and_height_snap():
    tok = ExemplarTokenizer()
    sem = np.full((16, 16), int(SemanticClass.BUILDINGS), np.uint8)
    sem[:4, :4] = SemanticClass.ROADS  # minority
    hgt = np.full((16, 16), 37, np.int32)
    hgt[:4, :4] = 4
    grid = tok.encode(sem, hgt)
    assert grid.cells.shape == (1, 1)
    idx = int(grid.cells[0, 0])
    assert tok.token_class[idx] == SemanticClass.BUILDINGS
    # mean height pulled down by the road corner: (37*240 + 4*16)/256 = 34.94
    assert tok.token_height[idx] == 35


def test_tokenizer_decode_rejects_masks():
    tok = ExemplarTokenizer()
    with pytest.raises(ValidationError):
        tok.decode(TokenGrid(np.array([[MASK_TOKEN]])))


def test_codebook_roundtrip(tmp_path):
    tok = ExemplarTokenizer()
    cb = tok.codebook()
    assert cb.size == 512 and cb.dim == 512
    cb.save(tmp_path / "codebook.bin")
    cb2 = Codebook.load(tmp_path / "codebook.bin")
    assert np.array_equal(cb.entries, cb2.entries)


# ---------------------------------------------------------------------------
# Extrapolation
# ---------------------------------------------------------------------------


def test_single_placement_equals_sampler_output():
    tok = ExemplarTokenizer()
    rng = np.random.default_rng(5)
    source = rng.integers(0, tok.K, size=(32, 32), dtype=np.int32)
    sampler = ReplaySampler(source)
    sm, hf = extrapolate((512, 512), tok, sampler, seed=1)
    sem_ref, hgt_ref = tok.decode(TokenGrid(source))
    assert np.array_equal(sm.grid, sem_ref)
    assert np.array_equal(hf.grid, hgt_ref)


def test_extrapolate_determinism():
    tok = ExemplarTokenizer()
    sampler = ProceduralSampler(tok)
    a = extrapolate((896, 512), tok, sampler, seed=42)
    b = extrapolate((896, 512), tok, sampler, seed=42)
    assert np.array_equal(a[0].grid, b[0].grid)
    assert np.array_equal(a[1].grid, b[1].grid)
    c = extrapolate((896, 512), tok, sampler, seed=43)
    assert not np.array_equal(a[0].grid, c[0].grid)


class CountingSampler:
    """Fills every masked token with a call counter (context ignored)."""

    def __init__(self):
        self.calls = 0

    def next(self, grid, seed):
        self.calls += 1
        out = np.where(grid.cells == MASK_TOKEN, self.calls, grid.cells)
        return TokenGrid(out, grid.origin)


def test_context_tokens_never_rewritten():
    tok = ExemplarTokenizer(codebook_size=512)
    sampler = CountingSampler()
    ds = tok.spec.downsample
    from cityforge.synth import _run_placements

    token_map = np.full((512 // ds, 896 // ds), MASK_TOKEN, np.int32)
    _run_placements(token_map, sampler, seed=0, spec=tok.spec, width_px=896, height_px=512)
    assert sampler.calls == 2
    # first placement owns token columns 0..31, second only the new 32..55
    assert (token_map[:, :32] == 1).all()
    assert (token_map[:, 32:] == 2).all()


def test_procedural_seams_and_road_continuity():
    tok = ExemplarTokenizer()
    sampler = ProceduralSampler(tok)
    for seed in range(20):
        sm, _ = extrapolate((896, 896), tok, sampler, seed=seed)
        sem = sm.grid
        # direct evaluation of the global field over the whole map: any seam
        # artifact would show as a mismatch
        full = sampler.next(TokenGrid(np.full((56, 56), MASK_TOKEN, np.int32), (0, 0)), seed)
        sem_ref, _ = tok.decode(full)
        assert np.array_equal(sem, sem_ref)
        # road rows/cols span the full extent: no stubs at stride boundaries
        road = sem == SemanticClass.ROADS
        full_rows = road.all(axis=1)
        full_cols = road.all(axis=0)
        assert full_rows.any() and full_cols.any()
        # every road cell has a road 4-neighbor (lines, not specks)
        ii, jj = np.nonzero(road)
        padded = np.pad(road, 1)
        neigh = (
            padded[ii, jj + 1].astype(int)
            + padded[ii + 2, jj + 1]
            + padded[ii + 1, jj]
            + padded[ii + 1, jj + 2]
        )
        assert (neigh >= 1).all()


def test_extrapolate_rejects_small_target():
    tok = ExemplarTokenizer()
    with pytest.raises(ValidationError):
        extrapolate((256, 512), tok, ProceduralSampler(tok), seed=0)


# ---------------------------------------------------------------------------
# Inpainting
# ---------------------------------------------------------------------------


def test_inpaint_empty_region_rejected():
    tok = ExemplarTokenizer()
    sm, hf = extrapolate((512, 512), tok, ProceduralSampler(tok), seed=3)
    with pytest.raises(ValidationError):
        inpaint(sm, hf, np.zeros(sm.grid.shape, bool), tok, ProceduralSampler(tok), seed=3)


def test_inpaint_full_region_equals_fresh_extrapolate():
    tok = ExemplarTokenizer()
    sampler = ProceduralSampler(tok)
    sm, hf = extrapolate((512, 512), tok, sampler, seed=3)
    region = np.ones(sm.grid.shape, bool)
    sm2, hf2 = inpaint(sm, hf, region, tok, sampler, seed=99)
    sm3, hf3 = extrapolate((512, 512), tok, sampler, seed=99)
    assert np.array_equal(sm2.grid, sm3.grid)
    assert np.array_equal(hf2.grid, hf3.grid)


def test_inpaint_locality_single_block():
    tok = ExemplarTokenizer()
    sampler = ProceduralSampler(tok)
    sm, hf = extrapolate((512, 512), tok, sampler, seed=3)
    region = np.zeros(sm.grid.shape, bool)
    region[100:110, 200:210]= True  # straddles blocks (6,12)-(6,13)
    sm2, hf2 = inpaint(sm, hf, region, tok, sampler, seed=77)
    changed_blocks = np.zeros((32, 32), bool)
    changed_blocks[6, 12:14] = True
    px = np.repeat(np.repeat(changed_blocks, 16, 0), 16, 1)
    assert np.array_equal(sm2.grid[~px], sm.grid[~px])
    assert np.array_equal(hf2.grid[~px], hf.grid[~px])


def test_inpaint_locality_random_cases():
    tok = ExemplarTokenizer()
    sampler = ProceduralSampler(tok)
    sm, hf = extrapolate((512, 512), tok, sampler, seed=8)
    rng = np.random.default_rng(1)
    for case in range(25):
        i0, j0 = rng.integers(0, 480, 2)
        hh, ww = rng.integers(1, 32, 2)
        region = np.zeros(sm.grid.shape, bool)
        region[i0 : i0 + hh, j0 : j0 + ww] = True
        out_s, out_h = inpaint(sm, hf, region, tok, sampler, seed=1000 + case)
        blocks = region.reshape(32, 16, 32, 16).any(axis=(1, 3))
        px = np.repeat(np.repeat(blocks, 16, 0), 16, 1)
        assert np.array_equal(out_s.grid[~px], sm.grid[~px])
        assert np.array_equal(out_h.grid[~px], hf.grid[~px])


# ---------------------------------------------------------------------------
# Metrics
# ---------------------------------------------------------------------------


def test_height_l1_basics():
    rng = np.random.default_rng(2)
    a = rng.integers(0, 50, (4, 4)).astype(np.int32)
    assert height_l1(a, a) == 0.0
    assert height_l1(a + 3, a) == pytest.approx(3.0)
    b = rng.integers(0, 50, (4, 4)).astype(np.int32)
    # direct summation oracle
    expected = sum(abs(int(x) - int(y)) for x, y in zip(a.ravel(), b.ravel())) / 16
    assert height_l1(a, b) == pytest.approx(expected)
    with pytest.raises(ValidationError):
        height_l1(a, np.zeros((3, 3)))


def test_cross_entropy_one_hot_margin():
    gt = np.array([[1, 2], [3, 4]], np.uint8)
    logits = np.zeros((2, 2, 7))
    for i in range(2):
        for j in range(2):
            logits[i, j, gt[i, j]] = 50.0
    assert semantic_cross_entropy(logits, gt) < 1e-12


def test_cross_entropy_uniform_is_log7():
    gt = np.array([[0, 6]], np.uint8)
    logits = np.zeros((1, 2, 7))
    assert semantic_cross_entropy(logits, gt) == pytest.approx(math.log(7), abs=1e-12)


def test_cross_entropy_matches_logsumexp_oracle():
    rng = np.random.default_rng(3)
    logits = rng.normal(size=(3, 3, 7))
    gt = rng.integers(0, 7, (3, 3)).astype(np.uint8)
    # independent oracle with explicit softmax
    total = 0.0
    for i in range(3):
        for j in range(3):
            p = np.exp(logits[i, j]) / np.exp(logits[i, j]).sum()
            total += -math.log(p[gt[i, j]])
    assert semantic_cross_entropy(logits, gt) == pytest.approx(total / 9, rel=1e-9)


def test_smoothness_constant_zero():
    guide = np.ones((4, 4), np.uint8)
    assert height_smoothness(np.full((4, 4), 9), guide) == 0.0


def test_smoothness_edge_aware_downweight():
    h = np.zeros((4, 4))
    h[:, 2:] = 50.0
    guide = np.ones((4, 4), np.uint8)
    guide[:, 2:] = 2  # class boundary exactly on the height step
    val = height_smoothness(h, guide)
    # oracle: single step of 50 per row, weighted exp(-10), mean over 12 x-pairs
    expected = (50.0 * math.exp(-10.0) * 4) / 12
    assert val == pytest.approx(expected, rel=1e-12)
    assert val < 0.1


def test_smoothness_step_in_uniform_region():
    h = np.zeros((4, 4))
    h[:, 2:] = 5.0
    guide = np.ones((4, 4), np.uint8)
    # |dh| * edge fraction: 4 of 12 x-pairs carry the step
    assert height_smoothness(h, guide) == pytest.approx(5.0 * 4 / 12, rel=1e-12)


def test_metrics_nonnegative_and_zero_on_identity():
    rng = np.random.default_rng(4)
    h = rng.integers(0, 30, (8, 8)).astype(np.int32)
    s = rng.integers(1, 7, (8, 8)).astype(np.uint8)
    assert height_l1(h, h) == 0.0
    assert height_smoothness(np.full((8, 8), 3), s) >= 0.0
    logits = rng.normal(size=(8, 8, 7))
    assert semantic_cross_entropy(logits, s) >= 0.0


def test_combined_loss_weights():
    cfg = MetricConfig()
    assert (cfg.lambda_height, cfg.lambda_smooth, cfg.lambda_semantic) == (10.0, 10.0, 1.0)
    gt_h = np.zeros((2, 2), np.int32)
    pred_h = np.ones((2, 2), np.int32)
    gt_s = np.ones((2, 2), np.uint8)
    logits = np.zeros((2, 2, 7))
    val = combined_patch_loss(pred_h, gt_h, logits, gt_s, cfg)
    assert val == pytest.approx(10.0 * 1.0 + 10.0 * 0.0 + 1.0 * math.log(7))


def test_replay_sampler_bounds():
    src = np.zeros((32, 32), np.int32)
    s = ReplaySampler(src)
    with pytest.raises(ValidationError):
        s.next(TokenGrid(np.full((32, 32), MASK_TOKEN), (8, 8)), 0)
