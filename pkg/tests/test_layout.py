"""Implicit layout volume, windows, and building instancing."""


import numpy as np
import pytest

from cityforge.errors import ValidationError
from cityforge.geo import HeightField, SemanticClass, SemanticMap, synthetic_config
from cityforge.layout import (
    FACADE,
    ROOF,
    BuildingInstance,
    CityLayout,
    edit_building_height,
    extract_window,
    instance_label_map,
    instantiate_buildings,
    relabel_instance_window,
)


def make_layout(sem, hgt, seed=0):
    sem = np.asarray(sem, np.uint8)
    cfg = synthetic_config(sem.shape[1], sem.shape[0], seed=seed)
    return CityLayout(SemanticMap(sem, cfg), HeightField(np.asarray(hgt, np.int32)))


def random_layout(rng, size=32, density=0.3, hmax=20):
    sem = np.where(
        rng.random((size, size)) < density,
        np.uint8(SemanticClass.BUILDINGS),
        rng.integers(3, 7, size=(size, size)).astype(np.uint8),
    )
    hgt = rng.integers(0, hmax, size=(size, size)).astype(np.int32)
    hgt[sem != SemanticClass.BUILDINGS] = rng.integers(0, 5)
    return make_layout(sem, hgt)


def flood_fill_components(grid):
    """Brute-force 4-connected components of the buildings class (oracle).

    Works on a padded flat grid so neighbor probes need no bounds checks;
    returns one sorted (i, j) cell list per component, in scanline order
    of each component's first cell.
    """
    h, w = grid.shape
    wp = w + 2
    padded = np.zeros((h + 2, w + 2), bool)
    padded[1:-1, 1:-1] = np.asarray(grid) == SemanticClass.BUILDINGS
    flat = padded.ravel().tolist()
    seen = bytearray(len(flat))
    comps = []
    for start in np.flatnonzero(padded.ravel()).tolist():
        if seen[start]:
            continue
        seen[start] = 1
        stack = [start]
        cells = []
        while stack:
            c = stack.pop()
            cells.append(c)
            for nb in (c - 1, c + 1, c - wp, c + wp):
                if flat[nb] and not seen[nb]:
                    seen[nb] = 1
                    stack.append(nb)
        comps.append(sorted((c // wp - 1, c % wp - 1) for c in cells))
    return comps


# ---------------------------------------------------------------------------
# layout_at
# ---------------------------------------------------------------------------


def test_layout_at_boundary_inclusive():
    lay = make_layout([[SemanticClass.BUILDINGS]], [[21]])
    assert lay.at(0, 0, 21) == SemanticClass.BUILDINGS
    assert lay.at(0, 0, 22) == SemanticClass.NULL


def test_layout_at_water_ground():
    lay = make_layout([[SemanticClass.WATER]], [[0]])
    assert lay.at(0, 0, 0) == SemanticClass.WATER
    assert lay.at(0, 0, 1) == SemanticClass.NULL


def test_layout_at_out_of_bounds_is_null():
    lay = make_layout([[SemanticClass.ROADS]], [[4]])
    assert lay.at(-1, 0, 0) == SemanticClass.NULL
    assert lay.at(0, 5, 0) == SemanticClass.NULL


def test_ground_always_occupied():
    rng = np.random.default_rng(1)
    lay = random_layout(rng)
    ii, jj = np.meshgrid(np.arange(32), np.arange(32), indexing="ij")
    cls = lay.classes_at(ii, jj, np.zeros_like(ii))
    assert (cls != SemanticClass.NULL).all()


def test_classes_at_matches_scalar():
    rng = np.random.default_rng(2)
    lay = random_layout(rng)
    ii = rng.integers(-2, 34, 300)
    jj = rng.integers(-2, 34, 300)
    kk = rng.integers(0, 25, 300)
    vec = lay.classes_at(ii, jj, kk)
    ref = np.array([lay.at(i, j, k) for i, j, k in zip(ii, jj, kk)])
    assert np.array_equal(vec, ref)


# ---------------------------------------------------------------------------
# extract_window
# ---------------------------------------------------------------------------


def test_window_identity_crop():
    rng = np.random.default_rng(3)
    lay = random_layout(rng, size=16)
    win = extract_window(lay, (8, 8), (16, 16, 64))
    assert np.array_equal(win.semantic_patch, lay.semantic.grid)
    assert np.array_equal(win.height_patch, lay.height.grid)
    assert win.origin == (0, 0)


def test_window_corner_padding():
    lay = make_layout(np.full((8, 8), SemanticClass.WATER), np.zeros((8, 8)))
    win = extract_window(lay, (0, 0), (4, 4, 16))
    # center (0,0) with 4x4 dims puts the patch origin at (-2,-2)
    assert win.origin == (-2, -2)
    assert (win.semantic_patch[:2, :] == SemanticClass.OTHERS).all()
    assert (win.semantic_patch[:, :2] == SemanticClass.OTHERS).all()
    assert (win.semantic_patch[2:, 2:] == SemanticClass.WATER).all()
    assert (win.height_patch[:2, :] == 0).all()


def test_building_window_dims_constant():
    from cityforge.layout import BUILDING_WINDOW_DIMS

    assert BUILDING_WINDOW_DIMS == (672, 672, 640)


# ---------------------------------------------------------------------------
# instantiate_buildings
# ---------------------------------------------------------------------------


def test_no_buildings_empty_list():
    lay = make_layout(np.full((8, 8), SemanticClass.WATER), np.zeros((8, 8)))
    assert instantiate_buildings(lay.semantic) == []


def test_diagonal_blobs_are_two_instances():
    sem = np.full((6, 6), SemanticClass.OTHERS, np.uint8)
    sem[1, 1] = sem[1, 2] = SemanticClass.BUILDINGS
    sem[2, 3] = sem[3, 3] = SemanticClass.BUILDINGS  # touches (1,2) only diagonally
    lay = make_layout(sem, np.zeros((6, 6)))
    inst = instantiate_buildings(lay.semantic)
    assert len(inst) == 2
    oracle = flood_fill_components(sem)
    got = [sorted(map(tuple, i.footprint)) for i in inst]
    assert got == oracle


def test_checkerboard_instances():
    ii, jj = np.meshgrid(np.arange(8), np.arange(8), indexing="ij")
    sem = np.where((ii + jj) % 2 == 0, SemanticClass.BUILDINGS, SemanticClass.OTHERS).astype(np.uint8)
    inst = instantiate_buildings(SemanticMap(sem, synthetic_config(8, 8)))
    assert len(inst) == 32


def test_instances_match_flood_fill_oracle():
    rng = np.random.default_rng(42)
    for _ in range(50):
        lay = random_layout(rng, size=24, density=0.35)
        inst = instantiate_buildings(lay.semantic, lay.height)
        oracle = flood_fill_components(lay.semantic.grid)
        assert len(inst) == len(oracle)
        for got, want in zip(inst, oracle):
            assert sorted(map(tuple, got.footprint)) == want


def test_instance_partition_and_ids():
    rng = np.random.default_rng(7)
    lay = random_layout(rng, size=40, density=0.3)
    inst = instantiate_buildings(lay.semantic, lay.height)
    total = sum(i.size for i in inst)
    assert total == int((lay.semantic.grid == SemanticClass.BUILDINGS).sum())
    assert [i.id for i in inst] == list(range(1, len(inst) + 1))
    # scanline order: first cells strictly increase in flat index
    firsts = [i.footprint[0, 0] * 40 + i.footprint[0, 1] for i in inst]
    assert firsts == sorted(firsts)
    # height_max is the footprint max
    lm = instance_label_map(inst, lay.shape)
    for i in inst:
        assert i.height_max == lay.height.grid[lm == i.id].max()


def test_instance_center_is_bbox_center():
    sem = np.full((10, 10), SemanticClass.OTHERS, np.uint8)
    sem[2:5, 3:8] = SemanticClass.BUILDINGS
    inst = instantiate_buildings(SemanticMap(sem, synthetic_config(10, 10)))
    assert len(inst) == 1
    assert inst[0].center == ((2 + 4) // 2, (3 + 7) // 2)
    assert inst[0].bbox == (2, 3, 4, 7)


# ---------------------------------------------------------------------------
# relabel_instance_window
# ---------------------------------------------------------------------------


def _two_building_scene():
    sem = np.full((12, 12), SemanticClass.OTHERS, np.uint8)
    sem[2:5, 2:5] = SemanticClass.BUILDINGS
    sem[7:9, 7:9] = SemanticClass.BUILDINGS
    sem[5, 2:10] = SemanticClass.ROADS
    hgt = np.zeros((12, 12), np.int32)
    hgt[2:5, 2:5] = 21
    hgt[7:9, 7:9] = 9
    hgt[5, 2:10] = 4
    return make_layout(sem, hgt)


def test_relabel_facade_and_roof_column():
    lay = _two_building_scene()
    inst = instantiate_buildings(lay.semantic, lay.height)
    win = extract_window(lay, inst[0].center, (12, 12, 64))
    rw = relabel_instance_window(win, inst[0], inst)
    wi, wj = 3 - rw.origin[0], 3 - rw.origin[1]
    for k in range(21):
        assert rw.at(wi, wj, k) == FACADE
    assert rw.at(wi, wj, 21) == ROOF
    assert rw.at(wi, wj, 22) == SemanticClass.NULL


def test_relabel_other_instance_nulled():
    lay = _two_building_scene()
    inst = instantiate_buildings(lay.semantic, lay.height)
    win = extract_window(lay, inst[0].center, (12, 12, 64))
    rw = relabel_instance_window(win, inst[0], inst)
    for k in range(12):
        assert rw.at(7 - rw.origin[0], 7 - rw.origin[1], k) == SemanticClass.NULL


def test_relabel_keeps_roads():
    lay = _two_building_scene()
    inst = instantiate_buildings(lay.semantic, lay.height)
    win = extract_window(lay, inst[0].center, (12, 12, 64))
    rw = relabel_instance_window(win, inst[0], inst)
    assert rw.at(5 - rw.origin[0], 3 - rw.origin[1], 0) == SemanticClass.ROADS


def test_relabel_roof_counts_per_column():
    lay = _two_building_scene()
    inst = instantiate_buildings(lay.semantic, lay.height)
    win = extract_window(lay, inst[0].center, (12, 12, 64))
    rw = relabel_instance_window(win, inst[0], inst)
    for i, j in map(tuple, inst[0].footprint):
        wi, wj = i - rw.origin[0], j - rw.origin[1]
        col = [rw.at(wi, wj, k) for k in range(64)]
        assert col.count(ROOF) == 1
        assert col.count(FACADE) == int(lay.height.grid[i, j])


def test_relabel_requires_overlap():
    lay = _two_building_scene()
    inst = instantiate_buildings(lay.semantic, lay.height)
    win = extract_window(lay, (0, 0), (4, 4, 16))
    with pytest.raises(ValidationError):
        relabel_instance_window(win, inst[1], inst)


# ---------------------------------------------------------------------------
# edit_building_height
# ---------------------------------------------------------------------------


def test_edit_height_noop():
    lay = _two_building_scene()
    inst = instantiate_buildings(lay.semantic, lay.height)
    out = edit_building_height(lay, inst[0], 21)
    assert np.array_equal(out.height.grid, lay.height.grid)
    assert np.array_equal(out.semantic.grid, lay.semantic.grid)


def test_edit_height_changes_only_footprint():
    lay = _two_building_scene()
    inst = instantiate_buildings(lay.semantic, lay.height)
    out = edit_building_height(lay, inst[0], 40)
    changed = np.argwhere(out.height.grid != lay.height.grid)
    assert {tuple(c) for c in changed} == {tuple(c) for c in inst[0].footprint}
    assert (out.height.grid[inst[0].footprint[:, 0], inst[0].footprint[:, 1]] == 40).all()
    # original untouched, semantic preserved
    assert lay.height.grid[3, 3] == 21
    assert np.array_equal(out.semantic.grid, lay.semantic.grid)


def test_edit_height_zero_rejected():
    lay = _two_building_scene()
    inst = instantiate_buildings(lay.semantic, lay.height)
    with pytest.raises(ValidationError):
        edit_building_height(lay, inst[0], 0)


def test_edit_unknown_instance_rejected():
    lay = _two_building_scene()
    fake = BuildingInstance(
        id=99,
        center=(0, 0),
        footprint=np.array([[0, 0]], np.int32),
        bbox=(0, 0, 0, 0),
    )
    with pytest.raises(ValidationError):
        edit_building_height(lay, fake, 10)
