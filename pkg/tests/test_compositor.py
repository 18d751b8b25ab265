"""Compositing and scene-level metrics."""

import numpy as np
import pytest

from cityforge.compositor import (
    camera_error,
    composite,
    composite_channels,
    depth_error,
    derive_masks,
    style_interpolate,
)
from cityforge.errors import DegenerateInputError, ValidationError
from cityforge.sceneparam import StyleCode
from cityforge.trajectory import Trajectory, look_at_pose
from cityforge.volren import CameraIntrinsics, CameraPose, RenderOutput


def make_output(rng, shape=(8, 8), alpha=None, depth=None, instance=0):
    h, w = shape
    color = rng.random((h, w, 3))
    if alpha is None:
        alpha = rng.random((h, w))
    if depth is None:
        depth = rng.uniform(1, 100, (h, w))
    sem = rng.integers(0, 9, (h, w)).astype(np.uint8)
    inst = np.full((h, w), instance, np.int32)
    return RenderOutput(color, np.asarray(depth, float), np.asarray(alpha, float), sem, inst)


def test_no_buildings_background_mask_all_ones():
    rng = np.random.default_rng(0)
    bg = make_output(rng)
    masks = derive_masks(bg, [])
    assert len(masks) == 1
    assert (masks[0] == 1).all()
    res = composite(bg, [], masks)
    np.testing.assert_array_equal(res.image, bg.color)
    # idempotent: compositing the already composited background changes nothing
    res2 = composite(bg, [], derive_masks(bg, []))
    np.testing.assert_array_equal(res2.image, res.image)


def test_occluding_building_wins():
    rng = np.random.default_rng(1)
    bg = make_output(rng, (8, 8), alpha=np.ones((8, 8)), depth=np.full((8, 8), 50.0))
    b = make_output(rng, (8, 8), alpha=np.ones((8, 8)), depth=np.full((8, 8), 10.0), instance=1)
    masks = derive_masks(bg, [b])
    assert (masks[1] == 1).all()
    assert (masks[0] == 0).all()


def test_low_alpha_building_excluded():
    rng = np.random.default_rng(2)
    bg = make_output(rng, (4, 4), alpha=np.ones((4, 4)), depth=np.full((4, 4), 50.0))
    b = make_output(rng, (4, 4), alpha=np.full((4, 4), 0.3), depth=np.full((4, 4), 10.0))
    masks = derive_masks(bg, [b])
    assert (masks[0] == 1).all()


def test_two_buildings_min_depth_oracle():
    rng = np.random.default_rng(3)
    bg = make_output(rng, (16, 16), alpha=np.ones((16, 16)), depth=np.full((16, 16), 90.0))
    b1 = make_output(rng, (16, 16), alpha=(rng.random((16, 16)) > 0.3).astype(float), instance=1)
    b2 = make_output(rng, (16, 16), alpha=(rng.random((16, 16)) > 0.3).astype(float), instance=2)
    masks = derive_masks(bg, [b1, b2])
    # elementwise oracle
    for i in range(16):
        for j in range(16):
            cands = [(90.0, 0)]
            if b1.alpha[i, j] >= 0.5:
                cands.append((b1.depth[i, j], 1))
            if b2.alpha[i, j] >= 0.5:
                cands.append((b2.depth[i, j], 2))
            want = min(cands)[1]
            got = [k for k in range(3) if masks[k][i, j] == 1]
            assert got == [want]


def test_masks_partition_and_composite_oracle():
    rng = np.random.default_rng(4)
    for _ in range(20):
        bg = make_output(rng)
        bs = [make_output(rng, instance=k + 1) for k in range(3)]
        masks = derive_masks(bg, bs)
        total = sum(m.astype(int) for m in masks)
        assert (total == 1).all()
        res = composite(bg, bs, masks)
        srcs = [bg] + bs
        for i in range(8):
            for j in range(8):
                k = int(res.winner[i, j])
                assert masks[k][i, j] == 1
                assert (res.image[i, j] == srcs[k].color[i, j]).all()


def test_composite_rejects_non_partition():
    rng = np.random.default_rng(5)
    bg = make_output(rng)
    masks = [np.ones((8, 8), np.uint8), np.ones((8, 8), np.uint8)]
    with pytest.raises(ValidationError):
        composite(bg, [make_output(rng)], masks)


def test_composite_channels_select_winner():
    rng = np.random.default_rng(6)
    bg = make_output(rng, (4, 4), alpha=np.ones((4, 4)), depth=np.full((4, 4), 30.0))
    b = make_output(rng, (4, 4), alpha=np.ones((4, 4)), depth=np.full((4, 4), 5.0), instance=7)
    masks = derive_masks(bg, [b])
    res = composite(bg, [b], masks)
    sel = composite_channels(bg, [b], res.winner)
    assert (sel.instance == 7).all()
    assert (sel.depth == 5.0).all()


def test_resolution_mismatch():
    rng = np.random.default_rng(7)
    with pytest.raises(ValidationError):
        derive_masks(make_output(rng, (4, 4)), [make_output(rng, (8, 8))])


# ---------------------------------------------------------------------------
# Depth error
# ---------------------------------------------------------------------------


def test_depth_error_identity_and_affine():
    rng = np.random.default_rng(8)
    d = rng.uniform(10, 50, (16, 16))
    assert depth_error(d, d) == pytest.approx(0.0, abs=1e-12)
    assert depth_error(2.0 * d + 3.0, d) == pytest.approx(0.0, abs=1e-9)


def test_depth_error_anticorrelated_is_four():
    rng = np.random.default_rng(9)
    d = rng.uniform(-5, 5, (32, 32))
    assert depth_error(-d, d) == pytest.approx(4.0, abs=1e-9)


def test_depth_error_symmetric():
    rng = np.random.default_rng(10)
    a = rng.uniform(0, 10, (8, 8))
    b = rng.uniform(0, 10, (8, 8))
    assert depth_error(a, b) == pytest.approx(depth_error(b, a), abs=1e-12)


def test_depth_error_degenerate():
    with pytest.raises(DegenerateInputError):
        depth_error(np.full((4, 4), 3.0), np.arange(16.0).reshape(4, 4))


def test_depth_error_mask_and_inf_handling():
    rng = np.random.default_rng(11)
    a = rng.uniform(1, 9, (8, 8))
    b = a.copy()
    a[0, 0] = np.inf  # excluded by the default mask
    assert depth_error(a, b) == pytest.approx(0.0, abs=1e-12)


# ---------------------------------------------------------------------------
# Camera error
# ---------------------------------------------------------------------------


def _traj_from_positions(positions):
    intr = CameraIntrinsics(50.0, 50.0, 32.0, 24.0, 64, 48)
    frames = tuple(
        (look_at_pose(np.asarray(p, float), np.asarray(p, float) + np.array([0.0, 1.0, -0.5])), intr)
        for p in positions
    )
    return Trajectory(frames)


def test_camera_error_identity():
    t = _traj_from_positions([[0, 0, 10], [5, 0, 10], [5, 5, 10], [0, 5, 10]])
    assert camera_error(t, t) == pytest.approx(0.0, abs=1e-12)


def test_camera_error_similarity_invariance():
    rng = np.random.default_rng(12)
    pos = rng.uniform(0, 50, (10, 3))
    t1 = _traj_from_positions(pos)
    for scale in (0.5, 2.0, 7.3):
        for shift in (np.zeros(3), np.array([100.0, -40.0, 12.0])):
            t2 = _traj_from_positions(scale * (pos - pos.mean(axis=0)) + pos.mean(axis=0) + shift)
            assert camera_error(t1, t2) == pytest.approx(0.0, abs=1e-9)


def test_camera_error_perturbed_matches_hand_formula():
    pos = np.array([[0.0, 0, 0], [10.0, 0, 0], [10.0, 10, 0], [0.0, 10, 0]])
    pos_b = pos.copy()
    pos_b[0] += np.array([1.0, -2.0, 0.5])
    t1 = _traj_from_positions(pos)
    t2 = _traj_from_positions(pos_b)

    def norm(c):
        c = c - c.mean(axis=0)
        return c / np.sqrt((c**2).sum(axis=1).mean())

    expected = ((norm(pos) - norm(pos_b)) ** 2).sum(axis=1).mean()
    assert camera_error(t1, t2) == pytest.approx(expected, rel=1e-12)
    assert camera_error(t2, t1) == pytest.approx(expected, rel=1e-12)


def test_camera_error_validation():
    t1 = _traj_from_positions([[0, 0, 0], [1, 0, 0]])
    t2 = _traj_from_positions([[0, 0, 0], [1, 0, 0], [2, 0, 0]])
    with pytest.raises(ValidationError):
        camera_error(t1, t2)
    same = _traj_from_positions([[3, 3, 3], [3, 3, 3]])
    with pytest.raises(DegenerateInputError):
        camera_error(same, same)


# ---------------------------------------------------------------------------
# Style interpolation
# ---------------------------------------------------------------------------


def test_style_interpolate_endpoints_and_symmetry():
    z1 = StyleCode.seeded(1)
    z2 = StyleCode.seeded(2)
    np.testing.assert_array_equal(style_interpolate(z1, z2, 0.0).z, z1.z)
    np.testing.assert_array_equal(style_interpolate(z1, z2, 1.0).z, z2.z)
    opp = StyleCode(-z1.z)
    np.testing.assert_allclose(style_interpolate(z1, opp, 0.5).z, 0.0, atol=1e-7)
    with pytest.raises(ValidationError):
        style_interpolate(z1, StyleCode(np.zeros(8, np.float32)), 0.5)


def test_camera_error_rotation_term():
    pos = [[0.0, 0, 0], [10.0, 0, 0], [10.0, 10, 0]]
    t1 = _traj_from_positions(pos)
    assert camera_error(t1, t1, include_rotation=True) == pytest.approx(0.0, abs=1e-9)
    # rotate every camera by a fixed 90 degrees around its forward axis
    rolled = []
    roll = np.array([[0.0, -1.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, 1.0]])
    for pose, intr in t1.frames:
        rolled.append((CameraPose(roll @ pose.rotation, pose.position), intr))
    t2 = Trajectory(tuple(rolled))
    assert camera_error(t1, t2) == pytest.approx(0.0, abs=1e-12)  # centers unchanged
    with_rot = camera_error(t1, t2, include_rotation=True)
    assert with_rot == pytest.approx((np.pi / 2) ** 2, rel=1e-9)
