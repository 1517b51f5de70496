import numpy as np
import pytest
from hypothesis import given

from planefuse.geometry import (PointCloud, Pose, RigidTransform, Trajectory, apply_transform,
                                best_rotation, compose, fit_rigid, invert, rotation_about_axis,
                                rotation_angle, rotation_between, rotation_distance,
                                transform_plane)
from planefuse.segmentation import fit_plane

from conftest import random_rotation, random_transform, rect_segment, seeds


def test_cloud_colors_must_match_points():
    with pytest.raises(ValueError):
        PointCloud(np.zeros((3, 3)), np.zeros((2, 3), dtype=np.uint8))


def test_cloud_rejects_nonfinite():
    with pytest.raises(ValueError):
        PointCloud([[0.0, np.nan, 0.0]])


def test_cloud_is_read_only():
    c = PointCloud(np.zeros((2, 3)))
    with pytest.raises(ValueError):
        c.points[0, 0] = 1.0


def test_apply_identity_and_translation():
    c = PointCloud([[0.0, 0.0, 0.0], [1.0, 2.0, 3.0]], [[1, 2, 3], [4, 5, 6]], "vision")
    same = apply_transform(RigidTransform.identity(), c)
    assert np.array_equal(same.points, c.points)
    moved = apply_transform(RigidTransform.from_translation([1, 0, 0]), c)
    assert np.allclose(moved.points[0], [1, 0, 0])
    assert moved.source_tag == "vision" and np.array_equal(moved.colors, c.colors)


def test_rotation_90_about_z():
    R = rotation_about_axis([0, 0, 1], np.pi / 2)
    p = RigidTransform(R).apply([[1.0, 0.0, 0.0]])
    assert np.allclose(p, [[0.0, 1.0, 0.0]], atol=1e-15)


def test_transform_plane_examples():
    seg = rect_segment([-1, -1, 0], [1, 1, 0])
    assert transform_plane(RigidTransform.identity(), seg).distance == pytest.approx(seg.distance)
    up = transform_plane(RigidTransform.from_translation([0, 0, 2]), seg)
    assert abs(up.distance - (seg.distance + 2 * seg.normal[2])) < 1e-12

    wall = rect_segment([1, -1, -1], [1, 1, 1], viewpoint=(5, 0, 0))
    assert np.allclose(wall.normal, [1, 0, 0]) and abs(wall.distance - 1) < 1e-12
    rot = transform_plane(RigidTransform(rotation_about_axis([0, 0, 1], np.pi / 2)), wall)
    assert np.allclose(rot.normal, [0, 1, 0], atol=1e-12)
    assert abs(rot.distance - 1) < 1e-12
    assert np.allclose(rot.points @ rot.normal, rot.distance, atol=1e-12)


@given(seeds)
def test_transform_plane_commutes_with_refit(seed):
    rng = np.random.default_rng(seed)
    seg = rect_segment([-2, -1, 0.5], [2, 1, 0.5], n=200, seed=seed)
    T = random_transform(rng)
    moved = transform_plane(T, seg)
    n, d, _ = fit_plane(T.apply(seg.points))
    s = np.sign(n @ moved.normal)
    assert np.allclose(s * n, moved.normal, atol=1e-6)
    assert abs(s * d - moved.distance) < 1e-6
    assert np.allclose(moved.extent_min, T.apply(seg.points).min(axis=0))


@given(seeds)
def test_inverse_round_trip(seed):
    rng = np.random.default_rng(seed)
    T = random_transform(rng, 100.0)
    pts = rng.uniform(-50, 50, (100, 3))
    c = PointCloud(pts)
    back = apply_transform(invert(T), apply_transform(T, c))
    assert np.abs(back.points - pts).max() < 1e-7
    I = compose(invert(T), T)
    assert np.abs(I.matrix() - np.eye(4)).max() < 1e-9


@given(seeds)
def test_compose_associative(seed):
    rng = np.random.default_rng(seed)
    A, B, C = (random_transform(rng) for _ in range(3))
    left, right = compose(compose(A, B), C), compose(A, compose(B, C))
    assert np.abs(left.matrix() - right.matrix()).max() < 1e-9
    p = rng.normal(size=(5, 3))
    assert np.allclose(compose(A, B).apply(p), A.apply(B.apply(p)), atol=1e-12)


def test_compose_resets_rank():
    T = RigidTransform(np.eye(3), [0, 0, 1], 1, ([1.0, 0, 0], [0, 1.0, 0]))
    out = compose(RigidTransform.identity(), T)
    assert out.translation_rank == 3 and out.null_directions == ()
    assert np.allclose(out.translation, [0, 0, 1])


def test_translations_compose():
    out = compose(RigidTransform.from_translation([1, 0, 0]), RigidTransform.from_translation([0, 2, 0]))
    assert np.allclose(out.translation, [1, 2, 0])


def test_rank_annotation_count_checked():
    with pytest.raises(ValueError):
        RigidTransform(np.eye(3), np.zeros(3), 2, ())


@given(seeds)
def test_quaternion_round_trip(seed):
    rng = np.random.default_rng(seed)
    T = random_transform(rng)
    q = T.quaternion()
    assert q[3] >= 0 and abs(np.linalg.norm(q) - 1) < 1e-12
    back = RigidTransform.from_quaternion(q, T.translation)
    assert rotation_distance(back.rotation, T.rotation) < 1e-9


def test_rotation_angle_small_is_accurate():
    for a in (1e-12, 1e-9, 1e-5, 0.3, np.pi - 1e-6):
        assert abs(rotation_angle(rotation_about_axis([1, 2, 3], a)) - a) < 1e-9 * max(1, a) + 1e-15


@given(seeds)
def test_rotation_between(seed):
    rng = np.random.default_rng(seed)
    a, b = rng.normal(size=3), rng.normal(size=3)
    R = rotation_between(a, b)
    assert np.allclose(R @ (a / np.linalg.norm(a)), b / np.linalg.norm(b), atol=1e-9)
    assert abs(np.linalg.det(R) - 1) < 1e-9
    # antiparallel input still gives a proper rotation
    R2 = rotation_between(a, -a)
    assert np.allclose(R2 @ a, -a, atol=1e-9) and np.allclose(R2.T @ R2, np.eye(3), atol=1e-9)


@given(seeds)
def test_best_rotation_and_fit_rigid(seed):
    rng = np.random.default_rng(seed)
    R = random_rotation(rng)
    src = rng.normal(size=(10, 3))
    assert rotation_distance(best_rotation(src, src @ R.T), R) < 1e-9
    T = random_transform(rng)
    est = fit_rigid(src, T.apply(src))
    assert np.abs(est.matrix() - T.matrix()).max() < 1e-9


def test_trajectory_needs_increasing_time():
    p = Pose(0.0, RigidTransform.identity())
    with pytest.raises(ValueError):
        Trajectory((p, p))
    t = Trajectory.from_positions([[0, 0, 0], [1, 0, 0]])
    assert np.allclose(t.timestamps, [0, 1]) and np.allclose(t.positions[1], [1, 0, 0])
