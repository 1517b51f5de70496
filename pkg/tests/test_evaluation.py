import numpy as np
import pytest
from hypothesis import given, settings
from scipy.optimize import minimize
from scipy.spatial.transform import Rotation

from planefuse.errors import InputError
from planefuse.evaluation import ErrorStats, associate, compute_ate, compute_rpe
from planefuse.geometry import Pose, RigidTransform, Trajectory

from conftest import random_transform, seeds


def random_trajectory(rng, n=20, t0=0.0):
    poses = []
    T = random_transform(rng)
    for k in range(n):
        step = RigidTransform(Rotation.from_rotvec(rng.normal(0, 0.1, 3)).as_matrix(),
                              rng.normal(0, 1.0, 3))
        T = T @ step
        poses.append(Pose(t0 + k * 0.5, T))
    return Trajectory(tuple(poses))


def ate_oracle(est_pos, ref_pos):
    # numeric minimization over rotation vector and translation
    def cost(x):
        R = Rotation.from_rotvec(x[:3]).as_matrix()
        return np.sum((est_pos @ R.T + x[3:] - ref_pos) ** 2)
    best = None
    for start in np.random.default_rng(0).normal(0, 1, (8, 6)):
        res = minimize(cost, start, method="BFGS", options={"gtol": 1e-12})
        if best is None or res.fun < best.fun:
            best = res
    R = Rotation.from_rotvec(best.x[:3]).as_matrix()
    return np.linalg.norm(est_pos @ R.T + best.x[3:] - ref_pos, axis=1)


def test_identical_trajectories():
    t = random_trajectory(np.random.default_rng(0))
    for stats in (compute_ate(t, t), compute_rpe(t, t)):
        assert stats.summary() == "rmse=0 min=0 max=0"


def test_one_displaced_pose_matches_oracle():
    rng = np.random.default_rng(1)
    ref = random_trajectory(rng, n=10)
    pos = ref.positions.copy()
    pos[4] += [0.3, 0.0, 0.0]
    est = Trajectory.from_positions(pos, ref.timestamps)
    stats = compute_ate(est, ref)
    oracle = ate_oracle(pos, ref.positions)
    assert stats.rmse == pytest.approx(np.sqrt(np.mean(oracle ** 2)), abs=1e-6)
    assert stats.rmse < 0.3 and stats.max == pytest.approx(oracle.max(), abs=1e-5)


@settings(max_examples=30)
@given(seeds)
def test_ate_gauge_invariance(seed):
    rng = np.random.default_rng(seed)
    ref = random_trajectory(rng)
    noisy = Trajectory.from_positions(ref.positions + rng.normal(0, 0.1, ref.positions.shape),
                                      ref.timestamps)
    g = random_transform(rng, 50.0)
    assert compute_ate(ref, ref.transformed(g)).rmse < 1e-9
    a, b = compute_ate(noisy, ref), compute_ate(noisy.transformed(g), ref)
    assert abs(a.rmse - b.rmse) < 1e-9


@settings(max_examples=30)
@given(seeds)
def test_rpe_global_transform_invariance(seed):
    rng = np.random.default_rng(seed)
    ref, est = random_trajectory(rng), random_trajectory(rng)
    g = random_transform(rng, 50.0)
    base = compute_rpe(est, ref).per_pose
    assert np.abs(compute_rpe(est.transformed(g), ref).per_pose - base).max() < 1e-9
    assert np.abs(compute_rpe(est, ref.transformed(g)).per_pose - base).max() < 1e-9


@given(seeds)
def test_stats_consistency(seed):
    e = np.abs(np.random.default_rng(seed).normal(size=17))
    s = ErrorStats.from_errors(e)
    assert s.min <= s.rmse <= s.max
    assert s.rmse ** 2 == pytest.approx(np.mean(e ** 2), rel=1e-15)


def test_rpe_delta():
    ref = Trajectory.from_positions([[0, 0, 0], [1, 0, 0], [2, 0, 0], [3, 0, 0]])
    est = Trajectory.from_positions([[0, 0, 0], [1, 0, 0], [2.5, 0, 0], [3.5, 0, 0]])
    assert compute_rpe(est, ref).per_pose.tolist() == pytest.approx([0, 0.5, 0])
    assert compute_rpe(est, ref, delta=2).per_pose.tolist() == pytest.approx([0.5, 0.5])
    with pytest.raises(InputError):
        compute_rpe(est, ref, delta=4)
    with pytest.raises(InputError):
        compute_rpe(est, ref, delta=0)


def test_association_window():
    ref = Trajectory.from_positions(np.zeros((5, 3)) + np.arange(5)[:, None], [0, 1, 2, 3, 4])
    est = Trajectory.from_positions(np.zeros((3, 3)), [0.01, 2.5, 3.015])
    assert associate(est, ref) == [(0, 0), (2, 3)]
    assert associate(est, ref, max_dt=0.5) == [(0, 0), (1, 2), (2, 3)]


def test_association_is_one_to_one():
    ref = Trajectory.from_positions(np.zeros((2, 3)), [0.0, 1.0])
    est = Trajectory.from_positions(np.zeros((2, 3)), [0.005, 0.01])
    assert associate(est, ref) == [(0, 0)]


def test_ate_needs_three_poses():
    t = Trajectory.from_positions([[0, 0, 0], [1, 0, 0]])
    with pytest.raises(InputError):
        compute_ate(t, t)


def test_collinear_alignment_flagged():
    ref = Trajectory.from_positions([[0, 0, 0], [1, 0, 0], [2, 0, 0], [3, 0, 0]])
    assert compute_ate(ref, ref).degenerate
