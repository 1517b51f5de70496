"""Cloud conditioning before segmentation and monocular scale recovery."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from .errors import ParameterError, ScaleError
from .geometry import PointCloud, Pose, RigidTransform, Trajectory


@dataclass(frozen=True)
class FilterParams:
    voxel_leaf: float = 0.1
    vision_voxel_leaf: float = 0.05
    outlier_neighbors: int = 16
    outlier_stddev_mult: float = 1.5

    def validate(self):
        if not self.voxel_leaf > 0:
            raise ParameterError("voxel_leaf must be positive", key="voxel_leaf")
        if not self.vision_voxel_leaf > 0:
            raise ParameterError("vision_voxel_leaf must be positive", key="vision_voxel_leaf")
        if self.outlier_neighbors < 1:
            raise ParameterError("outlier_neighbors must be at least 1", key="outlier_neighbors")
        if not self.outlier_stddev_mult > 0:
            raise ParameterError("outlier_stddev_mult must be positive", key="outlier_stddev_mult")
        return self

    def leaf_for(self, cloud: PointCloud) -> float:
        return self.vision_voxel_leaf if cloud.source_tag == "vision" else self.voxel_leaf


def voxel_indices(points, leaf) -> np.ndarray:
    return np.floor(np.asarray(points) / leaf).astype(np.int64)


def voxel_filter(cloud: PointCloud, leaf: float) -> PointCloud:
    """Replace the points of every occupied voxel by their centroid.

    Output order follows the lexicographic order of voxel indices, so the
    result does not depend on input order beyond floating-point summation.
    """
    if not leaf > 0:
        raise ParameterError(f"voxel leaf must be positive, got {leaf}")
    if len(cloud) == 0:
        return cloud
    idx = voxel_indices(cloud.points, leaf)
    keys, inverse, counts = np.unique(idx, axis=0, return_inverse=True,
                                      return_counts=True)
    inverse = inverse.reshape(-1)
    sums = np.zeros((len(keys), 3))
    np.add.at(sums, inverse, cloud.points)
    centroids = sums / counts[:, None]

    # rounding can push a centroid across a voxel face; fall back to the
    # member point closest to the centroid in that case
    bad = np.flatnonzero(np.any(voxel_indices(centroids, leaf) != keys, axis=1))
    for k in bad:
        members = cloud.points[inverse == k]
        nearest = np.argmin(np.linalg.norm(members - centroids[k], axis=1))
        centroids[k] = members[nearest]

    colors = None
    if cloud.colors is not None:
        csum = np.zeros((len(keys), 3))
        np.add.at(csum, inverse, cloud.colors.astype(float))
        colors = np.clip(np.rint(csum / counts[:, None]), 0, 255).astype(np.uint8)
    return PointCloud(centroids, colors, cloud.source_tag)


def mean_knn_distance(points, k) -> np.ndarray:
    tree = cKDTree(points)
    d, _ = tree.query(points, k=k + 1)
    return d[:, 1:].mean(axis=1)


def outlier_filter(cloud: PointCloud, k: int = 16, mult: float = 1.5) -> PointCloud:
    """Statistical outlier removal on the mean distance to the k nearest neighbors.

    A point is dropped when its statistic exceeds mean + mult * std of the
    statistic over the whole cloud.
    """
    if k < 1 or not mult > 0:
        raise ParameterError("outlier filter needs k >= 1 and mult > 0")
    if len(cloud) <= k:
        raise ParameterError(f"outlier filter needs more than k={k} points, got {len(cloud)}")
    stat = mean_knn_distance(cloud.points, k)
    mu, sigma = stat.mean(), stat.std()
    # slack absorbs round-off when the statistic is homogeneous
    keep = stat <= mu + mult * sigma + 1e-9 * mu
    return cloud.select(keep)


def preprocess(cloud: PointCloud, params: FilterParams, remove_outliers=True) -> PointCloud:
    out = voxel_filter(cloud, params.leaf_for(cloud))
    if remove_outliers and len(out) > params.outlier_neighbors:
        out = outlier_filter(out, params.outlier_neighbors, params.outlier_stddev_mult)
    return out


def _assign_gps(vision: Trajectory, gps: Trajectory, by: str) -> np.ndarray:
    gps_pos = gps.positions
    if by == "time":
        t_gps = gps.timestamps
        t_vis = vision.timestamps
        j = np.searchsorted(t_gps, t_vis)
        j = np.clip(j, 1, len(t_gps) - 1)
        left_closer = np.abs(t_vis - t_gps[j - 1]) <= np.abs(t_gps[j] - t_vis)
        return gps_pos[np.where(left_closer, j - 1, j)]
    if by == "index":
        n, m = len(vision), len(gps)
        j = np.rint(np.arange(n) * (m - 1) / max(n - 1, 1)).astype(int)
        return gps_pos[j]
    raise ParameterError(f"unknown assignment mode {by!r}")


def _time_ranges_overlap(a: Trajectory, b: Trajectory) -> bool:
    ta, tb = a.timestamps, b.timestamps
    return ta[0] <= tb[-1] and tb[0] <= ta[-1]


def estimate_scale(vision: Trajectory, gps: Trajectory, by: str = "auto") -> float:
    """Scale factor for a monocular reconstruction from a metric GPS track.

    Each vision pose is assigned its nearest GPS coordinate; the factor is
    the ratio of the mean adjacent-step lengths (GPS over vision).
    ``by='auto'`` matches by timestamp when the two time ranges overlap and
    falls back to index-proportional assignment otherwise.
    """
    if len(vision) < 2 or len(gps) < 2:
        raise ScaleError("scale estimation needs at least 2 poses in each trajectory")
    if by == "auto":
        by = "time" if _time_ranges_overlap(vision, gps) else "index"
    assigned = _assign_gps(vision, gps, by)
    vis_steps = np.linalg.norm(np.diff(vision.positions, axis=0), axis=1)
    gps_steps = np.linalg.norm(np.diff(assigned, axis=0), axis=1)
    vis_mean = vis_steps.mean()
    if not vis_mean > 0:
        raise ScaleError("vision trajectory has zero mean step length")
    return float(gps_steps.mean() / vis_mean)


def scale_cloud(cloud: PointCloud, s: float) -> PointCloud:
    if not s > 0:
        raise ParameterError(f"scale factor must be positive, got {s}")
    return cloud.with_points(cloud.points * s)


def scale_trajectory(traj: Trajectory, s: float) -> Trajectory:
    if not s > 0:
        raise ParameterError(f"scale factor must be positive, got {s}")
    return Trajectory(tuple(
        Pose(p.timestamp, RigidTransform(p.transform.rotation, p.transform.translation * s))
        for p in traj.poses))
