"""Value types (clouds, planes, rigid transforms, poses) and their algebra.

All arrays are float64. Types are treated as immutable: operations return
new objects and the arrays held by a value are marked read-only.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy.spatial.transform import Rotation

SOURCE_TAGS = ("laser", "vision")


def _frozen(a, dtype=float):
    a = np.array(a, dtype=dtype)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class PointCloud:
    points: np.ndarray
    colors: Optional[np.ndarray] = None
    source_tag: str = "laser"

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float).reshape(-1, 3)
        if not np.all(np.isfinite(pts)):
            raise ValueError("point coordinates must be finite")
        object.__setattr__(self, "points", _frozen(pts))
        if self.colors is not None:
            col = np.asarray(self.colors).reshape(-1, 3)
            if len(col) != len(pts):
                raise ValueError(
                    f"colors has {len(col)} entries for {len(pts)} points")
            object.__setattr__(self, "colors", _frozen(col, np.uint8))
        if self.source_tag not in SOURCE_TAGS:
            raise ValueError(f"unknown source tag {self.source_tag!r}")

    def __len__(self):
        return len(self.points)

    @property
    def has_colors(self) -> bool:
        return self.colors is not None

    def bounds(self):
        if len(self.points) == 0:
            raise ValueError("empty cloud has no bounds")
        return self.points.min(axis=0), self.points.max(axis=0)

    def select(self, mask_or_index) -> "PointCloud":
        colors = None if self.colors is None else self.colors[mask_or_index]
        return PointCloud(self.points[mask_or_index], colors, self.source_tag)

    def with_points(self, points) -> "PointCloud":
        return PointCloud(points, self.colors, self.source_tag)

    @staticmethod
    def concatenate(clouds: Sequence["PointCloud"], source_tag=None) -> "PointCloud":
        clouds = list(clouds)
        if not clouds:
            return PointCloud(np.empty((0, 3)), None, source_tag or "laser")
        tag = source_tag or clouds[0].source_tag
        pts = np.vstack([c.points for c in clouds])
        if all(c.colors is not None for c in clouds):
            colors = np.vstack([c.colors for c in clouds])
        else:
            colors = None
        return PointCloud(pts, colors, tag)


@dataclass(frozen=True, eq=False)
class PlanarSegment:
    """Plane n.p = d fitted to a set of inliers of an owning cloud.

    ``points`` keeps the inlier coordinates so the segment can be moved
    between frames without the owning cloud.
    """

    normal: np.ndarray
    distance: float
    inliers: np.ndarray
    area: float
    extent_min: np.ndarray
    extent_max: np.ndarray
    centroid: np.ndarray
    points: np.ndarray

    def __post_init__(self):
        n = np.asarray(self.normal, dtype=float)
        norm = np.linalg.norm(n)
        if not np.isfinite(norm) or norm == 0.0:
            raise ValueError("plane normal must be a non-zero finite vector")
        object.__setattr__(self, "normal", _frozen(n / norm))
        object.__setattr__(self, "distance", float(self.distance))
        object.__setattr__(self, "inliers", _frozen(self.inliers, np.int64))
        object.__setattr__(self, "area", float(self.area))
        for name in ("extent_min", "extent_max", "centroid"):
            object.__setattr__(self, name, _frozen(getattr(self, name)))
        object.__setattr__(self, "points", _frozen(np.reshape(self.points, (-1, 3))))
        if self.area < 0:
            raise ValueError("segment area must be non-negative")
        if np.any(self.extent_min > self.extent_max):
            raise ValueError("extent_min must not exceed extent_max")

    @property
    def n_inliers(self) -> int:
        return len(self.inliers)

    def residuals(self, points=None) -> np.ndarray:
        pts = self.points if points is None else np.asarray(points, dtype=float)
        return pts @ self.normal - self.distance

    def flipped(self) -> "PlanarSegment":
        return PlanarSegment(-self.normal, -self.distance, self.inliers, self.area,
                             self.extent_min, self.extent_max, self.centroid, self.points)


# --------------------------------------------------------------------------
# rotations
# --------------------------------------------------------------------------

def rotation_about_axis(axis, angle) -> np.ndarray:
    axis = np.asarray(axis, dtype=float)
    axis = axis / np.linalg.norm(axis)
    return Rotation.from_rotvec(axis * angle).as_matrix()


def rotation_angle(R) -> float:
    """Geodesic angle of a rotation matrix, accurate near zero."""
    R = np.asarray(R, dtype=float)
    # chordal distance to identity: ||R - I||_F = 2*sqrt(2)*sin(theta/2)
    s = np.linalg.norm(R - np.eye(3)) / (2.0 * np.sqrt(2.0))
    if s < 0.7:
        return float(2.0 * np.arcsin(min(s, 1.0)))
    return float(np.arccos(np.clip((np.trace(R) - 1.0) / 2.0, -1.0, 1.0)))


def rotation_distance(Ra, Rb) -> float:
    return rotation_angle(np.asarray(Ra).T @ np.asarray(Rb))


def _any_perpendicular(a):
    e = np.zeros(3)
    e[int(np.argmin(np.abs(a)))] = 1.0
    v = np.cross(a, e)
    return v / np.linalg.norm(v)


def rotation_between(a, b) -> np.ndarray:
    """Smallest rotation taking direction ``a`` onto direction ``b``."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    a = a / np.linalg.norm(a)
    b = b / np.linalg.norm(b)
    axis = np.cross(a, b)
    s = np.linalg.norm(axis)
    c = float(np.dot(a, b))
    if s < 1e-12:
        if c > 0:
            return np.eye(3)
        return rotation_about_axis(_any_perpendicular(a), np.pi)
    return rotation_about_axis(axis / s, np.arctan2(s, c))


def best_rotation(src, dst, weights=None, rank_tol=1e-10) -> np.ndarray:
    """Rotation R minimizing sum_i w_i ||R src_i - dst_i||^2.

    Closed form from the SVD of the correlation matrix with a determinant
    correction. When the correlation has rank <= 1 (all vectors parallel),
    the rotation about the common axis is unobservable and the smallest
    rotation aligning the dominant directions is returned.
    """
    src = np.asarray(src, dtype=float).reshape(-1, 3)
    dst = np.asarray(dst, dtype=float).reshape(-1, 3)
    if weights is None:
        M = dst.T @ src
    else:
        M = (dst * np.asarray(weights, dtype=float)[:, None]).T @ src
    U, S, Vt = np.linalg.svd(M)
    if S[0] <= 0.0:
        return np.eye(3)
    if S[1] <= rank_tol * S[0]:
        return rotation_between(Vt[0], U[:, 0])
    D = np.eye(3)
    D[2, 2] = np.sign(np.linalg.det(U @ Vt)) or 1.0
    return U @ D @ Vt


# --------------------------------------------------------------------------
# rigid transforms
# --------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class RigidTransform:
    """p -> R p + t, with the rank of the translation estimate.

    ``null_directions`` lists the translation directions that were not
    observable when the transform was estimated from planes.
    """

    rotation: np.ndarray = field(default_factory=lambda: np.eye(3))
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))
    translation_rank: int = 3
    null_directions: tuple = ()

    def __post_init__(self):
        R = np.asarray(self.rotation, dtype=float).reshape(3, 3)
        t = np.asarray(self.translation, dtype=float).reshape(3)
        if not (np.all(np.isfinite(R)) and np.all(np.isfinite(t))):
            raise ValueError("transform must be finite")
        object.__setattr__(self, "rotation", _frozen(R))
        object.__setattr__(self, "translation", _frozen(t))
        nulls = tuple(_frozen(v) for v in self.null_directions)
        object.__setattr__(self, "null_directions", nulls)
        if len(nulls) != 3 - self.translation_rank:
            raise ValueError("null_directions must number 3 - translation_rank")

    @classmethod
    def identity(cls) -> "RigidTransform":
        return cls()

    @classmethod
    def from_translation(cls, t) -> "RigidTransform":
        return cls(np.eye(3), t)

    @classmethod
    def from_matrix(cls, M) -> "RigidTransform":
        M = np.asarray(M, dtype=float)
        if M.shape != (4, 4):
            raise ValueError("homogeneous matrix must be 4x4")
        return cls(M[:3, :3], M[:3, 3])

    @classmethod
    def from_quaternion(cls, q_xyzw, t) -> "RigidTransform":
        return cls(Rotation.from_quat(q_xyzw).as_matrix(), t)

    def quaternion(self) -> np.ndarray:
        """Unit quaternion (x, y, z, w) with w >= 0."""
        q = Rotation.from_matrix(self.rotation).as_quat()
        return -q if q[3] < 0 else q

    def matrix(self) -> np.ndarray:
        M = np.eye(4)
        M[:3, :3] = self.rotation
        M[:3, 3] = self.translation
        return M

    def apply(self, points) -> np.ndarray:
        pts = np.asarray(points, dtype=float)
        return pts @ self.rotation.T + self.translation

    def __matmul__(self, other: "RigidTransform") -> "RigidTransform":
        return compose(self, other)

    def inverse(self) -> "RigidTransform":
        return invert(self)

    def angle(self) -> float:
        return rotation_angle(self.rotation)

    def is_orthonormal(self, tol=1e-9) -> bool:
        R = self.rotation
        return (np.allclose(R.T @ R, np.eye(3), atol=tol)
                and abs(np.linalg.det(R) - 1.0) <= tol)


def compose(A: RigidTransform, B: RigidTransform) -> RigidTransform:
    """p -> A(B(p)). Rank annotations are not carried over."""
    return RigidTransform(A.rotation @ B.rotation,
                          A.rotation @ B.translation + A.translation)


def invert(T: RigidTransform) -> RigidTransform:
    Rt = T.rotation.T
    return RigidTransform(Rt, -Rt @ T.translation)


def fit_rigid(src, dst) -> RigidTransform:
    """Least-squares rigid transform mapping points ``src`` onto ``dst``."""
    src = np.asarray(src, dtype=float)
    dst = np.asarray(dst, dtype=float)
    cs, cd = src.mean(axis=0), dst.mean(axis=0)
    R = best_rotation(src - cs, dst - cd)
    return RigidTransform(R, cd - R @ cs)


def apply_transform(T: RigidTransform, cloud: PointCloud) -> PointCloud:
    return PointCloud(T.apply(cloud.points), cloud.colors, cloud.source_tag)


def transform_plane(T: RigidTransform, seg: PlanarSegment) -> PlanarSegment:
    n = T.rotation @ seg.normal
    pts = T.apply(seg.points)
    if len(pts):
        lo, hi = pts.min(axis=0), pts.max(axis=0)
    else:
        lo = hi = T.apply(seg.centroid)
    return PlanarSegment(
        normal=n,
        distance=seg.distance + float(n @ T.translation),
        inliers=seg.inliers,
        area=seg.area,
        extent_min=lo,
        extent_max=hi,
        centroid=T.apply(seg.centroid),
        points=pts,
    )


# --------------------------------------------------------------------------
# poses and trajectories
# --------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class Pose:
    timestamp: float
    transform: RigidTransform

    def __post_init__(self):
        if not np.isfinite(self.timestamp):
            raise ValueError("pose timestamp must be finite")
        object.__setattr__(self, "timestamp", float(self.timestamp))

    @property
    def position(self) -> np.ndarray:
        return self.transform.translation


@dataclass(frozen=True, eq=False)
class Trajectory:
    poses: tuple

    def __post_init__(self):
        poses = tuple(self.poses)
        stamps = np.array([p.timestamp for p in poses])
        if len(stamps) > 1 and np.any(np.diff(stamps) <= 0):
            raise ValueError("trajectory timestamps must be strictly increasing")
        object.__setattr__(self, "poses", poses)

    def __len__(self):
        return len(self.poses)

    def __getitem__(self, i):
        return self.poses[i]

    def __iter__(self):
        return iter(self.poses)

    @property
    def timestamps(self) -> np.ndarray:
        return np.array([p.timestamp for p in self.poses], dtype=float)

    @property
    def positions(self) -> np.ndarray:
        if not self.poses:
            return np.empty((0, 3))
        return np.array([p.position for p in self.poses])

    @classmethod
    def from_positions(cls, positions, timestamps=None) -> "Trajectory":
        positions = np.asarray(positions, dtype=float).reshape(-1, 3)
        if timestamps is None:
            timestamps = np.arange(len(positions), dtype=float)
        return cls(tuple(Pose(s, RigidTransform.from_translation(p))
                         for s, p in zip(timestamps, positions)))

    def transformed(self, g: RigidTransform) -> "Trajectory":
        """Trajectory with every pose left-multiplied by ``g``."""
        return Trajectory(tuple(Pose(p.timestamp, compose(g, p.transform))
                                for p in self.poses))
