"""Planar segment extraction by region growing on unorganized clouds."""

from __future__ import annotations

import logging
from collections import deque
from dataclasses import dataclass

import numpy as np
from scipy.spatial import ConvexHull, QhullError, cKDTree

from .errors import InputError, ParameterError
from .geometry import PlanarSegment, PointCloud

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class SegmentationParams:
    neighbor_radius: float = 0.3
    distance_threshold: float = 0.05
    angle_threshold: float = float(np.deg2rad(10.0))
    min_inliers: int = 100
    min_area: float = 0.5
    normal_neighbors: int = 16
    refit_interval: int = 50

    def validate(self):
        for name in ("neighbor_radius", "distance_threshold", "angle_threshold", "min_area"):
            if not getattr(self, name) > 0:
                raise ParameterError(f"{name} must be positive", key=name)
        if self.min_inliers < 3:
            raise ParameterError("min_inliers must be at least 3", key="min_inliers")
        if self.normal_neighbors < 3:
            raise ParameterError("normal_neighbors must be at least 3", key="normal_neighbors")
        if self.refit_interval < 1:
            raise ParameterError("refit_interval must be at least 1", key="refit_interval")
        return self


def fit_plane(points):
    """Total least-squares plane through ``points``: (unit normal, d, centroid)."""
    pts = np.asarray(points, dtype=float)
    c = pts.mean(axis=0)
    _, _, vt = np.linalg.svd(pts - c, full_matrices=False)
    n = vt[-1] if len(vt) == 3 else _complete_normal(vt)
    return n, float(n @ c), c


def _complete_normal(vt):
    # fewer than three points: any direction orthogonal to the spanned ones
    if len(vt) == 0:
        return np.array([0.0, 0.0, 1.0])
    if len(vt) == 1:
        e = np.zeros(3)
        e[int(np.argmin(np.abs(vt[0])))] = 1.0
        n = np.cross(vt[0], e)
    else:
        n = np.cross(vt[0], vt[1])
    return n / np.linalg.norm(n)


def estimate_normals(points, k, chunk=200_000):
    """Per-point PCA normals and surface variation from the k nearest neighbors.

    Curvature is the smallest covariance eigenvalue over the eigenvalue sum.
    """
    pts = np.asarray(points, dtype=float)
    n = len(pts)
    k = min(k, n - 1)
    tree = cKDTree(pts)
    normals = np.empty((n, 3))
    curvature = np.empty(n)
    for start in range(0, n, chunk):
        stop = min(start + chunk, n)
        _, nn = tree.query(pts[start:stop], k=k + 1)
        nbr = pts[nn]
        centered = nbr - nbr.mean(axis=1, keepdims=True)
        cov = np.einsum("nki,nkj->nij", centered, centered)
        w, v = np.linalg.eigh(cov)
        normals[start:stop] = v[:, :, 0]
        total = w.sum(axis=1)
        curvature[start:stop] = np.where(total > 0, w[:, 0] / np.where(total > 0, total, 1.0), 0.0)
    return normals, np.clip(curvature, 0.0, None), tree


def _cross2(o, a, b):
    return (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])


def convex_hull_2d(points):
    """Andrew's monotone chain; returns hull vertices counter-clockwise."""
    pts = sorted(set(map(tuple, np.asarray(points, dtype=float))))
    if len(pts) <= 2:
        return pts
    lower, upper = [], []
    for p in pts:
        while len(lower) >= 2 and _cross2(lower[-2], lower[-1], p) <= 0:
            lower.pop()
        lower.append(p)
    for p in reversed(pts):
        while len(upper) >= 2 and _cross2(upper[-2], upper[-1], p) <= 0:
            upper.pop()
        upper.append(p)
    return lower[:-1] + upper[:-1]


def polygon_area(vertices) -> float:
    if len(vertices) < 3:
        return 0.0
    v = np.asarray(vertices, dtype=float)
    x, y = v[:, 0], v[:, 1]
    return float(0.5 * abs(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1))))


def plane_basis(normal):
    """Two orthonormal in-plane axes for ``normal``."""
    n = np.asarray(normal, dtype=float)
    e = np.zeros(3)
    e[int(np.argmin(np.abs(n)))] = 1.0
    u = np.cross(n, e)
    u /= np.linalg.norm(u)
    return u, np.cross(n, u)


def hull_area(points, normal) -> float:
    """Area of the convex hull of ``points`` projected onto the plane."""
    pts = np.asarray(points, dtype=float)
    if len(pts) < 3:
        return 0.0
    u, v = plane_basis(normal)
    centered = pts - pts.mean(axis=0)
    uv = np.column_stack([centered @ u, centered @ v])
    try:
        return float(ConvexHull(uv).volume)
    except QhullError:
        # collinear or coincident input
        return polygon_area(convex_hull_2d(uv))


def segment_area(seg: PlanarSegment, cloud: PointCloud | None = None) -> float:
    """Convex-hull area of the segment's inliers on its plane.

    Uses the owning cloud when given, otherwise the coordinates stored in
    the segment. Collinear inliers give zero.
    """
    pts = cloud.points[seg.inliers] if cloud is not None else seg.points
    return hull_area(pts, seg.normal)


def orient_normal(normal, distance, centroid, viewpoint):
    """Flip (n, d) so the normal faces ``viewpoint``."""
    n = np.asarray(normal, dtype=float)
    side = float(n @ (np.asarray(viewpoint, dtype=float) - centroid))
    if abs(side) <= 1e-12:
        # plane passes through the viewpoint: dominant component positive
        flip = n[int(np.argmax(np.abs(n)))] < 0
    else:
        flip = side < 0
    return (-n, -distance) if flip else (n, distance)


def make_segment(points, inliers, viewpoint=(0.0, 0.0, 0.0)) -> PlanarSegment:
    pts = np.asarray(points, dtype=float)
    n, d, c = fit_plane(pts)
    n, d = orient_normal(n, d, c, viewpoint)
    return PlanarSegment(
        normal=n,
        distance=d,
        inliers=np.asarray(inliers),
        area=hull_area(pts, n),
        extent_min=pts.min(axis=0),
        extent_max=pts.max(axis=0),
        centroid=c,
        points=pts,
    )


def _grow(seed, pts, normals, neighbors, state, region_mark, cos_thr, dist_thr, refit_every):
    plane_n = normals[seed]
    plane_d = float(plane_n @ pts[seed])
    region = [seed]
    state[seed] = region_mark
    queue = deque([seed])
    since_fit = 0
    while queue:
        i = queue.popleft()
        nb = neighbors[i]
        if not len(nb):
            continue
        nb = np.asarray(nb)
        nb = nb[state[nb] == 0]
        if not nb.size:
            continue
        ok = (np.abs(normals[nb] @ plane_n) >= cos_thr) & (
            np.abs(pts[nb] @ plane_n - plane_d) <= dist_thr)
        nb = nb[ok]
        if not nb.size:
            continue
        state[nb] = region_mark
        region.extend(nb.tolist())
        queue.extend(nb.tolist())
        since_fit += nb.size
        if since_fit >= refit_every and len(region) >= 3:
            plane_n, plane_d, _ = fit_plane(pts[region])
            since_fit = 0
    return np.array(region, dtype=np.int64)


def _prune(idx, pts, dist_thr, robust_k=3.5):
    # one robust trim: points of a neighboring surface admitted near an edge
    # sit far out in the residual distribution (exactly so for noiseless data)
    if len(idx) >= 3:
        n, d, c = fit_plane(pts[idx])
        r = np.abs(pts[idx] @ n - d)
        sigma = 1.4826 * np.median(r)
        floor = 1e-9 * (1.0 + float(np.abs(c).max()))
        idx = idx[r <= max(robust_k * sigma, floor)]
    # refit until every inlier is within the threshold of the final fit
    while len(idx) >= 3:
        n, d, _ = fit_plane(pts[idx])
        keep = np.abs(pts[idx] @ n - d) <= dist_thr
        if keep.all():
            return idx
        idx = idx[keep]
    return idx


def segment_planes(cloud: PointCloud, params: SegmentationParams = SegmentationParams(),
                   viewpoint=(0.0, 0.0, 0.0)) -> list[PlanarSegment]:
    """Region-growing plane extraction.

    Seeds are taken in order of increasing local curvature (ties by index).
    A region grows through radius neighbors whose normal is within
    ``angle_threshold`` of the current plane and whose residual is within
    ``distance_threshold``; the plane is refit every ``refit_interval``
    additions. Normals of returned segments face ``viewpoint``.
    """
    if len(cloud) == 0:
        raise InputError("cannot segment an empty cloud")
    params.validate()
    pts = cloud.points
    n = len(pts)
    if n < 3:
        return []
    normals, curvature, tree = estimate_normals(pts, params.normal_neighbors)
    neighbors = tree.query_ball_point(pts, params.neighbor_radius, return_sorted=False)
    cos_thr = np.cos(params.angle_threshold)
    order = np.lexsort((np.arange(n), np.round(curvature, 9)))

    # 0 = free, 1 = consumed, 2 = in the region being grown
    state = np.zeros(n, dtype=np.int8)
    segments = []
    for seed in order:
        if state[seed]:
            continue
        region = _grow(seed, pts, normals, neighbors, state, 2, cos_thr,
                       params.distance_threshold, params.refit_interval)
        idx = _prune(region, pts, params.distance_threshold)
        state[region] = 1
        if len(idx) < params.min_inliers:
            continue
        seg = make_segment(pts[idx], idx, viewpoint)
        if seg.area < params.min_area:
            continue
        # pruned points go back to the pool for later regions
        pruned = np.setdiff1d(region, idx, assume_unique=True)
        state[pruned] = 0
        segments.append(seg)
    log.debug("segmented %d points into %d planes", n, len(segments))
    return segments
