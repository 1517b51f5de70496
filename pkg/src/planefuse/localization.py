"""Localization of laser scans in a prior vision map.

Tracking accumulates scan-to-scan registrations. Each new pose is then
corrected against a window of the global map; when no correction is
possible the tracker falls back to relative optimization, where scans are
re-registered against the union of their overlapping neighbors until poses
settle. A cell search over the map provides the first pose when none is
given.
"""

from __future__ import annotations

import itertools
import logging
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np
from scipy.spatial import cKDTree

from .config import CellSearchParams, Config, LocalizationParams, MetascanParams  # noqa: F401
from .errors import InitializationError, InputError
from .geometry import (PointCloud, Pose, RigidTransform, Trajectory,
                       compose, invert, transform_plane)
from .preprocessing import preprocess, voxel_filter
from .registration import (CorrespondenceSet, MatchParams, RegistrationResult, candidate_pairs,
                           check_overlap, icp_refine, match_planes,
                           register_segments, solve_translation)
from .segmentation import segment_planes
from .timing import stage

log = logging.getLogger(__name__)


# --------------------------------------------------------------------------
# state
# --------------------------------------------------------------------------

class GlobalMap:
    """Vision-derived map cloud with a cache of segmented sections."""

    def __init__(self, cloud: PointCloud):
        if cloud.source_tag != "vision":
            raise InputError("the global map must be a vision-derived cloud")
        self.cloud = cloud
        self.segments: dict = {}

    def __len__(self):
        return len(self.cloud)

    def crop(self, lo, hi) -> PointCloud:
        pts = self.cloud.points
        mask = np.all((pts >= lo) & (pts <= hi), axis=1)
        return self.cloud.select(mask)

    def section_segments(self, lo, hi, viewpoint, seg_params):
        key = (tuple(np.round(lo, 3)), tuple(np.round(hi, 3)),
               tuple(np.round(viewpoint, 3)), seg_params)
        if key not in self.segments:
            section = self.crop(lo, hi)
            if len(section) < seg_params.min_inliers:
                self.segments[key] = (section, [])
            else:
                self.segments[key] = (section, segment_planes(section, seg_params, viewpoint))
        return self.segments[key]


@dataclass
class ScanRecord:
    cloud: PointCloud
    segments: list
    pose: Pose
    relative: RigidTransform = field(default_factory=RigidTransform.identity)
    flags: set = field(default_factory=set)

    def map_segments(self):
        return [transform_plane(self.pose.transform, s) for s in self.segments]

    def map_cloud(self) -> PointCloud:
        return PointCloud(self.pose.transform.apply(self.cloud.points), self.cloud.colors,
                          self.cloud.source_tag)


@dataclass
class TrackerState:
    scans: list
    config: Config = field(default_factory=Config)
    global_map: Optional[GlobalMap] = None
    mode: str = "global"
    master_index: Optional[int] = None
    initial_pose: Optional[RigidTransform] = None

    @property
    def current_pose(self) -> Pose:
        return self.scans[-1].pose

    def trajectory(self) -> Trajectory:
        return Trajectory(tuple(s.pose for s in self.scans))

    def relative_trajectory(self) -> Trajectory:
        """Poses from accumulating the stored relative transforms only."""
        T = self.initial_pose or self.scans[0].pose.transform
        poses = [Pose(self.scans[0].pose.timestamp, T)]
        for rec in self.scans[1:]:
            T = compose(T, rec.relative)
            poses.append(Pose(rec.pose.timestamp, T))
        return Trajectory(tuple(poses))


@dataclass(frozen=True, eq=False)
class MetascanReport:
    iterations: int
    updated: tuple
    isolated: tuple


@dataclass(frozen=True, eq=False)
class InitialPoseResult:
    status: str                    # "pose", "ambiguous" or "not_found"
    pose: Optional[RigidTransform]
    r1: float
    r2: float
    cells: tuple = ()              # (center, ratio, pose or None) per cell

    @property
    def found(self) -> bool:
        return self.status == "pose"


def _within_bounds(correction: RigidTransform, max_angle, max_translation) -> bool:
    return (correction.angle() <= max_angle
            and np.linalg.norm(correction.translation) <= max_translation)


# --------------------------------------------------------------------------
# global optimization
# --------------------------------------------------------------------------

def box_corners(lo, hi):
    return np.array(list(itertools.product(*zip(lo, hi))), dtype=float)


def section_bounds(pose: Pose, scan_extent, tolerance):
    if tolerance < 0:
        raise InputError("section tolerance must be non-negative")
    corners = pose.transform.apply(box_corners(*scan_extent))
    return corners.min(axis=0) - tolerance, corners.max(axis=0) + tolerance


def extract_section(global_map: GlobalMap, pose: Pose, scan_extent, tolerance) -> PointCloud:
    """Map points inside the scan's bounding box, placed by ``pose`` and grown by ``tolerance``."""
    lo, hi = section_bounds(pose, scan_extent, tolerance)
    return global_map.crop(lo, hi)


def global_optimize(state: TrackerState, scan: PointCloud, scan_segments,
                    global_map: Optional[GlobalMap] = None,
                    pose: Optional[Pose] = None) -> Optional[Pose]:
    """Correct ``pose`` (default: current pose) against the map section it covers.

    Returns None when the section is empty, no plane correspondences are
    found, or the correction exceeds the configured bounds.
    """
    gmap = global_map or state.global_map
    pose = pose or state.current_pose
    if gmap is None or len(scan) == 0 or not scan_segments:
        return None
    cfg = state.config
    loc = cfg.localization
    lo, hi = section_bounds(pose, scan.bounds(), loc.section_tolerance)
    with stage("section_segmentation"):
        section, section_segs = gmap.section_segments(lo, hi, pose.position, cfg.segmentation)
    if not section_segs:
        log.info("global optimization impossible: map section has no planes")
        return None
    moved = [transform_plane(pose.transform, s) for s in scan_segments]
    with stage("global_registration"):
        res = register_segments(moved, section_segs, cfg.matching)
    if not res.success:
        log.info("global optimization impossible: no correspondences")
        return None
    size = float(np.max(section.points.max(axis=0) - section.points.min(axis=0)))
    if not _within_bounds(res.transform, loc.max_correction_angle,
                          loc.max_correction_fraction * size):
        log.info("global correction rejected as a mismatch")
        return None
    return Pose(pose.timestamp, compose(res.transform, pose.transform))


# --------------------------------------------------------------------------
# relative (metascan) optimization
# --------------------------------------------------------------------------

def count_overlapping_surfaces(segs_a, segs_b, params: MatchParams) -> int:
    """Segments of ``segs_a`` with a compatible, overlapping plane in ``segs_b``."""
    count = 0
    cos_tol = np.cos(params.angle_tol)
    ident = RigidTransform.identity()
    for a in segs_a:
        for b in segs_b:
            if (a.normal @ b.normal >= cos_tol
                    and abs(a.distance - b.distance) <= params.distance_tol
                    and check_overlap(a, b, ident, params.overlap_epsilon)):
                count += 1
                break
    return count


def metascan_optimize(state: TrackerState, new_index: Optional[int] = None) -> MetascanReport:
    """Worklist relative optimization anchored on the master scan.

    Each popped scan is registered against the merged cloud of its
    neighbors (scans sharing enough overlapping surfaces). If its pose
    moves by more than the minimum change, those neighbors are queued for
    re-examination. Scans up to and including the master are never moved.
    """
    if state.master_index is None:
        raise InputError("relative optimization needs a master scan")
    cfg = state.config
    ms = cfg.metascan
    master = state.master_index
    if new_index is None:
        new_index = len(state.scans) - 1
    bound = ms.max_iterations_per_cloud * len(state.scans)

    queue = [new_index]
    iterations = 0
    updated, isolated = set(), set()
    while queue:
        iterations += 1
        if iterations > bound:
            raise RuntimeError(f"relative optimization exceeded {bound} iterations")
        cur = queue.pop(0)
        if cur <= master:
            continue
        rec = state.scans[cur]
        cur_segs = rec.map_segments()
        neighbors = [j for j, other in enumerate(state.scans)
                     if j != cur and count_overlapping_surfaces(
                         cur_segs, other.map_segments(), cfg.matching) >= ms.min_overlapping_surfaces]
        if not neighbors:
            rec.flags.add("isolated")
            isolated.add(cur)
            continue
        merged = PointCloud.concatenate([state.scans[j].map_cloud() for j in neighbors])
        merged = voxel_filter(merged, cfg.filter.voxel_leaf)
        with stage("metascan_registration"):
            merged_segs = segment_planes(merged, cfg.segmentation, rec.pose.position)
            res = register_segments(cur_segs, merged_segs, cfg.matching)
        if not res.success:
            rec.flags.add("isolated")
            isolated.add(cur)
            continue
        C = res.transform
        if not _within_bounds(C, cfg.localization.max_correction_angle, cfg.matching.distance_tol):
            continue
        rec.pose = Pose(rec.pose.timestamp, compose(C, rec.pose.transform))
        rec.flags.discard("isolated")
        isolated.discard(cur)
        updated.add(cur)
        if (C.angle() > ms.min_pose_angle
                or np.linalg.norm(C.translation) > ms.min_pose_translation):
            for j in neighbors:
                if j > master and j not in queue:
                    queue.append(j)
    return MetascanReport(iterations, tuple(sorted(updated)), tuple(sorted(isolated)))


def plane_consistency_residual(state: TrackerState, params: Optional[MatchParams] = None) -> float:
    """Sum over scan pairs of matched plane offsets in the map frame.

    For each pair of scans, planes are matched in place and each match
    contributes the distance of the source centroid to the target plane.
    """
    params = params or state.config.matching
    segs = [rec.map_segments() for rec in state.scans]
    total = 0.0
    for a, b in itertools.combinations(range(len(segs)), 2):
        corr = match_planes(segs[a], segs[b], params)
        for i, j in corr.pairs:
            total += abs(segs[b][j].normal @ segs[a][i].centroid - segs[b][j].distance)
    return total


# --------------------------------------------------------------------------
# tracking
# --------------------------------------------------------------------------

def _prepare(scan: PointCloud, cfg: Config):
    with stage("preprocessing"):
        cloud = preprocess(scan, cfg.filter) if cfg.localization.preprocess else scan
    with stage("segmentation"):
        segs = segment_planes(cloud, cfg.segmentation)
    return cloud, segs


def _anchor_relative_chain(state: TrackerState, correction: RigidTransform, upto: int):
    # re-anchor scans optimized relative to the master onto the global correction
    for rec in state.scans[state.master_index:upto]:
        rec.pose = Pose(rec.pose.timestamp, compose(correction, rec.pose.transform))


def _after_registration(state: TrackerState, index: int):
    rec = state.scans[index]
    if state.global_map is not None:
        corrected = global_optimize(state, rec.cloud, rec.segments, pose=rec.pose)
        if corrected is not None:
            correction = compose(corrected.transform, invert(rec.pose.transform))
            if state.mode == "relative" and state.master_index is not None:
                _anchor_relative_chain(state, correction, index)
            rec.pose = corrected
            rec.flags.add("global")
            state.mode = "global"
            state.master_index = None
            return
    elif not state.config.localization.relative_without_map:
        return
    if state.mode == "global" or state.master_index is None:
        state.mode = "relative"
        state.master_index = index
    else:
        with stage("metascan"):
            metascan_optimize(state, index)


def track_step(state: TrackerState, new_scan: PointCloud, odom=None,
               timestamp: Optional[float] = None) -> TrackerState:
    """Add one scan: register against the previous scan, accumulate, then optimize.

    ``odom`` is the translation of the new scan in the previous scan's
    frame. It seeds the registration and supplies translation directions
    the planes leave unobserved.
    """
    if not state.scans:
        raise InputError("tracker must be initialized with a first scan")
    cfg = state.config
    prev = state.scans[-1]
    cloud, segs = _prepare(new_scan, cfg)
    hint = RigidTransform.from_translation(odom) if odom is not None else None
    with stage("registration"):
        res = register_segments(segs, prev.segments, cfg.matching, hint, odom)
    flags = set()
    if res.success:
        rel = res.transform
        if rel.translation_rank < 3:
            flags.add("low_rank")
        if cfg.localization.use_icp:
            with stage("icp"):
                icp = icp_refine(cloud, prev.cloud, rel, cfg.localization.icp_max_iter,
                                 cfg.localization.icp_max_corr_dist)
            rel = icp.transform
    else:
        flags.add("low_confidence")
        rel = RigidTransform.from_translation(odom) if odom is not None else RigidTransform.identity()
    if timestamp is None:
        timestamp = prev.pose.timestamp + 1.0
    pose = Pose(timestamp, compose(prev.pose.transform, rel))
    state.scans.append(ScanRecord(cloud, segs, pose, rel, flags))
    _after_registration(state, len(state.scans) - 1)
    return state


# --------------------------------------------------------------------------
# initial pose
# --------------------------------------------------------------------------

def _cell_centers(map_lo, map_hi, size, stride_fraction):
    axes = []
    for lo, hi, s in zip(map_lo, map_hi, size):
        if hi - lo <= s:
            axes.append([(lo + hi) / 2.0])
            continue
        stride = s * stride_fraction
        first, last = lo + s / 2.0, hi - s / 2.0
        n = int(np.ceil((last - first) / stride - 1e-9)) + 1
        axes.append([first + k * stride for k in range(n - 1)] + [last])
    return [np.array(c) for c in itertools.product(*axes)]


def _basis_planes(segs, max_planes=3, min_sv=0.3):
    # largest planes whose normals add a new direction
    chosen = []
    for i in sorted(range(len(segs)), key=lambda i: (-segs[i].area, i)):
        trial = np.array([segs[k].normal for k in chosen + [i]])
        if np.linalg.svd(trial, compute_uv=False)[-1] > min_sv:
            chosen.append(i)
        if len(chosen) == max_planes:
            break
    return chosen


def register_unknown_translation(src_segs, tgt_segs, params: MatchParams,
                                 per_plane=6) -> RegistrationResult:
    """Registration with roughly known orientation but unknown translation.

    Translation hypotheses come from assigning the largest independent
    source planes to compatible target planes; the hypothesis giving the
    most verified correspondences seeds the final registration.
    """
    wide = replace(params, distance_tol=1e9, allow_flip=True)
    cands = candidate_pairs(src_segs, tgt_segs, wide)
    by_src: dict = {}
    for _, i, j, f in cands:
        by_src.setdefault(i, [])
        if len(by_src[i]) < per_plane:
            by_src[i].append((j, f))
    basis = [i for i in _basis_planes(src_segs) if i in by_src]
    if not basis:
        return RegistrationResult(RigidTransform.identity(), CorrespondenceSet(), success=False)
    strict = replace(params, allow_flip=True)
    best_key, best_hint = None, None
    for combo in itertools.product(*(by_src[i] for i in basis)):
        targets = [j for j, _ in combo]
        if len(set(targets)) != len(targets):
            continue
        N = np.empty((len(basis), 3))
        d = np.empty(len(basis))
        for k, (i, (j, f)) in enumerate(zip(basis, combo)):
            s = -1.0 if f else 1.0
            N[k] = s * tgt_segs[j].normal
            d[k] = s * tgt_segs[j].distance - N[k] @ src_segs[i].centroid
        hint = RigidTransform.from_translation(solve_translation(N, d, params.rank_tol).translation)
        corr = match_planes(src_segs, tgt_segs, strict, hint)
        key = (len(corr), -float(np.linalg.norm(hint.translation)))
        if best_key is None or key > best_key:
            best_key, best_hint = key, hint
    return register_segments(src_segs, tgt_segs, strict, best_hint)


def verified_pairs(src_segs, tgt_segs, result: RegistrationResult, tol: float) -> int:
    """Correspondences whose plane offsets agree within ``tol`` under the result."""
    count = 0
    corr = result.correspondences
    for (i, j), f in zip(corr.pairs, corr.flipped):
        moved = transform_plane(result.transform, src_segs[i])
        s = -1.0 if f else 1.0
        angle_ok = moved.normal @ (s * tgt_segs[j].normal) > 0
        if angle_ok and abs(moved.distance - s * tgt_segs[j].distance) <= tol:
            count += 1
    return count


def inlier_ratio(n_matched: int, n_scan_planes: int, n_cell_planes: int) -> float:
    """Matched planes over the larger of the two plane counts."""
    denom = max(n_scan_planes, n_cell_planes)
    return n_matched / denom if denom > 0 else 0.0


def initial_pose_search(global_map: GlobalMap, scan: PointCloud,
                        config: Optional[Config] = None) -> InitialPoseResult:
    """Locate a scan in the map by registering it against overlapping cells.

    Cells have the scan's bounding-box size plus the cell tolerance and are
    laid out with a fractional stride. The best cell must beat ``alpha``
    and exceed ``beta`` times the best cell proposing a different pose.
    """
    cfg = config or Config()
    cs = cfg.cell_search
    scan_segs = segment_planes(scan, cfg.segmentation)
    if not scan_segs:
        raise InputError("scan has no segmentable planes")
    if len(global_map) == 0:
        return InitialPoseResult("not_found", None, 0.0, 0.0)
    s_lo, s_hi = scan.bounds()
    size = (s_hi - s_lo) + cs.cell_tolerance
    m_lo, m_hi = global_map.cloud.bounds()
    pts = global_map.cloud.points

    cells = []
    for center in _cell_centers(m_lo, m_hi, size, cs.stride_fraction):
        lo, hi = center - size / 2.0, center + size / 2.0
        mask = np.all((pts >= lo) & (pts <= hi), axis=1)
        if mask.sum() < cfg.segmentation.min_inliers:
            cells.append((center, 0.0, None))
            continue
        local = PointCloud(pts[mask] - center, None, "vision")
        cell_segs = segment_planes(local, cfg.segmentation)
        if not cell_segs:
            cells.append((center, 0.0, None))
            continue
        res = register_unknown_translation(scan_segs, cell_segs, cfg.matching)
        if not res.success:
            cells.append((center, 0.0, None))
            continue
        n_ok = verified_pairs(scan_segs, cell_segs, res, cs.inlier_distance)
        r = inlier_ratio(n_ok, len(scan_segs), len(cell_segs))
        pose = compose(RigidTransform.from_translation(center), res.transform)
        cells.append((center, r, pose))

    found = [k for k, c in enumerate(cells) if c[2] is not None]
    if not found:
        return InitialPoseResult("not_found", None, 0.0, 0.0, tuple(cells))
    win = max(found, key=lambda k: (cells[k][1], -k))
    r1, win_pose = cells[win][1], cells[win][2]
    r2 = 0.0
    for k in found:
        other = cells[k][2]
        distinct = (np.linalg.norm(other.translation - win_pose.translation) > cs.distinct_translation
                    or compose(invert(other), win_pose).angle() > cfg.matching.angle_tol)
        if distinct:
            r2 = max(r2, cells[k][1])
    if r1 > cs.alpha and r1 > cs.beta * r2:
        return InitialPoseResult("pose", win_pose, r1, r2, tuple(cells))
    return InitialPoseResult("ambiguous", None, r1, r2, tuple(cells))


def initialize(first_scan: PointCloud, config: Optional[Config] = None,
               initial_pose: Optional[RigidTransform] = None,
               global_map: Optional[GlobalMap] = None, timestamp: float = 0.0,
               refine: bool = True) -> TrackerState:
    """Seed a tracker with its first scan.

    Without ``initial_pose`` the pose comes from the cell search. With a
    map and ``refine``, the seed is immediately corrected globally.
    """
    cfg = config or Config()
    cloud, segs = _prepare(first_scan, cfg)
    if initial_pose is None:
        if global_map is None:
            raise InitializationError("no initial pose and no map to search")
        with stage("initial_pose_search"):
            found = initial_pose_search(global_map, cloud, cfg)
        if found.status == "not_found":
            raise InitializationError("scan could not be located in the map", status="not_found")
        if found.status == "ambiguous":
            raise InitializationError(
                f"scan location is ambiguous (r1={found.r1:.3f}, r2={found.r2:.3f})",
                status="ambiguous")
        initial_pose = found.pose
    rec = ScanRecord(cloud, segs, Pose(timestamp, initial_pose))
    state = TrackerState([rec], cfg, global_map, initial_pose=initial_pose)
    if global_map is not None and refine:
        corrected = global_optimize(state, cloud, segs)
        if corrected is not None:
            rec.pose = corrected
            rec.flags.add("global")
        else:
            state.mode = "relative"
            state.master_index = 0
    elif global_map is None and cfg.localization.relative_without_map:
        state.mode = "relative"
        state.master_index = 0
    return state


def fused_map(state: TrackerState, global_map: GlobalMap):
    """Map cloud plus all scans in the map frame.

    Laser points take the color of the nearest map point. Returns the cloud
    and a per-point provenance array (0 = vision, 1 = laser).
    """
    laser = PointCloud.concatenate([rec.map_cloud() for rec in state.scans])
    mcloud = global_map.cloud
    if mcloud.colors is not None and len(mcloud) and len(laser):
        _, idx = cKDTree(mcloud.points).query(laser.points)
        laser_colors = mcloud.colors[idx]
    else:
        laser_colors = np.full((len(laser), 3), 160, dtype=np.uint8)
    map_colors = (mcloud.colors if mcloud.colors is not None
                  else np.full((len(mcloud), 3), 200, dtype=np.uint8))
    points = np.vstack([mcloud.points, laser.points])
    colors = np.vstack([map_colors, laser_colors])
    provenance = np.concatenate([np.zeros(len(mcloud), dtype=np.uint8),
                                 np.ones(len(laser), dtype=np.uint8)])
    return PointCloud(points, colors, "vision"), provenance
