"""Plane-correspondence registration.

Correspondences between source and target segments are found greedily and
verified by an extent-overlap test. Rotation and translation are then
solved separately: the rotation aligns matched normals, the translation
solves N t = d through the SVD of the stacked target normals, keeping only
the directions the planes actually observe. Unobserved directions can be
filled from an external translation estimate such as wheel odometry.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy.spatial import cKDTree

from .errors import InputError, ParameterError
from .geometry import (PlanarSegment, PointCloud, RigidTransform, best_rotation,
                       compose, fit_rigid, transform_plane)
from .segmentation import SegmentationParams, segment_planes

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class MatchParams:
    angle_tol: float = float(np.deg2rad(10.0))
    distance_tol: float = 1.0
    area_ratio_tol: float = 0.25
    overlap_epsilon: float = 0.3
    rank_tol: float = 1e-3
    # compare planes without regard to normal orientation
    allow_flip: bool = False

    def validate(self):
        for name in ("angle_tol", "distance_tol", "overlap_epsilon", "rank_tol"):
            if not getattr(self, name) > 0:
                raise ParameterError(f"{name} must be positive", key=name)
        if not 0 < self.area_ratio_tol <= 1:
            raise ParameterError("area_ratio_tol must lie in (0, 1]", key="area_ratio_tol")
        return self


@dataclass(frozen=True)
class CorrespondenceSet:
    """Pairs (source index, target index); each index used at most once."""

    pairs: tuple = ()
    # per-pair flag: target plane compared with flipped orientation
    flipped: tuple = ()

    def __post_init__(self):
        pairs = tuple((int(i), int(j)) for i, j in self.pairs)
        object.__setattr__(self, "pairs", pairs)
        flips = tuple(bool(f) for f in self.flipped) or (False,) * len(pairs)
        if len(flips) != len(pairs):
            raise ValueError("flipped must have one entry per pair")
        object.__setattr__(self, "flipped", flips)
        src = [i for i, _ in pairs]
        tgt = [j for _, j in pairs]
        if len(set(src)) != len(src) or len(set(tgt)) != len(tgt):
            raise ValueError("correspondences must be one-to-one")

    def __len__(self):
        return len(self.pairs)

    def __iter__(self):
        return iter(self.pairs)

    @property
    def count(self) -> int:
        return len(self.pairs)

    def validate(self, n_src, n_tgt):
        for i, j in self.pairs:
            if not (0 <= i < n_src and 0 <= j < n_tgt):
                raise InputError(f"correspondence ({i}, {j}) out of range")
        return self


@dataclass(frozen=True, eq=False)
class RegistrationResult:
    transform: RigidTransform
    correspondences: CorrespondenceSet
    rotation_residual: float = 0.0
    translation_residual: float = 0.0
    success: bool = True
    source_segments: tuple = field(default=(), repr=False)
    target_segments: tuple = field(default=(), repr=False)

    @property
    def rank(self) -> int:
        return self.transform.translation_rank


# --------------------------------------------------------------------------
# overlap test
# --------------------------------------------------------------------------

def dominant_axis(normal) -> int:
    return int(np.argmax(np.abs(normal)))


def check_overlap(src: PlanarSegment, tgt: PlanarSegment, T: RigidTransform,
                  eps: float) -> bool:
    """Extent-overlap test between a source plane moved by ``T`` and a target plane.

    The axis closest to the target normal is not tested.
    """
    if not eps > 0:
        raise ParameterError("overlap tolerance must be positive")
    moved = transform_plane(T, src)
    skip = dominant_axis(tgt.normal)
    axes = [a for a in range(3) if a != skip]
    return bool(np.all(tgt.extent_min[axes] < moved.extent_max[axes] + eps)
                and np.all(moved.extent_min[axes] < tgt.extent_max[axes] + eps))


# --------------------------------------------------------------------------
# rotation and translation
# --------------------------------------------------------------------------

def _oriented_target(tgt: PlanarSegment, flip: bool):
    return (-tgt.normal, -tgt.distance) if flip else (tgt.normal, tgt.distance)


def estimate_rotation(src_normals, tgt_normals) -> np.ndarray:
    """Rotation minimizing 0.5 * sum ||R n_src - n_tgt||^2."""
    src_normals = np.asarray(src_normals, dtype=float).reshape(-1, 3)
    tgt_normals = np.asarray(tgt_normals, dtype=float).reshape(-1, 3)
    if len(src_normals) == 0:
        raise InputError("rotation estimation needs at least one correspondence")
    if len(src_normals) != len(tgt_normals):
        raise InputError("normal lists differ in length")
    return best_rotation(src_normals, tgt_normals)


def rotation_objective(R, src_normals, tgt_normals) -> float:
    diff = np.asarray(src_normals) @ np.asarray(R).T - np.asarray(tgt_normals)
    return float(0.5 * np.sum(diff ** 2))


@dataclass(frozen=True, eq=False)
class TranslationEstimate:
    translation: np.ndarray
    rank: int
    null_directions: tuple
    singular_values: np.ndarray
    residual: float


def solve_translation(N, d, rank_tol: float = 1e-3, t_e=None) -> TranslationEstimate:
    """Solve N t = d keeping only well-observed directions.

    With N = U S V^T, the rank r counts singular values above
    ``rank_tol * s_max``. The estimate is sum_{i<=r} (u_i . d) / s_i v_i, the
    minimum-norm least-squares solution on the observed subspace. When
    ``t_e`` is given, its projection onto the unobserved directions
    v_{r+1..3} is added.
    """
    N = np.asarray(N, dtype=float).reshape(-1, 3)
    d = np.asarray(d, dtype=float).reshape(-1)
    if len(N) == 0:
        raise InputError("translation estimation needs at least one correspondence")
    if len(d) != len(N):
        raise InputError("N and d differ in length")
    U, S, Vt = np.linalg.svd(N, full_matrices=True)
    r = int(np.sum(S > rank_tol * S[0])) if S[0] > 0 else 0
    t = np.zeros(3)
    for i in range(r):
        t += (U[:, i] @ d) / S[i] * Vt[i]
    nulls = tuple(Vt[r:].copy())
    if t_e is not None:
        t_e = np.asarray(t_e, dtype=float).reshape(3)
        for v in nulls:
            t += (t_e @ v) * v
    residual = float(np.linalg.norm(N @ t - d))
    return TranslationEstimate(t, r, nulls, S, residual)


def build_translation_system(src_segs: Sequence[PlanarSegment], tgt_segs: Sequence[PlanarSegment],
                             corr: CorrespondenceSet, R):
    """Rows of target normals and plane offsets for the rotated source.

    The offset of each pair is the distance along the target normal from
    the rotated source centroid to the target plane.
    """
    R = np.asarray(R, dtype=float)
    N = np.empty((len(corr), 3))
    d = np.empty(len(corr))
    for k, ((i, j), flip) in enumerate(zip(corr.pairs, corr.flipped)):
        n_t, d_t = _oriented_target(tgt_segs[j], flip)
        N[k] = n_t
        d[k] = d_t - n_t @ (R @ src_segs[i].centroid)
    return N, d


def estimate_translation(src_segs, tgt_segs, corr: CorrespondenceSet, R,
                         rank_tol: float = 1e-3, t_e=None) -> TranslationEstimate:
    if len(corr) == 0:
        raise InputError("translation estimation needs at least one correspondence")
    N, d = build_translation_system(src_segs, tgt_segs, corr, R)
    return solve_translation(N, d, rank_tol, t_e)


def _normals_for(src_segs, tgt_segs, corr):
    src_n = np.array([src_segs[i].normal for i, _ in corr.pairs])
    tgt_n = np.array([_oriented_target(tgt_segs[j], f)[0]
                      for (_, j), f in zip(corr.pairs, corr.flipped)])
    return src_n, tgt_n


def estimate_transform(src_segs, tgt_segs, corr: CorrespondenceSet, rank_tol=1e-3, t_e=None):
    """Rotation then translation from a correspondence set.

    Returns (transform, rotation residual, translation residual).
    """
    src_n, tgt_n = _normals_for(src_segs, tgt_segs, corr)
    R = estimate_rotation(src_n, tgt_n)
    tr = estimate_translation(src_segs, tgt_segs, corr, R, rank_tol, t_e)
    T = RigidTransform(R, tr.translation, tr.rank, tr.null_directions)
    return T, rotation_objective(R, src_n, tgt_n), tr.residual


# --------------------------------------------------------------------------
# correspondence search
# --------------------------------------------------------------------------

def candidate_pairs(src_segs, tgt_segs, params: MatchParams):
    """All plane pairs passing the angle, offset and area gates, best first.

    Each candidate is (score, source index, target index, flipped).
    """
    if not src_segs or not tgt_segs:
        return []
    sn = np.array([s.normal for s in src_segs])
    sd = np.array([s.distance for s in src_segs])
    sa = np.array([s.area for s in src_segs])
    tn = np.array([s.normal for s in tgt_segs])
    td = np.array([s.distance for s in tgt_segs])
    ta = np.array([s.area for s in tgt_segs])

    cos = sn @ tn.T
    flip = np.zeros_like(cos, dtype=bool)
    if params.allow_flip:
        flip = cos < 0
    sign = np.where(flip, -1.0, 1.0)
    angle = np.arccos(np.clip(cos * sign, -1.0, 1.0))
    ddist = np.abs(sd[:, None] - sign * td[None, :])
    hi = np.maximum(sa[:, None], ta[None, :])
    ratio = np.where(hi > 0, np.minimum(sa[:, None], ta[None, :]) / np.where(hi > 0, hi, 1.0), 1.0)
    ok = ((angle <= params.angle_tol) & (ddist <= params.distance_tol)
          & (ratio >= params.area_ratio_tol))
    score = (0.5 * (1 - angle / params.angle_tol) + 0.3 * (1 - ddist / params.distance_tol)
             + 0.2 * ratio)
    cands = [(float(score[i, j]), i, j, bool(flip[i, j])) for i, j in zip(*np.nonzero(ok))]
    # best score, then larger source area, then lower source index
    cands.sort(key=lambda c: (-c[0], -sa[c[1]], c[1], c[2]))
    return cands


def _greedy(cands):
    used_s, used_t = set(), set()
    pairs, flips = [], []
    for _, i, j, f in cands:
        if i in used_s or j in used_t:
            continue
        used_s.add(i)
        used_t.add(j)
        pairs.append((i, j))
        flips.append(f)
    return pairs, flips


def match_planes(src_segs: Sequence[PlanarSegment], tgt_segs: Sequence[PlanarSegment],
                 params: MatchParams = MatchParams(),
                 T_hint: Optional[RigidTransform] = None) -> CorrespondenceSet:
    """Greedy one-to-one plane matching with overlap verification.

    Source segments are moved by ``T_hint`` before gating. Tentative pairs
    are accepted best-score first; the transform estimated from them must
    make each retained pair overlap, otherwise the pair is dropped and the
    transform re-estimated.
    """
    params.validate()
    if T_hint is not None:
        src_segs = [transform_plane(T_hint, s) for s in src_segs]
    pairs, flips = _greedy(candidate_pairs(src_segs, tgt_segs, params))
    for _ in range(len(pairs) + 1):
        if not pairs:
            break
        corr = CorrespondenceSet(pairs, flips)
        T, _, _ = estimate_transform(src_segs, tgt_segs, corr, params.rank_tol)
        keep = [check_overlap(src_segs[i], tgt_segs[j], T, params.overlap_epsilon)
                for i, j in pairs]
        if all(keep):
            break
        pairs = [p for p, k in zip(pairs, keep) if k]
        flips = [f for f, k in zip(flips, keep) if k]
    return CorrespondenceSet(pairs, flips)


# --------------------------------------------------------------------------
# full pipeline
# --------------------------------------------------------------------------

def _failure(src_segs, tgt_segs):
    return RegistrationResult(RigidTransform.identity(), CorrespondenceSet(), 0.0, 0.0, False,
                              tuple(src_segs), tuple(tgt_segs))


def register_segments(src_segs, tgt_segs, params: MatchParams = MatchParams(),
                      T_hint: Optional[RigidTransform] = None, t_e=None) -> RegistrationResult:
    """Register pre-segmented clouds; the result maps source into target.

    ``t_e`` is an external estimate of the full source-to-target
    translation used for directions the planes do not observe.
    """
    hint = T_hint if T_hint is not None else RigidTransform.identity()
    moved = [transform_plane(hint, s) for s in src_segs]
    corr = match_planes(moved, tgt_segs, params)
    if len(corr) == 0:
        return _failure(src_segs, tgt_segs)
    src_n, tgt_n = _normals_for(moved, tgt_segs, corr)
    R = estimate_rotation(src_n, tgt_n)
    # external estimate of the correction translation
    t_corr_e = None
    if t_e is not None:
        t_corr_e = np.asarray(t_e, dtype=float) - R @ hint.translation
    tr = estimate_translation(moved, tgt_segs, corr, R, params.rank_tol, t_corr_e)
    correction = RigidTransform(R, tr.translation)
    full = compose(correction, hint)
    T = RigidTransform(full.rotation, full.translation, tr.rank, tr.null_directions)
    return RegistrationResult(T, corr, rotation_objective(R, src_n, tgt_n), tr.residual,
                              True, tuple(src_segs), tuple(tgt_segs))


def register(src_cloud: PointCloud, tgt_cloud: PointCloud,
             seg_params: SegmentationParams = SegmentationParams(),
             match_params: MatchParams = MatchParams(),
             T_hint: Optional[RigidTransform] = None, t_e=None,
             src_viewpoint=(0.0, 0.0, 0.0), tgt_viewpoint=(0.0, 0.0, 0.0)) -> RegistrationResult:
    if len(src_cloud) == 0 or len(tgt_cloud) == 0:
        raise InputError("registration needs two non-empty clouds")
    src_segs = segment_planes(src_cloud, seg_params, src_viewpoint)
    tgt_segs = segment_planes(tgt_cloud, seg_params, tgt_viewpoint)
    return register_segments(src_segs, tgt_segs, match_params, T_hint, t_e)


# --------------------------------------------------------------------------
# ICP refinement
# --------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class IcpResult:
    transform: RigidTransform
    ok: bool
    mean_residual: float
    iterations: int


def _truncated_residual(tree, pts, max_dist):
    d, _ = tree.query(pts, distance_upper_bound=max_dist)
    return float(np.minimum(d, max_dist).mean())


def icp_refine(src_cloud: PointCloud, tgt_cloud: PointCloud, T_init: RigidTransform,
               max_iter: int = 50, max_corr_dist: float = 0.5, tol: float = 1e-6) -> IcpResult:
    """Point-to-point ICP starting from ``T_init``.

    The returned transform is the best visited one under the mean
    nearest-neighbor distance truncated at ``max_corr_dist``, so it is never
    worse than ``T_init`` by that measure. ``ok`` is False when no source
    point has a partner within ``max_corr_dist``.
    """
    if len(src_cloud) == 0 or len(tgt_cloud) == 0:
        raise InputError("ICP needs two non-empty clouds")
    src = src_cloud.points
    tgt = tgt_cloud.points
    tree = cKDTree(tgt)
    T = T_init
    best = T_init
    best_res = _truncated_residual(tree, T_init.apply(src), max_corr_dist)
    it = 0
    for it in range(1, max_iter + 1):
        moved = T.apply(src)
        d, idx = tree.query(moved, distance_upper_bound=max_corr_dist)
        valid = np.isfinite(d)
        if valid.sum() < 3:
            if it == 1:
                log.warning("ICP found no correspondences within %.3f m", max_corr_dist)
                return IcpResult(T_init, False, best_res, 0)
            break
        T_new = fit_rigid(src[valid], tgt[idx[valid]])
        change = (np.linalg.norm(T_new.rotation - T.rotation)
                  + np.linalg.norm(T_new.translation - T.translation))
        T = T_new
        res = _truncated_residual(tree, T.apply(src), max_corr_dist)
        if res < best_res:
            best, best_res = T, res
        if change < tol:
            break
    return IcpResult(best, True, best_res, it)


def pose_change(T: RigidTransform):
    """(rotation angle, translation norm) of a correction."""
    return T.angle(), float(np.linalg.norm(T.translation))

