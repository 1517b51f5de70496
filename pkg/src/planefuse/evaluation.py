"""Relative pose error and absolute trajectory error."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InputError
from .geometry import RigidTransform, Trajectory, best_rotation, compose, invert


@dataclass(frozen=True, eq=False)
class ErrorStats:
    rmse: float
    min: float
    max: float
    per_pose: np.ndarray
    # set when the alignment was degenerate (e.g. collinear positions)
    degenerate: bool = False

    @classmethod
    def from_errors(cls, errors, degenerate=False) -> "ErrorStats":
        e = np.asarray(errors, dtype=float)
        if e.size == 0:
            return cls(0.0, 0.0, 0.0, e, degenerate)
        return cls(float(np.sqrt(np.mean(e ** 2))), float(e.min()), float(e.max()), e, degenerate)

    def summary(self) -> str:
        return f"rmse={self.rmse:.7g} min={self.min:.7g} max={self.max:.7g}"


def associate(est: Trajectory, ref: Trajectory, max_dt: float = 0.02):
    """Index pairs (est, ref) matched by nearest timestamp within ``max_dt``.

    Closest pairs are taken first and every pose is used at most once.
    """
    te, tr = est.timestamps, ref.timestamps
    if len(te) == 0 or len(tr) == 0:
        return []
    right = np.searchsorted(tr, te)
    cand = []
    for i, t in enumerate(te):
        for j in (right[i] - 1, right[i]):
            if 0 <= j < len(tr) and abs(tr[j] - t) <= max_dt:
                cand.append((abs(tr[j] - t), i, j))
    cand.sort()
    used_e, used_r, pairs = set(), set(), []
    for _, i, j in cand:
        if i in used_e or j in used_r:
            continue
        used_e.add(i)
        used_r.add(j)
        pairs.append((int(i), int(j)))
    pairs.sort()
    return pairs


def compute_rpe(est: Trajectory, ref: Trajectory, delta: int = 1,
                max_dt: float = 0.02) -> ErrorStats:
    """Translational relative pose error over steps of ``delta`` associated poses."""
    if delta < 1:
        raise InputError("delta must be at least 1")
    pairs = associate(est, ref, max_dt)
    if len(pairs) < delta + 1:
        raise InputError(f"need at least {delta + 1} associated poses, got {len(pairs)}")
    errors = []
    for k in range(len(pairs) - delta):
        (ei, ri), (ej, rj) = pairs[k], pairs[k + delta]
        ref_step = compose(invert(ref[ri].transform), ref[rj].transform)
        est_step = compose(invert(est[ei].transform), est[ej].transform)
        err = compose(invert(ref_step), est_step)
        errors.append(np.linalg.norm(err.translation))
    return ErrorStats.from_errors(errors)


def align_positions(est_pos, ref_pos):
    """Rigid transform g minimizing sum ||g(est_i) - ref_i||^2 and a degeneracy flag."""
    est_pos = np.asarray(est_pos, dtype=float)
    ref_pos = np.asarray(ref_pos, dtype=float)
    ce, cr = est_pos.mean(axis=0), ref_pos.mean(axis=0)
    A, B = est_pos - ce, ref_pos - cr
    sv = np.linalg.svd(A, compute_uv=False)
    degenerate = bool(sv[0] == 0 or sv[1] <= 1e-9 * sv[0])
    R = best_rotation(A, B)
    return RigidTransform(R, cr - R @ ce), degenerate


def compute_ate(est: Trajectory, ref: Trajectory, max_dt: float = 0.02) -> ErrorStats:
    """Position error after closed-form rigid alignment of ``est`` onto ``ref``."""
    pairs = associate(est, ref, max_dt)
    if len(pairs) < 3:
        raise InputError(f"need at least 3 associated poses, got {len(pairs)}")
    ei = [i for i, _ in pairs]
    ri = [j for _, j in pairs]
    est_pos = est.positions[ei]
    ref_pos = ref.positions[ri]
    g, degenerate = align_positions(est_pos, ref_pos)
    errors = np.linalg.norm(g.apply(est_pos) - ref_pos, axis=1)
    # below this the error is alignment round-off, so identical inputs report 0
    floor = 1e-12 * max(1.0, float(np.abs(ref_pos).max()))
    errors[errors < floor] = 0.0
    return ErrorStats.from_errors(errors, degenerate)
