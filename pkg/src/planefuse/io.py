"""ASCII point-cloud, trajectory, transform and segment files.

Clouds are read from ASCII PLY or whitespace-separated ``x y z [r g b]``
text. Cloud coordinates are written with 7 significant digits, so a save/
load round trip is exact to about 5e-7 relative. A ``-`` path means
stdin/stdout.
"""

from __future__ import annotations

import io as _io
import math
import sys
from pathlib import Path
from typing import Optional

import numpy as np

from .errors import CloudParseError, InputError
from .geometry import PlanarSegment, PointCloud, Pose, RigidTransform, Trajectory

CLOUD_FORMATS = ("ply", "xyz")


def fmt(x, digits=7) -> str:
    """Shortest-ish float text with ``digits`` significant digits; integers keep a '.0'."""
    s = f"{float(x):.{digits}g}"
    if s in ("-0", "-0.0"):
        s = "0"
    if not any(c in s for c in ".enai"):
        s += ".0"
    return s


def _read_text(path) -> str:
    if str(path) == "-":
        data = sys.stdin.buffer.read()
    else:
        data = Path(path).read_bytes()
    try:
        return data.decode("utf-8")
    except UnicodeDecodeError as exc:
        raise CloudParseError(f"not a text file ({exc.reason})") from None


def _write_text(path, text: str):
    if str(path) == "-":
        sys.stdout.write(text)
        sys.stdout.flush()
        return
    try:
        Path(path).write_text(text)
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc.strerror}") from exc


def detect_format(path, text: Optional[str] = None) -> str:
    if text is not None and text.lstrip("﻿").startswith("ply"):
        return "ply"
    suffix = Path(str(path)).suffix.lower()
    if suffix == ".ply":
        return "ply"
    return "xyz"


# --------------------------------------------------------------------------
# clouds
# --------------------------------------------------------------------------

def _finite_row(tokens, lineno):
    try:
        vals = [float(t) for t in tokens]
    except ValueError:
        raise CloudParseError(f"non-numeric value in {' '.join(tokens)!r}", lineno) from None
    if not all(math.isfinite(v) for v in vals):
        raise CloudParseError("non-finite coordinate", lineno)
    return vals


def _colors(vals, lineno):
    out = []
    for v in vals:
        if v != int(v) or not 0 <= v <= 255:
            raise CloudParseError(f"color component {v} outside 0..255", lineno)
        out.append(int(v))
    return out


def parse_xyz(text: str, source_tag: Optional[str] = None) -> PointCloud:
    pts, cols = [], []
    width = None
    tag = source_tag
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        if stripped.startswith("#"):
            words = stripped[1:].split()
            if tag is None and len(words) == 2 and words[0] == "source" and words[1] in ("laser", "vision"):
                tag = words[1]
            continue
        if not stripped:
            continue
        tokens = stripped.split()
        if len(tokens) not in (3, 6):
            raise CloudParseError(f"expected 3 or 6 columns, got {len(tokens)}", lineno)
        if width is None:
            width = len(tokens)
        elif len(tokens) != width:
            raise CloudParseError(f"expected {width} columns, got {len(tokens)}", lineno)
        vals = _finite_row(tokens, lineno)
        pts.append(vals[:3])
        if width == 6:
            cols.append(_colors(vals[3:], lineno))
    points = np.array(pts, dtype=float).reshape(-1, 3)
    colors = np.array(cols, dtype=np.uint8).reshape(-1, 3) if width == 6 else None
    return PointCloud(points, colors, tag or "laser")


def _parse_ply_header(lines):
    if not lines or lines[0].strip().lstrip("﻿") != "ply":
        raise CloudParseError("missing 'ply' magic", 1)
    elements = []          # [name, count, [property names], header line]
    fmt_seen = False
    tag = None
    for k in range(1, len(lines)):
        lineno = k + 1
        words = lines[k].split()
        if not words:
            continue
        kw = words[0]
        if kw == "format":
            if len(words) != 3 or words[1] != "ascii":
                raise CloudParseError("only 'format ascii 1.0' is supported", lineno)
            fmt_seen = True
        elif kw in ("comment", "obj_info"):
            if len(words) == 3 and words[1] == "source" and words[2] in ("laser", "vision"):
                tag = words[2]
        elif kw == "element":
            if len(words) != 3:
                raise CloudParseError("malformed element line", lineno)
            try:
                count = int(words[2])
            except ValueError:
                raise CloudParseError(f"bad element count {words[2]!r}", lineno) from None
            if count < 0:
                raise CloudParseError("negative element count", lineno)
            elements.append([words[1], count, [], lineno])
        elif kw == "property":
            if not elements:
                raise CloudParseError("property before any element", lineno)
            if len(words) >= 2 and words[1] == "list":
                if len(words) != 5:
                    raise CloudParseError("malformed list property", lineno)
                if elements[-1][0] == "vertex":
                    raise CloudParseError("list properties on vertices are not supported", lineno)
                elements[-1][2].append(words[4])
            elif len(words) != 3:
                raise CloudParseError("malformed property line", lineno)
            else:
                elements[-1][2].append(words[2])
        elif kw == "end_header":
            if not fmt_seen:
                raise CloudParseError("header has no format line", lineno)
            return elements, k + 1, tag
        else:
            raise CloudParseError(f"unexpected header keyword {kw!r}", lineno)
    raise CloudParseError("missing end_header", len(lines))


def parse_ply(text: str, source_tag: Optional[str] = None) -> PointCloud:
    lines = text.splitlines()
    elements, body, tag = _parse_ply_header(lines)
    vertex = [e for e in elements if e[0] == "vertex"]
    if len(vertex) != 1:
        raise CloudParseError("header must declare exactly one vertex element")
    props = vertex[0][2]
    for axis in ("x", "y", "z"):
        if axis not in props:
            raise CloudParseError(f"vertex element lacks property {axis}", vertex[0][3])
    rgb = [p in props for p in ("red", "green", "blue")]
    if any(rgb) and not all(rgb):
        raise CloudParseError("color needs all of red, green, blue", vertex[0][3])
    ix = [props.index(a) for a in ("x", "y", "z")]
    ic = [props.index(a) for a in ("red", "green", "blue")] if all(rgb) else None

    pos = body
    pts, cols = [], []
    for name, count, eprops, _ in elements:
        taken = 0
        while taken < count:
            if pos >= len(lines):
                raise CloudParseError(
                    f"element {name} declares {count} records, found {taken}", pos)
            tokens = lines[pos].split()
            pos += 1
            if not tokens:
                continue
            taken += 1
            if name != "vertex":
                continue
            if len(tokens) != len(eprops):
                raise CloudParseError(
                    f"expected {len(eprops)} values, got {len(tokens)}", pos)
            vals = _finite_row(tokens, pos)
            pts.append([vals[i] for i in ix])
            if ic is not None:
                cols.append(_colors([vals[i] for i in ic], pos))
    for k in range(pos, len(lines)):
        if lines[k].strip():
            raise CloudParseError("data beyond the declared element counts", k + 1)
    points = np.array(pts, dtype=float).reshape(-1, 3)
    colors = np.array(cols, dtype=np.uint8).reshape(-1, 3) if ic is not None else None
    return PointCloud(points, colors, source_tag or tag or "laser")


def parse_cloud(text: str, fmt_name: str, source_tag: Optional[str] = None) -> PointCloud:
    if fmt_name == "ply":
        return parse_ply(text, source_tag)
    if fmt_name == "xyz":
        return parse_xyz(text, source_tag)
    raise InputError(f"unknown cloud format {fmt_name!r}")


def load_cloud(path, source_tag: Optional[str] = None) -> PointCloud:
    """Read an ASCII PLY or xyz cloud; format comes from the header or extension."""
    text = _read_text(path)
    return parse_cloud(text, detect_format(path, text), source_tag)


def format_cloud(cloud: PointCloud, fmt_name: str = "xyz", extra=None) -> str:
    """Serialize a cloud. ``extra`` maps property name to a per-point uint8 array (PLY only)."""
    extra = extra or {}
    buf = _io.StringIO()
    rows = [" ".join(fmt(v) for v in p) for p in cloud.points]
    if cloud.colors is not None:
        rows = [f"{r} {c[0]} {c[1]} {c[2]}" for r, c in zip(rows, cloud.colors)]
    for name, values in extra.items():
        rows = [f"{r} {int(v)}" for r, v in zip(rows, values)]
    if fmt_name == "ply":
        buf.write("ply\nformat ascii 1.0\n")
        buf.write(f"comment source {cloud.source_tag}\n")
        buf.write(f"element vertex {len(cloud)}\n")
        buf.write("property float x\nproperty float y\nproperty float z\n")
        if cloud.colors is not None:
            buf.write("property uchar red\nproperty uchar green\nproperty uchar blue\n")
        for name in extra:
            buf.write(f"property uchar {name}\n")
        buf.write("end_header\n")
    elif fmt_name == "xyz":
        if extra:
            raise InputError("extra per-point properties need the ply format")
        if cloud.source_tag != "laser":
            buf.write(f"# source {cloud.source_tag}\n")
    else:
        raise InputError(f"unknown cloud format {fmt_name!r}")
    for r in rows:
        buf.write(r + "\n")
    return buf.getvalue()


def save_cloud(cloud: PointCloud, path, fmt_name: Optional[str] = None, extra=None):
    if fmt_name is None:
        fmt_name = "ply" if str(path).lower().endswith(".ply") else "xyz"
    _write_text(path, format_cloud(cloud, fmt_name, extra))


def save_fused_cloud(cloud: PointCloud, provenance, path):
    """PLY with a ``source`` property per point (0 = vision, 1 = laser)."""
    save_cloud(cloud, path, "ply", {"source": np.asarray(provenance)})


# --------------------------------------------------------------------------
# trajectories, transforms, segments
# --------------------------------------------------------------------------

def parse_trajectory(text: str) -> Trajectory:
    poses = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        tokens = line.split()
        if len(tokens) != 8:
            raise InputError(f"line {lineno}: trajectory lines need 8 values, got {len(tokens)}")
        try:
            vals = [float(t) for t in tokens]
        except ValueError:
            raise InputError(f"line {lineno}: non-numeric trajectory value") from None
        if not all(math.isfinite(v) for v in vals):
            raise InputError(f"line {lineno}: non-finite trajectory value")
        q = np.array(vals[4:8])
        if np.linalg.norm(q) < 1e-9:
            raise InputError(f"line {lineno}: zero quaternion")
        poses.append(Pose(vals[0], RigidTransform.from_quaternion(q / np.linalg.norm(q), vals[1:4])))
    try:
        return Trajectory(tuple(poses))
    except ValueError as exc:
        raise InputError(str(exc)) from None


def load_trajectory(path) -> Trajectory:
    if str(path) == "-":
        return parse_trajectory(sys.stdin.read())
    return parse_trajectory(Path(path).read_text())


def format_trajectory(traj: Trajectory, metadata=()) -> str:
    """TUM-style pose lines; ``metadata`` lines are written first as comments."""
    lines = [f"# {m}" if m else "#" for m in metadata] + ["# timestamp tx ty tz qx qy qz qw"]
    for p in traj:
        q = p.transform.quaternion()
        vals = [f"{p.timestamp:.6f}"] + [fmt(v, 10) for v in p.position] + [fmt(v, 10) for v in q]
        lines.append(" ".join(vals))
    return "\n".join(lines) + "\n"


def save_trajectory(traj: Trajectory, path, metadata=()):
    _write_text(path, format_trajectory(traj, metadata))


def format_transform(T: RigidTransform) -> str:
    M = T.matrix()
    # round-off from an identity estimate should print as an identity
    M[np.abs(M) < 1e-12] = 0.0
    return "\n".join(" ".join(fmt(v, 10) for v in row) for row in M) + "\n"


def save_transform(T: RigidTransform, path):
    _write_text(path, format_transform(T))


def load_transform(path) -> RigidTransform:
    text = sys.stdin.read() if str(path) == "-" else Path(path).read_text()
    rows = [line.split() for line in text.splitlines()
            if line.split("#", 1)[0].strip()]
    try:
        M = np.array([[float(v) for v in r] for r in rows], dtype=float)
    except ValueError:
        raise InputError(f"{path}: non-numeric transform entry") from None
    if M.shape == (3, 4):
        M = np.vstack([M, [0, 0, 0, 1]])
    if M.shape != (4, 4):
        raise InputError(f"{path}: transform file needs 4 rows of 4 numbers")
    T = RigidTransform.from_matrix(M)
    if not T.is_orthonormal(1e-6):
        raise InputError(f"{path}: rotation block is not a rotation")
    # re-orthonormalize text-rounded rotations
    U, _, Vt = np.linalg.svd(T.rotation)
    return RigidTransform(U @ Vt, T.translation)


def format_segments(segments) -> str:
    """One line per segment: nx ny nz d area n_inliers minx miny minz maxx maxy maxz."""
    lines = []
    for s in segments:
        vals = [fmt(v) for v in s.normal] + [fmt(s.distance), fmt(s.area), str(s.n_inliers)]
        vals += [fmt(v) for v in s.extent_min] + [fmt(v) for v in s.extent_max]
        lines.append(" ".join(vals))
    return "\n".join(lines) + ("\n" if lines else "")


def save_segments(segments, path):
    _write_text(path, format_segments(segments))


def parse_segments(text: str):
    """Read a segment file back as plain records (no inlier coordinates)."""
    out = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        tok = line.split()
        if len(tok) != 12:
            raise InputError(f"line {lineno}: segment lines need 12 values")
        v = [float(t) for t in tok]
        out.append({"normal": np.array(v[0:3]), "distance": v[3], "area": v[4],
                    "n_inliers": int(v[5]), "extent_min": np.array(v[6:9]),
                    "extent_max": np.array(v[9:12])})
    return out


def segment_from_record(rec) -> PlanarSegment:
    lo, hi = rec["extent_min"], rec["extent_max"]
    return PlanarSegment(rec["normal"], rec["distance"], np.arange(rec["n_inliers"]), rec["area"],
                         lo, hi, (lo + hi) / 2.0, np.array([lo, hi]))
