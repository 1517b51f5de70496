"""Synthetic scenes of axis-aligned boxes and rectangles.

Two samplers emulate the sensors being fused: a laser-like scan from a
pose (range-limited, radial dropout, range noise, body frame) and a
vision-like map cloud (texture-modulated density, depth-proportional
noise from an overhead camera, colored).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import ConfigError
from .geometry import PointCloud, Pose, RigidTransform, Trajectory, invert, rotation_about_axis

# depth at which vision noise equals the nominal sigma
VISION_REFERENCE_DEPTH = 5.0


@dataclass(frozen=True)
class Primitive:
    """Axis-aligned box [lo, hi]; one zero-size axis makes it a single rectangle."""

    lo: tuple
    hi: tuple
    density: float = 100.0

    def validate(self):
        lo, hi = np.asarray(self.lo, float), np.asarray(self.hi, float)
        if lo.shape != (3,) or hi.shape != (3,) or not np.all(np.isfinite(lo)) or not np.all(np.isfinite(hi)):
            raise ConfigError("primitive corners must be two finite 3-vectors")
        if np.any(hi < lo):
            raise ConfigError("primitive hi must not be below lo")
        if int(np.sum(hi - lo == 0)) > 1:
            raise ConfigError("primitive must span at least two axes")
        if not self.density > 0:
            raise ConfigError("primitive density must be positive", key="density")
        return self

    @property
    def is_rectangle(self) -> bool:
        return bool(np.any(np.asarray(self.hi, float) - np.asarray(self.lo, float) == 0))

    def faces(self):
        """(axis, offset, in-plane axes, lo2, hi2) for every face."""
        lo, hi = np.asarray(self.lo, float), np.asarray(self.hi, float)
        out = []
        for axis in range(3):
            others = [a for a in range(3) if a != axis]
            offsets = [lo[axis]] if lo[axis] == hi[axis] else [lo[axis], hi[axis]]
            if self.is_rectangle and lo[axis] != hi[axis]:
                continue
            for off in offsets:
                out.append((axis, off, others, lo[others], hi[others]))
        return out


@dataclass(frozen=True)
class SceneSpec:
    primitives: tuple
    noise: float = 0.0
    sensor: str = "laser"

    def validate(self):
        if not self.primitives:
            raise ConfigError("scene has no primitives")
        for p in self.primitives:
            p.validate()
        if not self.noise >= 0:
            raise ConfigError("noise sigma must be non-negative", key="noise")
        if self.sensor not in ("laser", "vision"):
            raise ConfigError(f"unknown sensor {self.sensor!r}", key="sensor")
        return self

    def bounds(self):
        lo = np.min([p.lo for p in self.primitives], axis=0).astype(float)
        hi = np.max([p.hi for p in self.primitives], axis=0).astype(float)
        return lo, hi


def sample_surfaces(spec: SceneSpec, rng: np.random.Generator, density_scale=1.0):
    """Uniform samples on every primitive face; returns (points, face id)."""
    pts, ids = [], []
    fid = 0
    for prim in spec.primitives:
        for axis, off, others, lo2, hi2 in prim.faces():
            area = float(np.prod(hi2 - lo2))
            n = int(round(prim.density * density_scale * area))
            p = np.empty((n, 3))
            p[:, others] = rng.uniform(lo2, hi2, size=(n, 2))
            p[:, axis] = off
            pts.append(p)
            ids.append(np.full(n, fid))
            fid += 1
    if not pts:
        return np.empty((0, 3)), np.empty(0, dtype=int)
    return np.vstack(pts), np.concatenate(ids)


def laser_scan(spec: SceneSpec, pose: RigidTransform, rng: np.random.Generator,
               max_range: float = 8.0, dropout: float = 0.5) -> PointCloud:
    """Scan from ``pose`` in the sensor (body) frame.

    Points beyond ``max_range`` are lost and the keep probability falls
    quadratically with range; noise acts along the ray.
    """
    spec.validate()
    pts, _ = sample_surfaces(spec, rng)
    origin = pose.translation
    rel = pts - origin
    r = np.linalg.norm(rel, axis=1)
    keep = (r <= max_range) & (r > 1e-6)
    keep &= rng.random(len(pts)) < 1.0 - dropout * (r / max_range) ** 2
    rel, r = rel[keep], r[keep]
    if spec.noise > 0:
        rel = rel * (1.0 + rng.normal(0.0, spec.noise, len(r)) / r)[:, None]
    world = origin + rel
    return PointCloud(invert(pose).apply(world), None, "laser")


def _texture(pts, phases):
    t = np.ones(len(pts))
    for k, (freq, ph) in enumerate(phases):
        t *= 0.5 + 0.5 * np.sin(freq * pts[:, k % 3] + ph)
    return t


def vision_cloud(spec: SceneSpec, rng: np.random.Generator,
                 camera: Optional[np.ndarray] = None) -> PointCloud:
    """Colored map cloud as produced by a reconstruction from an overhead camera."""
    spec.validate()
    pts, face = sample_surfaces(spec, rng, density_scale=1.6)
    phases = [(rng.uniform(1.0, 3.0), rng.uniform(0, 2 * np.pi)) for _ in range(3)]
    tex = _texture(pts, phases)
    keep = rng.random(len(pts)) < 0.35 + 0.65 * tex
    pts, face, tex = pts[keep], face[keep], tex[keep]
    if camera is None:
        lo, hi = spec.bounds()
        camera = np.array([(lo[0] + hi[0]) / 2, (lo[1] + hi[1]) / 2, hi[2] + 15.0])
    if spec.noise > 0:
        rel = pts - camera
        depth = np.linalg.norm(rel, axis=1)
        sigma = spec.noise / VISION_REFERENCE_DEPTH
        pts = camera + rel * (1.0 + rng.normal(0.0, sigma, len(depth)))[:, None]
    tint = rng.uniform(0.5, 1.0, size=(int(face.max(initial=-1)) + 1, 3))
    colors = np.clip(255 * tint[face] * (0.3 + 0.7 * tex)[:, None], 0, 255).astype(np.uint8)
    return PointCloud(pts, colors, "vision")


def sample_cloud(spec: SceneSpec, rng: np.random.Generator,
                 pose: Optional[RigidTransform] = None, max_range: float = 8.0) -> PointCloud:
    if spec.sensor == "vision":
        return vision_cloud(spec, rng)
    return laser_scan(spec, pose or RigidTransform.identity(), rng, max_range)


def yaw_pose(x, y, z, yaw_deg=0.0) -> RigidTransform:
    return RigidTransform(rotation_about_axis([0, 0, 1], np.deg2rad(yaw_deg)), [x, y, z])


# --------------------------------------------------------------------------
# preset scenes
# --------------------------------------------------------------------------

def room(density=100.0, noise=0.0, sensor="laser") -> SceneSpec:
    """Closed 6 x 5 x 3 m room centered on the origin."""
    return SceneSpec((Primitive((-3.0, -2.5, -1.5), (3.0, 2.5, 1.5), density),), noise, sensor)


def rectangle(density=100.0, noise=0.0, sensor="laser") -> SceneSpec:
    return SceneSpec((Primitive((-2.0, -1.5, 0.0), (2.0, 1.5, 0.0), density),), noise, sensor)


def two_rooms(density=100.0, noise=0.0, sensor="laser") -> SceneSpec:
    """Large hall and a lower annex sharing the wall x = 8."""
    return SceneSpec((
        Primitive((0.0, 0.0, 0.0), (8.0, 6.0, 3.0), density),
        Primitive((8.0, 1.0, 0.0), (16.0, 5.0, 2.5), density),
    ), noise, sensor)


def two_rooms_trajectory() -> Trajectory:
    """Five sensor poses through :func:`two_rooms`, one second apart."""
    poses = [yaw_pose(2.0, 3.0, 1.2, 0.0), yaw_pose(4.0, 3.2, 1.2, 3.0),
             yaw_pose(6.0, 3.0, 1.3, 6.0), yaw_pose(9.0, 3.0, 1.2, 4.0),
             yaw_pose(12.0, 3.1, 1.2, 0.0)]
    return Trajectory(tuple(Pose(float(k), T) for k, T in enumerate(poses)))


UNIQUE_ROOM = ((4.0, 5.0, 0.0), (10.0, 10.0, 3.0))


def unique_room_map(density=60.0, noise=0.0, sensor="vision") -> SceneSpec:
    """40 x 40 m site with one 6 x 5 x 3 m room and differently sized buildings.

    Every other building differs from the room by at least 2.5 m along each
    axis, so no pair of its parallel faces fits the room's spacing.
    """
    return SceneSpec((
        Primitive(*UNIQUE_ROOM, density),
        Primitive((22.0, 3.0, 0.0), (37.0, 12.0, 8.0), density),
        Primitive((5.0, 22.0, 0.0), (7.5, 37.0, 7.0), density),
        Primitive((24.0, 25.0, 0.0), (38.0, 34.0, 10.0), density),
        Primitive((0.0, 0.0, 0.0), (0.0, 40.0, 1.0), density),
        Primitive((0.0, 40.0, 0.0), (40.0, 40.0, 1.0), density),
    ), noise, sensor)


TWIN_ROOMS = (((4.0, 5.0, 0.0), (10.0, 10.0, 3.0)), ((26.0, 25.0, 0.0), (32.0, 30.0, 3.0)))


def twin_room_map(density=60.0, noise=0.0, sensor="vision") -> SceneSpec:
    """40 x 40 m site holding two identical rooms."""
    return SceneSpec((
        Primitive(*TWIN_ROOMS[0], density),
        Primitive(*TWIN_ROOMS[1], density),
        Primitive((0.0, 0.0, 0.0), (0.0, 40.0, 1.0), density),
        Primitive((0.0, 40.0, 0.0), (40.0, 40.0, 1.0), density),
    ), noise, sensor)


def room_interior_pose(lo, hi) -> RigidTransform:
    lo, hi = np.asarray(lo, float), np.asarray(hi, float)
    return RigidTransform.from_translation((lo + hi) / 2.0)


PRESETS = {
    "room": room,
    "rectangle": rectangle,
    "two-rooms": two_rooms,
    "unique-room-map": unique_room_map,
    "twin-room-map": twin_room_map,
}


def parse_scene(text: str, noise=0.0, sensor="laser") -> SceneSpec:
    """Scene file: ``box|rect x0 y0 z0 x1 y1 z1 [density]`` per line."""
    prims = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        tok = line.split()
        if tok[0] not in ("box", "rect") or len(tok) not in (7, 8):
            raise ConfigError(f"line {lineno}: expected 'box|rect x0 y0 z0 x1 y1 z1 [density]'")
        try:
            v = [float(t) for t in tok[1:]]
        except ValueError:
            raise ConfigError(f"line {lineno}: non-numeric value") from None
        prim = Primitive(tuple(v[0:3]), tuple(v[3:6]), v[6] if len(v) == 7 else 100.0)
        prim.validate()
        if (tok[0] == "rect") != prim.is_rectangle:
            raise ConfigError(f"line {lineno}: {tok[0]} needs "
                              f"{'exactly one' if tok[0] == 'rect' else 'no'} zero-size axis")
        prims.append(prim)
    return SceneSpec(tuple(prims), noise, sensor).validate()


@dataclass
class SequenceData:
    scene: SceneSpec
    truth: Trajectory
    scans: list
    map_cloud: PointCloud
    odometry: list = field(default_factory=list)


def make_sequence(scene: SceneSpec, truth: Trajectory, seed: int = 0, max_range: float = 7.0,
                  odom_noise: float = 0.1, vision_noise: Optional[float] = None) -> SequenceData:
    """Laser scans along ``truth``, a vision map of the same scene and noisy odometry.

    Odometry entry k is the translation of scan k in the frame of scan k-1.
    """
    rng = np.random.default_rng(seed)
    scans = [laser_scan(scene, p.transform, rng, max_range) for p in truth]
    vis_spec = SceneSpec(scene.primitives, scene.noise if vision_noise is None else vision_noise,
                         "vision")
    map_cloud = vision_cloud(vis_spec, rng)
    odom = [None]
    for a, b in zip(truth.poses[:-1], truth.poses[1:]):
        rel = invert(a.transform) @ b.transform
        odom.append(rel.translation + rng.normal(0.0, odom_noise, 3))
    return SequenceData(scene, truth, scans, map_cloud, odom)
