"""Initial pose search on the unique-room and twin-room maps.

For each map a room-only laser scan is taken near the room center and
located in the map. Prints the outcome, the two best cell ratios and the
pose error.
"""

import argparse
import time

import numpy as np

from planefuse import synth
from planefuse.config import Config
from planefuse.geometry import rotation_distance
from planefuse.localization import GlobalMap, initial_pose_search
from planefuse.preprocessing import preprocess

MAPS = {
    "unique": (synth.unique_room_map, synth.UNIQUE_ROOM),
    "twin": (synth.twin_room_map, synth.TWIN_ROOMS[0]),
}


def run(name, seed, noise, offset, yaw):
    cfg = Config()
    mapfn, room = MAPS[name]
    rng = np.random.default_rng(seed)
    vision = synth.vision_cloud(mapfn(noise=noise), rng)
    center = synth.room_interior_pose(*room).translation
    true = synth.yaw_pose(*(center + offset), yaw)
    # the generator has no occlusion, so the scan covers only the room itself
    scan = synth.laser_scan(synth.SceneSpec((synth.Primitive(*room, 100.0),), noise), true, rng,
                            max_range=12)
    t0 = time.perf_counter()
    res = initial_pose_search(GlobalMap(preprocess(vision, cfg.filter)),
                              preprocess(scan, cfg.filter), cfg)
    secs = time.perf_counter() - t0
    line = f"map={name} seed={seed} status={res.status} r1={res.r1:.3f} r2={res.r2:.3f} " \
           f"cells={len(res.cells)} seconds={secs:.1f}"
    if res.found:
        line += (f" position_error={np.linalg.norm(res.pose.translation - true.translation):.4f}"
                 f" rotation_error={rotation_distance(res.pose.rotation, true.rotation):.4f}")
    print(line)


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--maps", nargs="+", choices=sorted(MAPS), default=sorted(MAPS, reverse=True))
    p.add_argument("--seeds", type=int, nargs="+", default=[3])
    p.add_argument("--noise", type=float, default=0.005)
    p.add_argument("--offset", type=float, nargs=3, default=[0.4, -0.3, 0.1])
    p.add_argument("--yaw", type=float, default=2.0, help="degrees")
    args = p.parse_args()
    for name in args.maps:
        for seed in args.seeds:
            run(name, seed, args.noise, np.array(args.offset), args.yaw)


if __name__ == "__main__":
    main()
