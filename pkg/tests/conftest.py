import numpy as np
import pytest
from hypothesis import HealthCheck, settings, strategies as st
from scipy.spatial.transform import Rotation

from planefuse.geometry import PlanarSegment, RigidTransform
from planefuse.segmentation import make_segment

settings.register_profile("default", deadline=None, max_examples=60,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


def random_rotation(rng):
    return Rotation.random(random_state=rng).as_matrix()


def random_transform(rng, scale=5.0):
    return RigidTransform(random_rotation(rng), rng.uniform(-scale, scale, 3))


seeds = st.integers(min_value=0, max_value=2**32 - 1)


def rect_segment(lo, hi, n=400, seed=0, viewpoint=(0.0, 0.0, 0.0)) -> PlanarSegment:
    """Segment sampled on an axis-aligned rectangle (one zero-size axis)."""
    rng = np.random.default_rng(seed)
    lo, hi = np.asarray(lo, float), np.asarray(hi, float)
    pts = rng.uniform(lo, hi, size=(n, 3))
    # include the corners so extents are exact
    corners = np.array([[x, y, z] for x in (lo[0], hi[0]) for y in (lo[1], hi[1])
                        for z in (lo[2], hi[2])])
    pts = np.vstack([corners, pts])
    return make_segment(pts, np.arange(len(pts)), viewpoint)


def box_segments(lo, hi, viewpoint=None, n=400, seed=0):
    """The six faces of an axis-aligned box as segments, normals facing ``viewpoint``."""
    lo, hi = np.asarray(lo, float), np.asarray(hi, float)
    vp = (lo + hi) / 2 if viewpoint is None else np.asarray(viewpoint, float)
    segs = []
    for axis in range(3):
        for off in (lo[axis], hi[axis]):
            a, b = lo.copy(), hi.copy()
            a[axis] = b[axis] = off
            segs.append(rect_segment(a, b, n, seed + len(segs), vp))
    return segs


def extent_segment(lo, hi, normal=(0, 0, 1)):
    lo, hi = np.asarray(lo, float), np.asarray(hi, float)
    corners = np.array([[x, y, z] for x in (lo[0], hi[0]) for y in (lo[1], hi[1])
                        for z in (lo[2], hi[2])])
    n = np.asarray(normal, float)
    return PlanarSegment(n, float(n @ corners.mean(axis=0)), np.arange(8), 1.0, lo, hi,
                         corners.mean(axis=0), corners)


def overlap_oracle(src, tgt, T, eps):
    pts = T.apply(src.points)
    a0, a1 = pts.min(axis=0), pts.max(axis=0)
    b0, b1 = tgt.extent_min, tgt.extent_max
    skip = int(np.argmax(np.abs(tgt.normal)))
    for ax in range(3):
        if ax == skip:
            continue
        # half-open [lo, hi + eps) intervals intersect
        if not max(a0[ax], b0[ax]) < min(a1[ax] + eps, b1[ax] + eps):
            return False
    return True


ACCEPTANCE_KEY = pytest.StashKey[list]()


@pytest.fixture
def acceptance(request):
    """Record one PASS/FAIL line per criterion and fail the test on FAIL."""
    lines = request.config.stash.setdefault(ACCEPTANCE_KEY, [])

    def report(number, title, ok, detail):
        lines.append(f"{'PASS' if ok else 'FAIL'} criterion {number}: {title} ({detail})")
        print(lines[-1])
        assert ok, lines[-1]
    return report


def pytest_terminal_summary(terminalreporter, config):
    lines = config.stash.get(ACCEPTANCE_KEY, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda l: int(l.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
