import math

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from linesurf.arrangement import build_complex
from linesurf.geom import Plane, Segment3
from linesurf.lineio import LineCloud, ObservedSegment, Viewpoint, synth_cube
from linesurf.ransac import DetectParams, SupportState, detect_planes

settings.register_profile(
    "repo", deadline=None, derandomize=True, max_examples=40,
    suppress_health_check=[HealthCheck.too_slow, HealthCheck.data_too_large])
settings.load_profile("repo")

BOX = (np.full(3, -1.0), np.full(3, 1.0))


def _random_plane(rng):
    n = rng.normal(size=3)
    n /= np.linalg.norm(n)
    return Plane(tuple(n), float(rng.uniform(-0.4, 0.4)))


def _in_plane_segment(rng, plane, lo=0.25, hi=0.7):
    n = plane.n
    for _ in range(200):
        p = plane.project_point(rng.uniform(-0.7, 0.7, size=3))
        d = rng.normal(size=3)
        d -= (d @ n) * n
        d /= np.linalg.norm(d)
        ln = rng.uniform(lo, hi)
        a, b = p - 0.5 * ln * d, p + 0.5 * ln * d
        if np.all(np.abs(a) < 0.9) and np.all(np.abs(b) < 0.9):
            return a, b
    raise RuntimeError("could not place segment")


def _well_separated(planes, p, min_deg=8.0):
    for q in planes:
        c = abs(float(np.dot(p.n, q.n)))
        if math.degrees(math.acos(min(1.0, c))) < min_deg:
            return False
    return True


def micro_scene(seed: int, n_planes: int = 2, per_plane: int = 2, n_views: int = 2,
                n_outliers: int = 1, crease: bool = True):
    """Random planes, segments lying on them (plus a crease and outliers) and
    viewpoints; returns (cloud, support, complex). Support is assigned by
    construction, not detected."""
    rng = np.random.default_rng(seed)
    planes = []
    while len(planes) < n_planes:
        p = _random_plane(rng)
        if _well_separated(planes, p):
            planes.append(p)
    raw, owners = [], []
    for k, p in enumerate(planes):
        for _ in range(per_plane):
            raw.append(_in_plane_segment(rng, p))
            owners.append([k])
    if crease and n_planes >= 2:
        from linesurf.geom import plane_intersection_line
        pt, d = plane_intersection_line(planes[0], planes[1])
        s = rng.uniform(-0.3, 0.3)
        a, b = pt + (s - 0.25) * d, pt + (s + 0.25) * d
        if np.all(np.abs(a) < 0.95) and np.all(np.abs(b) < 0.95):
            raw.append((a, b))
            owners.append([0, 1])
    for _ in range(n_outliers):
        a = rng.uniform(-0.8, 0.8, size=3)
        b = a + rng.uniform(-0.4, 0.4, size=3)
        raw.append((a, np.clip(b, -0.9, 0.9)))
        owners.append([])
    vps = []
    while len(vps) < n_views:
        v = rng.uniform(-0.9, 0.9, size=3)
        if all(abs(p.n @ v - p.offset) > 0.05 for p in planes):
            vps.append(Viewpoint(len(vps), v))
    segs = []
    for sid, (a, b) in enumerate(raw):
        views = []
        for v in vps:
            if rng.uniform() < 0.3:
                t0, t1 = sorted(rng.uniform(0, 1, size=2))
                if t1 - t0 > 0.05:
                    views.append((v.id, float(t0), float(t1)))
                    continue
            views.append((v.id, 0.0, 1.0))
        segs.append(ObservedSegment(sid, Segment3(a, b), tuple(views)))
    cloud = LineCloud(vps, segs)
    support = SupportState.fresh([s for s in segs])
    for k, p in enumerate(planes):
        support.commit(p, [sid for sid, own in enumerate(owners) if k in own])
    cx = build_complex(planes, BOX)
    return cloud, support, cx


def split_cloud(cloud: LineCloud, support: SupportState, rng):
    """Split every segment at a random parameter, keeping views and planes."""
    segs, owners = [], []
    for s in cloud.segments:
        t = float(rng.uniform(0.2, 0.8))
        g = s.geometry
        mid = g.point_at(t)
        for lo, hi, a, b in ((0.0, t, g.p0, mid), (t, 1.0, mid, g.p1)):
            views = []
            for vid, t0, t1 in s.views:
                u0, u1 = max(t0, lo), min(t1, hi)
                if u1 - u0 > 1e-9:
                    views.append((vid, (u0 - lo) / (hi - lo), (u1 - lo) / (hi - lo)))
            segs.append(ObservedSegment(len(segs), Segment3(a, b), tuple(views)))
            owners.append(list(support.assigned.get(s.id, [])))
    cloud2 = LineCloud(cloud.viewpoints, [s for s in segs if s.views])
    keep = {s.id for s in cloud2.segments}
    sup = SupportState.fresh(cloud2.segments)
    for k, p in enumerate(support.planes):
        sup.commit(p, [sid for sid, own in enumerate(owners) if k in own and sid in keep])
    return cloud2, sup


@pytest.fixture(scope="session")
def clean_cube():
    return synth_cube(0.0, 0, 0)


@pytest.fixture(scope="session")
def cube_support(clean_cube):
    return detect_planes(clean_cube, DetectParams(epsilon=0.06, mode="exhaustive"), 0)


@pytest.fixture(scope="session")
def cube_complex(clean_cube, cube_support):
    return build_complex(cube_support.planes, clean_cube.bounding_box())


# acceptance outcomes, printed once at the end of the run
ACCEPTANCE: dict[int, str] = {}


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for k in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[k])
