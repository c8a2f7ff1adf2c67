"""Line-cloud data model, ``linecloud/1`` text format, and synthetic scenes.

A line cloud is a list of viewpoints plus 3D segments; every segment carries,
per viewpoint that observes it, the sub-intervals of its ``[0, 1]``
parameterization that are visible (unoccluded) from that viewpoint.
"""

from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .geom import Segment3
from .surface import PolygonMesh

FORMAT = "linecloud/1"
MIN_INTERVAL = 1e-9


class ParseError(ValueError):
    pass


class ValidationError(ValueError):
    def __init__(self, problems: list[str]):
        self.problems = list(problems)
        super().__init__("invalid line cloud:\n  " + "\n  ".join(self.problems))


class SpecError(ValueError):
    pass


@dataclass(frozen=True)
class Viewpoint:
    id: int
    position: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "position", np.asarray(self.position, dtype=float).reshape(3))


@dataclass(frozen=True)
class ObservedSegment:
    """A 3D segment with its visibility record.

    ``views`` holds ``(viewpoint_id, t0, t1)`` triples; several disjoint
    intervals per viewpoint are allowed.
    """

    id: int
    geometry: Segment3
    views: tuple[tuple[int, float, float], ...]

    def __post_init__(self):
        object.__setattr__(self, "views",
                           tuple((int(v), float(a), float(b)) for v, a, b in self.views))

    def intervals_by_view(self) -> dict[int, list[tuple[float, float]]]:
        out: dict[int, list[tuple[float, float]]] = {}
        for v, a, b in self.views:
            out.setdefault(v, []).append((a, b))
        for v in out:
            out[v].sort()
        return out

    @property
    def viewpoint_ids(self) -> list[int]:
        return sorted({v for v, _, _ in self.views})


@dataclass
class LineCloud:
    viewpoints: list[Viewpoint]
    segments: list[ObservedSegment]
    units: str = "m"

    def viewpoint(self, vid: int) -> Viewpoint:
        return self._vp_index()[vid]

    def _vp_index(self) -> dict[int, Viewpoint]:
        return {v.id: v for v in self.viewpoints}

    def segment_map(self) -> dict[int, ObservedSegment]:
        return {s.id: s for s in self.segments}

    def endpoints(self) -> np.ndarray:
        if not self.segments:
            return np.zeros((0, 3))
        return np.array([p for s in self.segments for p in (s.geometry.p0, s.geometry.p1)])

    def bounding_box(self, inflate: float = 0.05) -> tuple[np.ndarray, np.ndarray]:
        """Axis-aligned box of endpoints and viewpoints, inflated per side by a
        fraction of its extent along each axis."""
        pts = [self.endpoints()]
        if self.viewpoints:
            pts.append(np.array([v.position for v in self.viewpoints]))
        pts = np.vstack(pts)
        lo, hi = pts.min(axis=0), pts.max(axis=0)
        ext = np.maximum(hi - lo, 1e-3)
        return lo - inflate * ext, hi + inflate * ext

    def validate(self, require_segments: bool = False) -> None:
        problems = validation_problems(self, require_segments)
        if problems:
            raise ValidationError(problems)


def validation_problems(cloud: LineCloud, require_segments: bool = False) -> list[str]:
    problems = []
    vids = [v.id for v in cloud.viewpoints]
    known = set(vids)
    for dup in sorted({v for v in vids if vids.count(v) > 1}):
        problems.append(f"viewpoint id {dup} is not unique")
    sids = [s.id for s in cloud.segments]
    for dup in sorted({s for s in sids if sids.count(s) > 1}):
        problems.append(f"segment id {dup} is not unique")
    if require_segments and not cloud.segments:
        problems.append("line cloud has no segments")
    for s in cloud.segments:
        if not s.views:
            problems.append(f"segment {s.id}: no views")
        for vid, ivs in s.intervals_by_view().items():
            if vid not in known:
                problems.append(f"segment {s.id}: references missing viewpoint {vid}")
            for a, b in ivs:
                if not (0.0 <= a <= 1.0 and 0.0 <= b <= 1.0):
                    problems.append(f"segment {s.id}, view {vid}: interval [{a}, {b}] outside [0, 1]")
                if b - a <= MIN_INTERVAL:
                    problems.append(f"segment {s.id}, view {vid}: empty or reversed interval [{a}, {b}]")
            for (a0, b0), (a1, b1) in zip(ivs, ivs[1:]):
                if a1 < b0:
                    problems.append(f"segment {s.id}, view {vid}: overlapping intervals "
                                    f"[{a0}, {b0}] and [{a1}, {b1}]")
    return problems


# ---------------------------------------------------------------- text format

def _num(x: float) -> float:
    return float(f"{float(x):.9g}")


def _vec(p) -> list[float]:
    return [_num(c) for c in p]


def dumps_line_cloud(cloud: LineCloud) -> str:
    lines = ["{", f'"format": "{FORMAT}",', f'"units": {json.dumps(cloud.units)},',
             '"viewpoints": [']
    vps = [json.dumps({"id": v.id, "position": _vec(v.position)}) for v in cloud.viewpoints]
    lines.append(",\n".join(vps))
    lines.append("],")
    lines.append('"segments": [')
    segs = []
    for s in cloud.segments:
        views = [{"viewpoint": vid, "intervals": [[_num(a), _num(b)] for a, b in ivs]}
                 for vid, ivs in sorted(s.intervals_by_view().items())]
        segs.append(json.dumps({"id": s.id, "p0": _vec(s.geometry.p0),
                                "p1": _vec(s.geometry.p1), "views": views}))
    lines.append(",\n".join(segs))
    lines.append("]")
    lines.append("}")
    return "\n".join(line for line in lines if line) + "\n"


def _field(obj: dict, key: str, where: str):
    if not isinstance(obj, dict) or key not in obj:
        raise ParseError(f"{where}: missing field {key!r}")
    return obj[key]


def _point(obj, key, where) -> np.ndarray:
    v = _field(obj, key, where)
    if not (isinstance(v, list) and len(v) == 3 and all(isinstance(c, (int, float)) for c in v)):
        raise ParseError(f"{where}.{key}: expected 3 numbers, got {v!r}")
    return np.array(v, dtype=float)


def loads_line_cloud(text: str, validate: bool = True) -> LineCloud:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as e:
        raise ParseError(f"line {e.lineno}, column {e.colno}: {e.msg}") from None
    if not isinstance(doc, dict):
        raise ParseError("top level must be an object")
    fmt = _field(doc, "format", "document")
    if fmt != FORMAT:
        raise ParseError(f"document.format: expected {FORMAT!r}, got {fmt!r}")
    vps = []
    for i, v in enumerate(_field(doc, "viewpoints", "document")):
        where = f"viewpoints[{i}]"
        vid = _field(v, "id", where)
        if not isinstance(vid, int):
            raise ParseError(f"{where}.id: expected integer")
        vps.append(Viewpoint(vid, _point(v, "position", where)))
    segs = []
    problems = []
    for i, s in enumerate(_field(doc, "segments", "document")):
        where = f"segments[{i}]"
        sid = _field(s, "id", where)
        if not isinstance(sid, int):
            raise ParseError(f"{where}.id: expected integer")
        p0, p1 = _point(s, "p0", where), _point(s, "p1", where)
        views = []
        for j, view in enumerate(_field(s, "views", where)):
            vw = f"{where}.views[{j}]"
            vid = _field(view, "viewpoint", vw)
            for k, iv in enumerate(_field(view, "intervals", vw)):
                if not (isinstance(iv, list) and len(iv) == 2):
                    raise ParseError(f"{vw}.intervals[{k}]: expected [t0, t1]")
                views.append((vid, float(iv[0]), float(iv[1])))
        try:
            geom = Segment3(p0, p1)
        except ValueError as e:
            problems.append(f"segment {sid}: {e}")
            continue
        segs.append(ObservedSegment(sid, geom, tuple(views)))
    cloud = LineCloud(vps, segs, units=doc.get("units", "m"))
    if validate:
        problems += validation_problems(cloud)
        if problems:
            raise ValidationError(problems)
    return cloud


def save_line_cloud(cloud: LineCloud, path) -> None:
    Path(path).write_text(dumps_line_cloud(cloud))


def load_line_cloud(path, validate: bool = True) -> LineCloud:
    return loads_line_cloud(Path(path).read_text(), validate=validate)


# ---------------------------------------------------------------- synthetic cube

def cube_edges(half: float = 1.0) -> list[tuple[np.ndarray, np.ndarray]]:
    """The 12 edges of ``[-half, half]^3`` in a fixed order."""
    edges = []
    for axis in range(3):
        a, b = [i for i in range(3) if i != axis]
        for sa, sb in itertools.product((-1.0, 1.0), repeat=2):
            p0 = np.zeros(3)
            p0[a], p0[b], p0[axis] = sa * half, sb * half, -half
            p1 = p0.copy()
            p1[axis] = half
            edges.append((p0, p1))
    return edges


def cube_face_edges() -> dict[tuple[int, int], tuple[int, ...]]:
    """Map face ``(axis, sign)`` to the indices of the 4 cube edges bounding it."""
    out = {}
    edges = cube_edges()
    for axis in range(3):
        for sign in (-1, 1):
            ids = tuple(i for i, (p0, p1) in enumerate(edges)
                        if p0[axis] == sign and p1[axis] == sign)
            out[(axis, sign)] = ids
    return out


def sphere_viewpoints(radius: float = 6.0) -> list[Viewpoint]:
    """26 viewpoints: the non-zero directions of {-1, 0, 1}^3 scaled to ``radius``."""
    vps = []
    for d in itertools.product((-1, 0, 1), repeat=3):
        if d == (0, 0, 0):
            continue
        u = np.array(d, dtype=float)
        vps.append(Viewpoint(len(vps), radius * u / np.linalg.norm(u)))
    return vps


def _uniform_noise(rng: np.random.Generator, std: float, shape) -> np.ndarray:
    # uniform on [-a, a] has standard deviation a / sqrt(3)
    a = std * math.sqrt(3.0)
    return rng.uniform(-a, a, size=shape) if std > 0 else np.zeros(shape)


def _ball_points(rng: np.random.Generator, n: int, radius: float) -> np.ndarray:
    d = rng.normal(size=(n, 3))
    d /= np.linalg.norm(d, axis=1, keepdims=True)
    r = radius * rng.uniform(size=n) ** (1.0 / 3.0)
    return d * r[:, None]


def synth_cube(noise_std: float = 0.0, n_outliers: int = 0, seed: int = 0,
               view_radius: float = 6.0) -> LineCloud:
    """Edges of the cube ``[-1, 1]^3`` with endpoint noise and random outliers.

    Segment ids 0..11 are the cube edges (order of :func:`cube_edges`); outliers
    follow. Every segment is fully visible from the viewpoints in the half-space
    ``v . midpoint > 0``.
    """
    if noise_std < 0 or n_outliers < 0:
        raise ValueError("noise_std and n_outliers must be non-negative")
    rng = np.random.default_rng(seed)
    vps = sphere_viewpoints(view_radius)
    raw = []
    for p0, p1 in cube_edges():
        noise = _uniform_noise(rng, noise_std, (2, 3))
        raw.append((p0 + noise[0], p1 + noise[1]))
    pts = _ball_points(rng, 2 * n_outliers, 2.0)
    for i in range(n_outliers):
        raw.append((pts[2 * i], pts[2 * i + 1]))
    segs = []
    for sid, (p0, p1) in enumerate(raw):
        mid = 0.5 * (p0 + p1)
        views = [(v.id, 0.0, 1.0) for v in vps if float(v.position @ mid) > 0]
        if not views:  # outlier through the centre: keep it observable
            views = [(v.id, 0.0, 1.0) for v in vps]
        segs.append(ObservedSegment(sid, Segment3(p0, p1), tuple(views)))
    return LineCloud(vps, segs)


# ---------------------------------------------------------------- synthetic room

@dataclass(frozen=True)
class RoomSpec:
    """Axis-aligned room ``[0, W] x [0, D] x [0, H]`` with optional box furniture.

    ``boxes`` are ``((x0, y0, z0), (x1, y1, z1))``; a box either rests on the
    floor (``z0 == 0``) or floats. Outliers are short random segments in free
    space; ``outlier_fraction`` is relative to the number of true segments.
    """

    size: tuple[float, float, float] = (4.0, 5.0, 2.5)
    boxes: tuple = ()
    n_viewpoints: int = 8
    noise_std: float = 0.0
    outlier_fraction: float = 0.0
    n_outliers: int | None = None
    textural_per_wall: int = 0
    textural_per_box_face: int = 0
    seed: int = 0
    min_gap: float = 0.05


FURNISHED_BOXES = (
    ((1.0, 1.1, 0.0), (2.0, 1.7, 0.9)),
    ((2.2, 3.0, 0.0), (3.0, 3.7, 0.75)),
)


def furnished_room(noise_std: float = 0.01, outlier_fraction: float = 0.1,
                   seed: int = 0, **kw) -> RoomSpec:
    kw.setdefault("textural_per_wall", 16)
    kw.setdefault("textural_per_box_face", 3)
    kw.setdefault("n_viewpoints", 12)
    return RoomSpec(boxes=FURNISHED_BOXES, noise_std=noise_std,
                    outlier_fraction=outlier_fraction, seed=seed, **kw)


def _box_edges(lo, hi) -> list[tuple[np.ndarray, np.ndarray]]:
    lo, hi = np.asarray(lo, float), np.asarray(hi, float)
    c = 0.5 * (lo + hi)
    h = 0.5 * (hi - lo)
    return [(c + h * p0, c + h * p1) for p0, p1 in cube_edges()]


def _textured_faces(spec: RoomSpec):
    """(on room, axis, coordinate, in-plane lo, in-plane hi): room faces then box faces."""
    out = []
    full = (np.zeros(3), np.asarray(spec.size, float))
    for k, (lo, hi) in enumerate([full] + [tuple(np.asarray(b, float) for b in bx)
                                            for bx in spec.boxes]):
        for axis in range(3):
            others = [a for a in range(3) if a != axis]
            for coord in (lo[axis], hi[axis]):
                if k > 0 and axis == 2 and coord == 0.0:
                    continue  # box bottom resting on the floor
                out.append((k == 0, axis, float(coord), lo[others], hi[others]))
    return out


def _face_line(rng: np.random.Generator, axis: int, coord: float, lo2, hi2) -> tuple:
    """Random in-plane axis-aligned line, inset from the face border."""
    others = [a for a in range(3) if a != axis]
    ext = hi2 - lo2
    inset = np.minimum(0.2, 0.15 * ext)
    along = int(rng.uniform() < 0.5)
    across = 1 - along
    c = rng.uniform(lo2[across] + inset[across], hi2[across] - inset[across])
    a, b = sorted(rng.uniform(lo2[along] + inset[along], hi2[along] - inset[along], size=2))
    short = min(0.3, 0.5 * (ext[along] - 2 * inset[along]))
    if b - a < short:
        b = min(hi2[along] - inset[along], a + short)
        a = b - short
    p0, p1 = np.zeros(3), np.zeros(3)
    p0[axis] = p1[axis] = coord
    p0[others[across]] = p1[others[across]] = c
    p0[others[along]], p1[others[along]] = a, b
    return p0, p1


def _check_room(spec: RoomSpec) -> None:
    w, d, h = spec.size
    if min(w, d, h) <= 0:
        raise SpecError("room dimensions must be positive")
    g = spec.min_gap
    for i, (lo, hi) in enumerate(spec.boxes):
        lo, hi = np.asarray(lo, float), np.asarray(hi, float)
        if np.any(hi - lo <= 0):
            raise SpecError(f"box {i}: empty extent")
        if lo[0] < g or lo[1] < g or hi[0] > w - g or hi[1] > d - g:
            raise SpecError(f"box {i}: must stay at least {g} m from the walls")
        if lo[2] < 0 or (0 < lo[2] < g) or hi[2] > h - g:
            raise SpecError(f"box {i}: must rest on the floor or float {g} m clear "
                            "of floor and ceiling")
    for i, j in itertools.combinations(range(len(spec.boxes)), 2):
        (lo1, hi1), (lo2, hi2) = spec.boxes[i], spec.boxes[j]
        sep = max(max(lo2[k] - hi1[k], lo1[k] - hi2[k]) for k in range(3))
        if sep < g:
            raise SpecError(f"boxes {i} and {j} touch or overlap (non-manifold)")


def _room_viewpoints(spec: RoomSpec) -> list[Viewpoint]:
    w, d, h = spec.size
    n = spec.n_viewpoints
    vps = []
    for k in range(n):
        ang = 2 * math.pi * (k + 0.5) / n
        for shrink in (0.38, 0.3, 0.2, 0.1, 0.0):
            p = np.array([w / 2 + shrink * w * math.cos(ang),
                          d / 2 + shrink * d * math.sin(ang),
                          h * (0.5 if k % 2 == 0 else 0.7)])
            if not any(_inside_box(p, lo, hi, 0.05) for lo, hi in spec.boxes):
                break
        else:
            raise SpecError(f"viewpoint {k} falls inside furniture")
        vps.append(Viewpoint(k, p))
    return vps


def _inside_box(p, lo, hi, margin=0.0) -> bool:
    return bool(np.all(p > np.asarray(lo) - margin) and np.all(p < np.asarray(hi) + margin))


def _ray_hits_box(origin: np.ndarray, target: np.ndarray, lo, hi, shrink=1e-7) -> bool:
    """Does the open segment origin->target pass through the box interior?"""
    lo = np.asarray(lo, float) + shrink
    hi = np.asarray(hi, float) - shrink
    d = target - origin
    t0, t1 = 0.0, 1.0
    for k in range(3):
        if abs(d[k]) < 1e-15:
            if origin[k] <= lo[k] or origin[k] >= hi[k]:
                return False
            continue
        a, b = (lo[k] - origin[k]) / d[k], (hi[k] - origin[k]) / d[k]
        if a > b:
            a, b = b, a
        t0, t1 = max(t0, a), min(t1, b)
        if t0 >= t1:
            return False
    return True


def _visible_intervals(v: np.ndarray, p0: np.ndarray, p1: np.ndarray, boxes,
                       n_samples: int = 129) -> list[tuple[float, float]]:
    def visible(t):
        q = p0 + t * (p1 - p0)
        return not any(_ray_hits_box(v, q, lo, hi) for lo, hi in boxes)

    ts = np.linspace(0.0, 1.0, n_samples)
    flags = [visible(t) for t in ts]

    def refine(a, b):  # boundary between visible(a) != visible(b)
        fa = visible(a)
        for _ in range(40):
            m = 0.5 * (a + b)
            if visible(m) == fa:
                a = m
            else:
                b = m
        return 0.5 * (a + b)

    out = []
    start = 0.0 if flags[0] else None
    for i in range(1, n_samples):
        if flags[i] != flags[i - 1]:
            t = refine(ts[i - 1], ts[i])
            if flags[i]:
                start = t
            else:
                out.append((start, t))
                start = None
    if start is not None:
        out.append((start, 1.0))
    return [(a, b) for a, b in out if b - a > 1e-6]


def room_ground_truth(size, boxes) -> PolygonMesh:
    """Boundary of the free space (room minus boxes), normals pointing into it.

    Built on the rectilinear grid of all room and box coordinates, so the
    quads are welded without T-junctions.
    """
    w, d, h = size
    axes = []
    for k, extent in enumerate((w, d, h)):
        vals = {0.0, float(extent)}
        for lo, hi in boxes:
            vals |= {float(lo[k]), float(hi[k])}
        axes.append(np.array(sorted(vals)))
    nx, ny, nz = (len(a) - 1 for a in axes)

    def free(i, j, k):
        if not (0 <= i < nx and 0 <= j < ny and 0 <= k < nz):
            return False
        c = np.array([(axes[0][i] + axes[0][i + 1]) / 2, (axes[1][j] + axes[1][j + 1]) / 2,
                      (axes[2][k] + axes[2][k + 1]) / 2])
        return not any(_inside_box(c, lo, hi) for lo, hi in boxes)

    verts: dict[tuple[int, int, int], int] = {}

    def vid(i, j, k):
        key = (i, j, k)
        if key not in verts:
            verts[key] = len(verts)
        return verts[key]

    faces = []
    for i, j, k in itertools.product(range(nx), range(ny), range(nz)):
        if not free(i, j, k):
            continue
        for axis in range(3):
            for step in (-1, 1):
                nb = [i, j, k]
                nb[axis] += step
                if free(*nb):
                    continue
                # quad on the wall between (i,j,k) and nb; normal must point into (i,j,k)
                a, b = [x for x in range(3) if x != axis]
                base = [i, j, k]
                base[axis] += 1 if step == 1 else 0
                corners = []
                for da, db in ((0, 0), (1, 0), (1, 1), (0, 1)):
                    c = list(base)
                    c[a] += da
                    c[b] += db
                    corners.append(vid(*c))
                # loop normal is e_a x e_b: +axis for x and z walls, -axis for y walls
                loop_sign = -1 if axis == 1 else 1
                if loop_sign != -step:
                    corners = corners[::-1]
                faces.append(tuple(corners))
    coords = np.zeros((len(verts), 3))
    for (i, j, k), idx in verts.items():
        coords[idx] = (axes[0][i], axes[1][j], axes[2][k])
    return PolygonMesh(coords, faces)


def synth_room(spec: RoomSpec) -> tuple[LineCloud, PolygonMesh]:
    """Line cloud of a furnished room and its ground-truth free-space boundary.

    Segments: the 12 room creases, 12 creases per box, then textural lines on
    the room faces and box faces, then outliers. Visibility accounts for occlusion by furniture;
    segments seen by no viewpoint are dropped.
    """
    _check_room(spec)
    rng = np.random.default_rng(spec.seed)
    w, d, h = spec.size
    vps = _room_viewpoints(spec)
    ideal = _box_edges((0, 0, 0), spec.size)
    for lo, hi in spec.boxes:
        ideal += _box_edges(lo, hi)
    # textural lines on room and box faces, kept clear of creases
    for on_room, axis, coord, lo2, hi2 in _textured_faces(spec):
        for _ in range(spec.textural_per_wall if on_room else spec.textural_per_box_face):
            ideal.append(_face_line(rng, axis, coord, lo2, hi2))
    n_true = len(ideal)
    n_out = spec.n_outliers if spec.n_outliers is not None else \
        int(round(spec.outlier_fraction * n_true))
    outliers = []
    while len(outliers) < n_out:
        c = rng.uniform((0.1, 0.1, 0.1), (w - 0.1, d - 0.1, h - 0.1))
        u = rng.normal(size=3)
        u /= np.linalg.norm(u)
        ln = rng.uniform(0.2, 1.0)
        p0, p1 = c - 0.5 * ln * u, c + 0.5 * ln * u
        inside_room = all(_inside_box(p, (0.05,) * 3, (w - 0.05, d - 0.05, h - 0.05))
                          for p in (p0, p1))
        clear = not any(_inside_box(p, lo, hi, 0.05) or _ray_hits_box(p0, p1, lo, hi)
                        for lo, hi in spec.boxes for p in (p0, p1))
        if inside_room and clear:
            outliers.append((p0, p1))
    segs = []
    for p0, p1 in ideal + outliers:
        views = []
        for v in vps:
            for a, b in _visible_intervals(v.position, p0, p1, spec.boxes):
                views.append((v.id, a, b))
        if not views:
            continue
        noise = _uniform_noise(rng, spec.noise_std, (2, 3))
        segs.append(ObservedSegment(len(segs), Segment3(p0 + noise[0], p1 + noise[1]),
                                    tuple(views)))
    return LineCloud(vps, segs), room_ground_truth(spec.size, spec.boxes)
