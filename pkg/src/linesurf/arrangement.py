"""Full-extent plane arrangement inside a bounding box.

Cells are built by incremental convex splitting. Since every plane spans the
whole box, a cell is uniquely identified by its sign vector with respect to
all arrangement planes; point location and neighbour queries go through that
sign vector instead of a search structure.

Box sides are encoded as negative plane keys ``-(1 + 2 * axis + side)`` with
``side`` 0 for the low and 1 for the high face.
"""

from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Sequence

import numpy as np
from scipy.spatial import cKDTree

from .geom import Plane, Segment3, dihedral_angle

SNAP_TOL = 1e-9
ON_SEGMENT_TOL = 1e-7
DUPLICATE_ANGLE_DEG = 0.1


class ArrangementError(ValueError):
    pass


class TooManyPlanes(ArrangementError):
    pass


class NearDuplicatePlanes(ArrangementError):
    def __init__(self, pairs):
        self.pairs = list(pairs)
        super().__init__(f"near-duplicate planes: {self.pairs}")


class OutsideBox(ArrangementError):
    pass


class OnBoundary(ArrangementError):
    pass


class GrazingViewpoint(ArrangementError):
    pass


def box_key(axis: int, side: int) -> int:
    return -(1 + 2 * axis + side)


def box_key_axis_side(key: int) -> tuple[int, int]:
    k = -key - 1
    return k // 2, k % 2


# ------------------------------------------------------------------ convex splitting

def _plane_basis(n: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    a = np.array([1.0, 0.0, 0.0]) if abs(n[0]) < 0.9 else np.array([0.0, 1.0, 0.0])
    e1 = np.cross(n, a)
    e1 /= np.linalg.norm(e1)
    return e1, np.cross(n, e1)


def _order_ccw(pts: np.ndarray, normal: np.ndarray) -> np.ndarray:
    e1, e2 = _plane_basis(normal)
    c = pts.mean(axis=0)
    ang = np.arctan2((pts - c) @ e2, (pts - c) @ e1)
    return pts[np.argsort(ang, kind="stable")]


def _dedupe(pts: list, tol: float) -> np.ndarray:
    out: list[np.ndarray] = []
    for p in pts:
        if all(np.linalg.norm(p - q) > tol for q in out):
            out.append(p)
    return np.array(out) if out else np.zeros((0, 3))


def _polygon_area_vec(pts: np.ndarray) -> np.ndarray:
    c = pts[0]
    acc = np.zeros(3)
    for i in range(1, len(pts) - 1):
        acc += np.cross(pts[i] - c, pts[i + 1] - c)
    return 0.5 * acc


def _clip(pts: np.ndarray, dist: np.ndarray, tol: float):
    """Split a convex polygon by a plane given its vertex distances.

    Returns (positive part, negative part, points on the plane)."""
    side = np.where(dist > tol, 1, np.where(dist < -tol, -1, 0))
    pos, neg, on = [], [], []
    m = len(pts)
    for i in range(m):
        j = (i + 1) % m
        p, si = pts[i], side[i]
        if si >= 0:
            pos.append(p)
        if si <= 0:
            neg.append(p)
        if si == 0:
            on.append(p)
        sj = side[j]
        if si * sj < 0:
            t = dist[i] / (dist[i] - dist[j])
            q = p + t * (pts[j] - p)
            pos.append(q)
            neg.append(q)
            on.append(q)
    return pos, neg, on


@dataclass
class _Poly:
    # (plane key, (m, 3) loop CCW around the outward normal)
    faces: list

    def points(self) -> np.ndarray:
        return np.vstack([f[1] for f in self.faces])


def _box_poly(lo: np.ndarray, hi: np.ndarray) -> _Poly:
    faces = []
    for axis in range(3):
        a, b = [k for k in range(3) if k != axis]
        for side in (0, 1):
            coord = (lo, hi)[side][axis]
            quad = []
            for ua, ub in ((0, 0), (1, 0), (1, 1), (0, 1)):
                p = np.zeros(3)
                p[axis] = coord
                p[a] = (lo, hi)[ua][a]
                p[b] = (lo, hi)[ub][b]
                quad.append(p)
            n = np.zeros(3)
            n[axis] = 1.0 if side else -1.0
            faces.append((box_key(axis, side), _order_ccw(np.array(quad), n)))
    return _Poly(faces)


def _split_poly(poly: _Poly, key: int, n: np.ndarray, d: float, tol: float):
    """Split a convex polyhedron; returns (pos, neg) where either may be None."""
    allpts = poly.points()
    dist = allpts @ n - d
    if dist.max() <= tol:
        return None, poly
    if dist.min() >= -tol:
        return poly, None
    pos_faces, neg_faces, cut = [], [], []
    for fkey, pts in poly.faces:
        fd = pts @ n - d
        if np.all(np.abs(fd) <= tol):
            raise NearDuplicatePlanes([(key, fkey)])
        pos, neg, on = _clip(pts, fd, tol)
        cut.extend(on)
        for part, dest in ((pos, pos_faces), (neg, neg_faces)):
            part = _dedupe(part, 10 * tol)
            if len(part) >= 3 and np.linalg.norm(_polygon_area_vec(part)) > tol * tol:
                dest.append((fkey, part))
    cap = _dedupe(cut, 10 * tol)
    if len(cap) < 3:
        # plane only touches the cell
        return (poly, None) if dist.max() > -dist.min() else (None, poly)
    pos_faces.append((key, _order_ccw(cap, -n)))
    neg_faces.append((key, _order_ccw(cap, n)))
    return _Poly(pos_faces), _Poly(neg_faces)


# ------------------------------------------------------------------ complex

@dataclass
class Cell:
    id: int
    sign: tuple
    centroid: np.ndarray
    volume: float
    faces: list = field(default_factory=list)


@dataclass
class Face:
    """Polygon on an arrangement plane (``plane >= 0``) or a box side.

    ``cells = (below, above)`` w.r.t. the carrier normal for interior faces,
    ``(cell, -1)`` for box faces. ``loop`` is CCW around the carrier normal
    (outward normal for box faces).
    """

    id: int
    plane: int
    cells: tuple
    loop: tuple
    area: float

    @property
    def interior(self) -> bool:
        return self.plane >= 0


@dataclass
class Edge:
    id: int
    vertices: tuple
    ring: tuple  # cyclic cell order for interior edges, unordered otherwise
    faces: tuple
    length: float
    interior: bool
    planes: tuple


@dataclass(frozen=True)
class Fragment:
    segment_id: int
    t0: float
    t1: float
    kind: str  # "face" | "edge" | "cell"
    carrier: int
    planes: tuple

    @property
    def span(self) -> float:
        return self.t1 - self.t0


class CellComplex:
    """Bounded plane arrangement with full adjacency."""

    def __init__(self, planes: Sequence[Plane], lo, hi, tol: float = SNAP_TOL):
        self.planes = list(planes)
        self.lo = np.asarray(lo, dtype=float)
        self.hi = np.asarray(hi, dtype=float)
        self.tol = tol
        self.normals = np.array([p.normal for p in self.planes]).reshape(-1, 3)
        self.offsets = np.array([p.offset for p in self.planes])
        self.cells: list[Cell] = []
        self.faces: list[Face] = []
        self.edges: list[Edge] = []
        self.vertices = np.zeros((0, 3))
        self.sign_to_cell: dict[tuple, int] = {}
        self.face_index: dict[tuple, int] = {}
        self.edge_by_ring: dict[frozenset, int] = {}
        self.vertex_edges: dict[int, list[int]] = {}

    # ---------------------------------------------------------------- queries
    @property
    def bbox(self) -> tuple[np.ndarray, np.ndarray]:
        return self.lo, self.hi

    @property
    def box_volume(self) -> float:
        return float(np.prod(self.hi - self.lo))

    @cached_property
    def interior_faces(self) -> list[int]:
        return [f.id for f in self.faces if f.interior]

    @cached_property
    def interior_edges(self) -> list[int]:
        return [e.id for e in self.edges if e.interior]

    @cached_property
    def interior_vertices(self) -> list[int]:
        on_box = np.any((np.abs(self.vertices - self.lo) <= 10 * self.tol)
                        | (np.abs(self.vertices - self.hi) <= 10 * self.tol), axis=1)
        return [int(i) for i in np.flatnonzero(~on_box)]

    def plane_distances(self, point) -> np.ndarray:
        return self.normals @ np.asarray(point, float) - self.offsets

    def inside_box(self, point, strict: bool = True) -> bool:
        p = np.asarray(point, float)
        if strict:
            return bool(np.all(p > self.lo) and np.all(p < self.hi))
        return bool(np.all(p >= self.lo - self.tol) and np.all(p <= self.hi + self.tol))

    def _signs(self, point, directions=(), tol=None) -> np.ndarray | None:
        """Sign vector at ``point`` with symbolic perturbation along ``directions``
        for planes through the point; ``None`` if still undecided."""
        tol = self.tol if tol is None else tol
        dist = self.plane_distances(point)
        s = np.sign(dist)
        s[np.abs(dist) <= tol] = 0
        for d in directions:
            if not np.any(s == 0):
                break
            nd = self.normals @ np.asarray(d, float)
            fill = (s == 0) & (np.abs(nd) > 1e-12)
            s[fill] = np.sign(nd[fill])
        if np.any(s == 0):
            return None
        return s.astype(int)

    def cell_of_signs(self, signs) -> int:
        key = tuple(int(x) for x in signs)
        try:
            return self.sign_to_cell[key]
        except KeyError:
            raise ArrangementError(f"no cell with sign vector {key}") from None

    def locate(self, point) -> int:
        """Cell strictly containing ``point``."""
        p = np.asarray(point, float)
        if not self.inside_box(p):
            raise OutsideBox(f"point {p.tolist()} outside the bounding box")
        s = self._signs(p)
        if s is None:
            raise OnBoundary(f"point {p.tolist()} lies on an arrangement plane")
        return self.cell_of_signs(s)

    def face_between(self, a: int, b: int) -> int | None:
        return self.face_index.get((min(a, b), max(a, b)))

    def cell_faces(self, cell: int) -> list[int]:
        return self.cells[cell].faces

    # ------------------------------------------------------------ fragments
    def split_segment(self, seg: Segment3, segment_id: int = -1,
                      on_tol: float = ON_SEGMENT_TOL) -> list[Fragment]:
        if not (self.inside_box(seg.p0, strict=False) and self.inside_box(seg.p1, strict=False)):
            raise OutsideBox(f"segment {segment_id} leaves the bounding box")
        d0 = self.plane_distances(seg.p0)
        d1 = self.plane_distances(seg.p1)
        on = np.flatnonzero((np.abs(d0) <= on_tol) & (np.abs(d1) <= on_tol))
        cross = (d0 * d1 < 0) & (np.abs(d0) > self.tol) & (np.abs(d1) > self.tol)
        cross[on] = False
        ts = sorted(set((d0[cross] / (d0[cross] - d1[cross])).tolist()))
        breaks = [0.0]
        for t in ts:
            if t - breaks[-1] > 1e-12 and 1.0 - t > 1e-12:
                breaks.append(t)
        breaks.append(1.0)
        u = seg.direction
        out = []
        for t0, t1 in zip(breaks, breaks[1:]):
            m = seg.point_at(0.5 * (t0 + t1))
            kind, carrier = self._classify(m, u, on)
            out.append(Fragment(segment_id, t0, t1, kind, carrier, tuple(int(i) for i in on)))
        return out

    def _classify(self, m, u, on) -> tuple[str, int]:
        e1, e2 = _plane_basis(u)
        base = self._signs(m, (u, e1, e2), tol=ON_SEGMENT_TOL)
        if base is None:
            raise ArrangementError("cannot classify fragment")
        if len(on) == 0:
            return "cell", self.cell_of_signs(base)
        if len(on) == 1:
            p = on[0]
            s = base.copy()
            s[p] = 1
            above = self.cell_of_signs(s)
            s[p] = -1
            below = self.cell_of_signs(s)
            f = self.face_between(above, below)
            if f is None:
                raise ArrangementError("fragment face not found")
            return "face", f
        ring = self._ring_at(m, u, on, base)
        eid = self.edge_by_ring.get(frozenset(ring))
        if eid is None:
            raise ArrangementError("fragment edge not found")
        return "edge", eid

    def _ring_at(self, m, u, on, base) -> list[int]:
        """Cells around the line through ``m`` along ``u`` (planes ``on`` contain it),
        in angular order."""
        e1, e2 = _plane_basis(u)
        bounds = []
        for p in on:
            n2 = np.array([self.normals[p] @ e1, self.normals[p] @ e2])
            a = math.atan2(n2[1], n2[0]) + 0.5 * math.pi
            bounds += [a % (2 * math.pi), (a + math.pi) % (2 * math.pi)]
        bounds = sorted(bounds)
        ring = []
        for i, a in enumerate(bounds):
            b = bounds[(i + 1) % len(bounds)] + (2 * math.pi if i == len(bounds) - 1 else 0.0)
            mid = 0.5 * (a + b)
            d = math.cos(mid) * e1 + math.sin(mid) * e2
            s = base.copy()
            for p in on:
                s[p] = 1 if self.normals[p] @ d > 0 else -1
            c = self.cell_of_signs(s)
            if not ring or ring[-1] != c:
                ring.append(c)
        if len(ring) > 1 and ring[0] == ring[-1]:
            ring.pop()
        return ring

    def fragment_cells(self, frag: Fragment, seg: Segment3) -> list[int]:
        """All cells adjacent to a fragment (1 for cell, 2 for face, ring for edge)."""
        if frag.kind == "cell":
            return [frag.carrier]
        if frag.kind == "face":
            return [c for c in self.faces[frag.carrier].cells if c >= 0]
        return list(self.edges[frag.carrier].ring)

    def behind_cells(self, frag: Fragment, seg: Segment3, viewpoint) -> tuple[int, ...]:
        """Cells immediately behind a fragment as seen from ``viewpoint``.

        Face carrier: the incident cell opposite the viewpoint. Edge carrier: the
        ring minus the wedge facing the viewpoint.
        """
        v = np.asarray(viewpoint, float)
        if frag.kind == "cell":
            raise ArrangementError("fragment lies inside a cell; no carrier plane")
        planes = list(frag.planes)
        dv = self.normals[planes] @ v - self.offsets[planes]
        if np.any(np.abs(dv) <= self.tol):
            raise GrazingViewpoint("viewpoint lies on a carrier plane of the fragment")
        if frag.kind == "face":
            f = self.faces[frag.carrier]
            below, above = f.cells
            return (below,) if dv[0] > 0 else (above,)
        m = seg.point_at(0.5 * (frag.t0 + frag.t1))
        u = seg.direction
        e1, e2 = _plane_basis(u)
        base = self._signs(m, (u, e1, e2), tol=ON_SEGMENT_TOL)
        s = base.copy()
        s[planes] = np.sign(dv).astype(int)
        front = self.cell_of_signs(s)
        ring = self.edges[frag.carrier].ring
        return tuple(c for c in ring if c != front)

    # ------------------------------------------------------------ visibility
    @cached_property
    def _face_tables(self):
        ids = np.array(self.interior_faces, dtype=int)
        plane = np.array([self.faces[i].plane for i in ids], dtype=int)
        lo = np.zeros((len(ids), 3))
        hi = np.zeros((len(ids), 3))
        m_rows, c_rows, owner = [], [], []
        for k, fid in enumerate(ids):
            f = self.faces[fid]
            pts = self.vertices[list(f.loop)]
            lo[k], hi[k] = pts.min(axis=0), pts.max(axis=0)
            n = self.normals[f.plane]
            for i in range(len(pts)):
                a, b = pts[i], pts[(i + 1) % len(pts)]
                m = np.cross(n, b - a)
                m_rows.append(m)
                c_rows.append(m @ a)
                owner.append(k)
        return (ids, plane, lo, hi, np.array(m_rows).reshape(-1, 3), np.array(c_rows),
                np.array(owner, dtype=int))

    def sight_crossings(self, viewpoint, seg: Segment3,
                        intervals: Sequence[tuple[float, float]] = ((0.0, 1.0),)) -> list[tuple[int, float]]:
        """Faces crossed by open sightlines from ``viewpoint`` to the visible part
        of ``seg``, with the covered length on ``seg`` (metres) per face."""
        v = np.asarray(viewpoint, float)
        a, b = seg.p0, seg.p1
        dv_all = self.plane_distances(v)
        da_all = self.plane_distances(a)
        db_all = self.plane_distances(b)
        on_seg = (np.abs(da_all) <= ON_SEGMENT_TOL) & (np.abs(db_all) <= ON_SEGMENT_TOL)
        if np.any(on_seg & (np.abs(dv_all) <= self.tol)):
            raise GrazingViewpoint("viewpoint is coplanar with a carrier plane of the segment")
        ids, plane, flo, fhi, M, C, owner = self._face_tables
        if len(ids) == 0:
            return []
        tri = np.vstack([v, a, b])
        tlo, thi = tri.min(axis=0) - self.tol, tri.max(axis=0) + self.tol
        dv, da, db = dv_all[plane], da_all[plane], db_all[plane]
        sgn = np.sign(dv)
        # crossing range in t: sign(da + t (db - da)) == -sign(dv)
        pa, pb = -sgn * da, -sgn * db  # want p(t) > 0
        keep = (np.abs(dv) > self.tol) & ~on_seg[plane] & ((pa > 0) | (pb > 0))
        keep &= np.all(flo <= thi, axis=1) & np.all(fhi >= tlo, axis=1)
        if not np.any(keep):
            return []
        lo_t = np.zeros(len(ids))
        hi_t = np.ones(len(ids))
        slope = pb - pa
        with np.errstate(divide="ignore", invalid="ignore"):
            root = np.where(slope != 0, -pa / slope, 0.0)
        lo_t = np.where(slope > 0, np.maximum(lo_t, root), lo_t)
        hi_t = np.where(slope < 0, np.minimum(hi_t, root), hi_t)
        # polygon-edge half-planes pulled back to the segment parameter
        kmask = keep[owner]
        rows = np.flatnonzero(kmask)
        o = owner[rows]
        gv = M[rows] @ v - C[rows]
        ga = M[rows] @ a - C[rows]
        gb = M[rows] @ b - C[rows]
        s_ = sgn[o]
        alpha = s_ * (-da[o] * gv + dv[o] * ga)
        beta = s_ * (-(db[o] - da[o]) * gv + dv[o] * (gb - ga))
        scale = np.abs(alpha) + np.abs(beta)
        tiny = np.abs(beta) <= 1e-14 * np.maximum(scale, 1e-300)
        with np.errstate(divide="ignore", invalid="ignore"):
            r = np.where(tiny, 0.0, -alpha / beta)
        lower = np.where(~tiny & (beta > 0), r, -np.inf)
        upper = np.where(~tiny & (beta < 0), r, np.inf)
        dead = tiny & (alpha < 0)
        lb = np.full(len(ids), -np.inf)
        ub = np.full(len(ids), np.inf)
        np.maximum.at(lb, o, lower)
        np.minimum.at(ub, o, upper)
        dead_face = np.zeros(len(ids), dtype=bool)
        np.logical_or.at(dead_face, o, dead)
        lo_t = np.maximum(lo_t, lb)
        hi_t = np.minimum(hi_t, ub)
        ok = keep & ~dead_face & (hi_t > lo_t)
        length = seg.length
        out = []
        for k in np.flatnonzero(ok):
            cov = 0.0
            for t0, t1 in intervals:
                cov += max(0.0, min(t1, hi_t[k]) - max(t0, lo_t[k]))
            if cov * length > 1e-12:
                out.append((int(ids[k]), cov * length))
        return out

    # ------------------------------------------------------------ export
    def to_dict(self) -> dict:
        return {
            "format": "complex/1",
            "bbox": [self.lo.tolist(), self.hi.tolist()],
            "planes": [{"normal": list(p.normal), "offset": p.offset} for p in self.planes],
            "vertices": self.vertices.tolist(),
            "cells": [{"id": c.id, "sign": list(c.sign), "volume": c.volume,
                       "faces": c.faces} for c in self.cells],
            "faces": [{"id": f.id, "plane": f.plane, "cells": list(f.cells),
                       "loop": list(f.loop), "area": f.area} for f in self.faces],
            "edges": [{"id": e.id, "vertices": list(e.vertices), "ring": list(e.ring),
                       "interior": e.interior, "length": e.length} for e in self.edges],
        }

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), indent=1)

    def summary(self) -> dict:
        return {"planes": len(self.planes), "cells": len(self.cells),
                "interior_faces": len(self.interior_faces), "faces": len(self.faces),
                "interior_edges": len(self.interior_edges), "edges": len(self.edges),
                "vertices": len(self.vertices)}


def check_planes(planes: Sequence[Plane], tol: float = SNAP_TOL,
                 max_planes: int | None = None) -> None:
    if max_planes is not None and len(planes) > max_planes:
        raise TooManyPlanes(f"{len(planes)} planes > limit {max_planes}")
    bad = []
    for i, j in itertools.combinations(range(len(planes)), 2):
        p, q = planes[i], planes[j]
        if dihedral_angle(p, q) <= DUPLICATE_ANGLE_DEG:
            sign = 1.0 if p.n @ q.n > 0 else -1.0
            if abs(p.offset - sign * q.offset) <= max(tol, 1e-7):
                bad.append((i, j))
    if bad:
        raise NearDuplicatePlanes(bad)


def build_complex(planes: Sequence[Plane], bbox, tol: float = SNAP_TOL,
                  max_planes: int | None = 160) -> CellComplex:
    """Incrementally split the box by each plane and build full adjacency."""
    lo, hi = (np.asarray(x, dtype=float) for x in bbox)
    if np.any(hi <= lo):
        raise ValueError("degenerate bounding box")
    check_planes(planes, tol, max_planes)
    cx = CellComplex(planes, lo, hi, tol)
    polys = [_box_poly(lo, hi)]
    for k, p in enumerate(cx.planes):
        n, d = p.n, p.offset
        nxt = []
        for poly in polys:
            pos, neg = _split_poly(poly, k, n, d, tol)
            nxt.extend(x for x in (pos, neg) if x is not None)
        polys = nxt
    _assemble(cx, polys)
    return cx


def _assemble(cx: CellComplex, polys: list[_Poly]) -> None:
    tol = cx.tol
    # weld vertices
    raw = [poly.points() for poly in polys]
    allpts = np.vstack(raw)
    tree = cKDTree(allpts)
    parent = np.arange(len(allpts))

    def find(i):
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    for i, j in sorted(tree.query_pairs(r=100 * tol)):
        ri, rj = find(i), find(j)
        if ri != rj:
            parent[max(ri, rj)] = min(ri, rj)
    roots = np.array([find(i) for i in range(len(allpts))])
    uniq, inverse = np.unique(roots, return_inverse=True)
    cx.vertices = allpts[uniq]
    # loops as vertex ids
    offset = 0
    cell_loops = []
    for poly in polys:
        loops = []
        for key, pts in poly.faces:
            ids = [int(inverse[offset + i]) for i in range(len(pts))]
            offset += len(pts)
            clean = [x for i, x in enumerate(ids) if x != ids[i - 1]]
            if len(clean) >= 3:
                loops.append((key, clean))
        cell_loops.append(loops)
    # cells and sign vectors
    for cid, loops in enumerate(cell_loops):
        vids = sorted({v for _, lp in loops for v in lp})
        centroid = cx.vertices[vids].mean(axis=0)
        vol = 0.0
        for _, lp in loops:
            p = cx.vertices[lp]
            for i in range(1, len(p) - 1):
                vol += float(np.dot(p[0] - centroid, np.cross(p[i] - centroid, p[i + 1] - centroid)))
        s = np.sign(cx.plane_distances(centroid)).astype(int)
        if np.any(s == 0):
            raise ArrangementError(f"cell {cid} centroid lies on a plane")
        key = tuple(int(x) for x in s)
        if key in cx.sign_to_cell:
            raise ArrangementError(f"duplicate sign vector for cells {cx.sign_to_cell[key]} and {cid}")
        cx.sign_to_cell[key] = cid
        cx.cells.append(Cell(cid, key, centroid, vol / 6.0))
    # faces
    for cid, loops in enumerate(cell_loops):
        cell = cx.cells[cid]
        for key, lp in loops:
            if key < 0:
                fid = len(cx.faces)
                area = float(np.linalg.norm(_polygon_area_vec(cx.vertices[lp])))
                cx.faces.append(Face(fid, key, (cid, -1), tuple(lp), area))
                cell.faces.append(fid)
                continue
            s = list(cell.sign)
            s[key] = -s[key]
            other = cx.sign_to_cell.get(tuple(s))
            if other is None:
                raise ArrangementError(f"cell {cid}: no neighbour across plane {key}")
            pair = (min(cid, other), max(cid, other))
            if pair in cx.face_index:
                fid = cx.face_index[pair]
                if set(cx.faces[fid].loop) != set(lp):
                    raise ArrangementError(f"face {fid}: inconsistent polygons from its two cells")
                cell.faces.append(fid)
                continue
            # cell loop is CCW around its outward normal; store CCW around +normal
            loop = lp if cell.sign[key] < 0 else lp[::-1]
            below, above = (cid, other) if cell.sign[key] < 0 else (other, cid)
            fid = len(cx.faces)
            area = float(np.linalg.norm(_polygon_area_vec(cx.vertices[loop])))
            cx.faces.append(Face(fid, key, (below, above), tuple(loop), area))
            cx.face_index[pair] = fid
            cell.faces.append(fid)
    # edges
    edge_faces: dict[tuple, list[int]] = {}
    for f in cx.faces:
        lp = f.loop
        for i in range(len(lp)):
            a, b = lp[i], lp[(i + 1) % len(lp)]
            edge_faces.setdefault((min(a, b), max(a, b)), []).append(f.id)
    for (a, b), fids in sorted(edge_faces.items()):
        cells = sorted({c for fid in fids for c in cx.faces[fid].cells if c >= 0})
        interior = all(cx.faces[fid].interior for fid in fids)
        planes = tuple(sorted({cx.faces[fid].plane for fid in fids if cx.faces[fid].plane >= 0}))
        pa, pb = cx.vertices[a], cx.vertices[b]
        ring = tuple(cells)
        if interior:
            u = (pb - pa) / np.linalg.norm(pb - pa)
            e1, e2 = _plane_basis(u)
            mid = 0.5 * (pa + pb)
            ang = [math.atan2((cx.cells[c].centroid - mid) @ e2, (cx.cells[c].centroid - mid) @ e1)
                   for c in cells]
            ring = tuple(c for _, c in sorted(zip(ang, cells)))
        eid = len(cx.edges)
        cx.edges.append(Edge(eid, (a, b), ring, tuple(sorted(fids)),
                             float(np.linalg.norm(pb - pa)), interior, planes))
        if interior:
            cx.edge_by_ring[frozenset(ring)] = eid
            cx.vertex_edges.setdefault(a, []).append(eid)
            cx.vertex_edges.setdefault(b, []).append(eid)


def lift_labeling(coarse: CellComplex, fine: CellComplex, labels) -> np.ndarray:
    """Labels on ``fine`` inherited from the ``coarse`` cell containing each fine cell."""
    labels = np.asarray(labels)
    out = np.zeros(len(fine.cells), dtype=labels.dtype)
    k = len(coarse.planes)
    for c in fine.cells:
        out[c.id] = labels[coarse.cell_of_signs(c.sign[:k])]
    return out
