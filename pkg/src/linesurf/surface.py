"""Boundary mesh between full and empty cells, plus mesh checks and I/O."""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import TYPE_CHECKING

import numpy as np

if TYPE_CHECKING:
    from .arrangement import CellComplex


class NonConvexFace(ValueError):
    pass


class MeshIOError(OSError):
    pass


@dataclass
class PolygonMesh:
    """Polygon soup with shared vertices.

    Faces are vertex-index loops, CCW around the outward normal (which points
    from full into empty space). ``provenance`` optionally records
    ``(full cell, empty cell, carrier plane key)`` per face.
    """

    vertices: np.ndarray
    faces: list
    provenance: list = field(default_factory=list)

    def __post_init__(self):
        self.vertices = np.asarray(self.vertices, dtype=float).reshape(-1, 3)
        self.faces = [tuple(int(i) for i in f) for f in self.faces]

    @property
    def n_faces(self) -> int:
        return len(self.faces)

    def face_normal_area(self, f) -> np.ndarray:
        p = self.vertices[list(f)]
        acc = np.zeros(3)
        for i in range(1, len(p) - 1):
            acc += np.cross(p[i] - p[0], p[i + 1] - p[0])
        return 0.5 * acc

    def face_areas(self) -> np.ndarray:
        return np.array([np.linalg.norm(self.face_normal_area(f)) for f in self.faces])

    @property
    def area(self) -> float:
        return float(self.face_areas().sum()) if self.faces else 0.0

    def signed_volume(self) -> float:
        vol = 0.0
        for f in self.faces:
            p = self.vertices[list(f)]
            for i in range(1, len(p) - 1):
                vol += float(np.dot(p[0], np.cross(p[i], p[i + 1])))
        return vol / 6.0


def extract_surface(cx: "CellComplex", labels, include_box_faces: bool = True) -> PolygonMesh:
    """Interface between full (1) and empty (0) cells, oriented full -> empty.

    Box faces of full cells are emitted (facing out of the box) unless
    ``include_box_faces`` is False.
    """
    x = np.asarray(labels).astype(int)
    if x.shape != (len(cx.cells),) or np.any((x != 0) & (x != 1)):
        raise ValueError("labeling must be binary with one entry per cell")
    loops, prov = [], []
    for f in cx.faces:
        if f.interior:
            below, above = f.cells
            if x[below] == x[above]:
                continue
            if x[below] == 1:
                loops.append(f.loop)
                prov.append((below, above, f.plane))
            else:
                loops.append(f.loop[::-1])
                prov.append((above, below, f.plane))
        elif include_box_faces and x[f.cells[0]] == 1:
            loops.append(f.loop)
            prov.append((f.cells[0], -1, f.plane))
    used = sorted({v for lp in loops for v in lp})
    remap = {v: i for i, v in enumerate(used)}
    verts = cx.vertices[used] if used else np.zeros((0, 3))
    return PolygonMesh(verts, [tuple(remap[v] for v in lp) for lp in loops], prov)


def triangulate(mesh: PolygonMesh) -> PolygonMesh:
    """Fan-triangulate convex faces, keeping orientation."""
    tris, prov = [], []
    for k, f in enumerate(mesh.faces):
        if len(f) < 3:
            raise NonConvexFace(f"face {k} has fewer than 3 vertices")
        if len(f) > 3:
            n = mesh.face_normal_area(f)
            p = mesh.vertices[list(f)]
            nn = np.linalg.norm(n)
            for i in range(len(p)):
                c = np.cross(p[(i + 1) % len(p)] - p[i], p[(i + 2) % len(p)] - p[(i + 1) % len(p)])
                if c @ n < -1e-12 * max(nn, 1e-300):
                    raise NonConvexFace(f"face {k} is not convex")
        for i in range(1, len(f) - 1):
            tris.append((f[0], f[i], f[i + 1]))
            if mesh.provenance:
                prov.append(mesh.provenance[k])
    return PolygonMesh(mesh.vertices.copy(), tris, prov)


# ------------------------------------------------------------------ validation

def _edge_counts(mesh: PolygonMesh) -> dict:
    counts: dict[tuple, int] = {}
    for f in mesh.faces:
        for i in range(len(f)):
            a, b = f[i], f[(i + 1) % len(f)]
            key = (min(a, b), max(a, b))
            counts[key] = counts.get(key, 0) + 1
    return counts


def _components(mesh: PolygonMesh) -> int:
    parent = list(range(len(mesh.faces)))

    def find(i):
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    owner: dict[tuple, int] = {}
    for k, f in enumerate(mesh.faces):
        for i in range(len(f)):
            a, b = f[i], f[(i + 1) % len(f)]
            key = (min(a, b), max(a, b))
            if key in owner:
                ra, rb = find(owner[key]), find(k)
                if ra != rb:
                    parent[ra] = rb
            else:
                owner[key] = k
    return len({find(k) for k in range(len(mesh.faces))})


def _seg_tri(p, q, a, b, c, tol) -> bool:
    n = np.cross(b - a, c - a)
    nn = np.linalg.norm(n)
    if nn < 1e-300:
        return False
    n = n / nn
    dp, dq = (p - a) @ n, (q - a) @ n
    if (dp > tol and dq > tol) or (dp < -tol and dq < -tol):
        return False
    if abs(dp) <= tol and abs(dq) <= tol:
        return _coplanar_seg_tri(p, q, a, b, c, n, tol)
    t = dp / (dp - dq) if dp != dq else 0.0
    x = p + min(max(t, 0.0), 1.0) * (q - p)
    return _point_in_tri(x, a, b, c, n, tol)


def _point_in_tri(x, a, b, c, n, tol) -> bool:
    for u, v in ((a, b), (b, c), (c, a)):
        e = v - u
        if np.cross(e, x - u) @ n < -tol * np.linalg.norm(e):
            return False
    return True


def _coplanar_seg_tri(p, q, a, b, c, n, tol) -> bool:
    if _point_in_tri(p, a, b, c, n, tol) or _point_in_tri(q, a, b, c, n, tol):
        return True
    for u, v in ((a, b), (b, c), (c, a)):
        if _segments_cross_2d(p, q, u, v, n, tol):
            return True
    return False


def _segments_cross_2d(p, q, u, v, n, tol) -> bool:
    def orient(a, b, c):
        return np.cross(b - a, c - a) @ n

    o1, o2 = orient(p, q, u), orient(p, q, v)
    o3, o4 = orient(u, v, p), orient(u, v, q)
    s = tol * max(np.linalg.norm(q - p), np.linalg.norm(v - u), 1.0)
    return (o1 * o2 <= s * s) and (o3 * o4 <= s * s) and _overlap_box(p, q, u, v, tol)


def _overlap_box(p, q, u, v, tol) -> bool:
    lo1, hi1 = np.minimum(p, q), np.maximum(p, q)
    lo2, hi2 = np.minimum(u, v), np.maximum(u, v)
    return bool(np.all(lo1 <= hi2 + tol) and np.all(lo2 <= hi1 + tol))


def triangles_intersect(t1: np.ndarray, t2: np.ndarray, tol: float = 1e-9) -> bool:
    """True if two triangles share any point (touching counts)."""
    for i in range(3):
        if _seg_tri(t1[i], t1[(i + 1) % 3], *t2, tol):
            return True
        if _seg_tri(t2[i], t2[(i + 1) % 3], *t1, tol):
            return True
    return False


def count_self_intersections(mesh: PolygonMesh, tol: float = 1e-9) -> int:
    """Intersecting pairs among triangles that share no vertex."""
    tm = triangulate(mesh) if any(len(f) != 3 for f in mesh.faces) else mesh
    if not tm.faces:
        return 0
    tri = np.array(tm.faces)
    pts = tm.vertices[tri]
    lo, hi = pts.min(axis=1) - tol, pts.max(axis=1) + tol
    count = 0
    n = len(tri)
    for i in range(n - 1):
        j = np.arange(i + 1, n)
        ov = np.all(lo[j] <= hi[i], axis=1) & np.all(hi[j] >= lo[i], axis=1)
        shared = (tri[j][:, :, None] == tri[i][None, None, :]).any(axis=(1, 2))
        for k in j[ov & ~shared]:
            if triangles_intersect(pts[i], pts[k], tol):
                count += 1
    return count


def validate(mesh: PolygonMesh, tol: float = 1e-9) -> dict:
    counts = _edge_counts(mesh)
    return {
        "faces": mesh.n_faces,
        "vertices": int(len(mesh.vertices)),
        "boundary_edges": sum(1 for c in counts.values() if c == 1),
        "non_manifold_edges": sum(1 for c in counts.values() if c > 2),
        "components": _components(mesh) if mesh.faces else 0,
        "area": mesh.area,
        "self_intersections": count_self_intersections(mesh, tol),
    }


# ------------------------------------------------------------------ I/O

def _fmt(x: float) -> str:
    return repr(float(x))


def export_mesh(mesh: PolygonMesh, path, fmt: str | None = None) -> None:
    """Write ``.obj`` or ASCII ``.ply`` (chosen by extension unless ``fmt`` given)."""
    path = Path(path)
    fmt = (fmt or path.suffix.lstrip(".")).lower()
    lines = []
    if fmt == "obj":
        lines.append("# linesurf mesh")
        lines += [f"v {_fmt(x)} {_fmt(y)} {_fmt(z)}" for x, y, z in mesh.vertices]
        lines += ["f " + " ".join(str(i + 1) for i in f) for f in mesh.faces]
    elif fmt == "ply":
        lines += ["ply", "format ascii 1.0", f"element vertex {len(mesh.vertices)}",
                  "property double x", "property double y", "property double z",
                  f"element face {len(mesh.faces)}", "property list uchar int vertex_indices",
                  "end_header"]
        lines += [f"{_fmt(x)} {_fmt(y)} {_fmt(z)}" for x, y, z in mesh.vertices]
        lines += [f"{len(f)} " + " ".join(str(i) for i in f) for f in mesh.faces]
    else:
        raise MeshIOError(f"unsupported mesh format {fmt!r}")
    try:
        path.write_text("\n".join(lines) + "\n")
    except OSError as e:
        raise MeshIOError(str(e)) from e


def import_mesh(path, fmt: str | None = None) -> PolygonMesh:
    path = Path(path)
    fmt = (fmt or path.suffix.lstrip(".")).lower()
    try:
        text = path.read_text().splitlines()
    except OSError as e:
        raise MeshIOError(str(e)) from e
    verts, faces = [], []
    if fmt == "obj":
        for line in text:
            parts = line.split()
            if not parts:
                continue
            if parts[0] == "v":
                verts.append([float(c) for c in parts[1:4]])
            elif parts[0] == "f":
                faces.append(tuple(int(tok.split("/")[0]) - 1 for tok in parts[1:]))
    elif fmt == "ply":
        if not text or text[0].strip() != "ply":
            raise MeshIOError("not a PLY file")
        nv = nf = 0
        i = 0
        while text[i].strip() != "end_header":
            parts = text[i].split()
            if parts[:2] == ["element", "vertex"]:
                nv = int(parts[2])
            elif parts[:2] == ["element", "face"]:
                nf = int(parts[2])
            elif parts[:2] == ["format", "binary_little_endian"]:
                raise MeshIOError("binary PLY not supported")
            i += 1
        body = text[i + 1:]
        verts = [[float(c) for c in body[k].split()[:3]] for k in range(nv)]
        for k in range(nf):
            parts = body[nv + k].split()
            faces.append(tuple(int(c) for c in parts[1:1 + int(parts[0])]))
    else:
        raise MeshIOError(f"unsupported mesh format {fmt!r}")
    return PolygonMesh(np.array(verts).reshape(-1, 3), faces)
