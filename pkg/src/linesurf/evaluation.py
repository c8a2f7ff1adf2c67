"""Precision / completeness measurement and the cube robustness grid."""

from __future__ import annotations

import io
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.spatial import cKDTree

from .lineio import cube_face_edges, synth_cube
from .ransac import DetectParams, detect_planes
from .surface import PolygonMesh, triangulate

DEFAULT_THRESHOLDS = (0.01, 0.02, 0.05, 0.08, 0.1, 0.2)
PERCENTILES = (50, 75, 90, 95, 99, 100)


class EmptyMesh(ValueError):
    pass


def _triangles(mesh: PolygonMesh) -> np.ndarray:
    tm = triangulate(mesh) if any(len(f) != 3 for f in mesh.faces) else mesh
    if not tm.faces:
        raise EmptyMesh("mesh has no faces")
    return tm.vertices[np.array(tm.faces)]


def sample_surface(mesh: PolygonMesh, n: int, seed: int = 0) -> np.ndarray:
    """``n`` points uniformly distributed over the mesh area."""
    if n < 1:
        raise ValueError("n must be >= 1")
    tri = _triangles(mesh)
    area = 0.5 * np.linalg.norm(np.cross(tri[:, 1] - tri[:, 0], tri[:, 2] - tri[:, 0]), axis=1)
    if area.sum() <= 0:
        raise EmptyMesh("mesh has zero area")
    rng = np.random.default_rng(seed)
    k = rng.choice(len(tri), size=n, p=area / area.sum())
    u, v = rng.uniform(size=n), rng.uniform(size=n)
    flip = u + v > 1
    u[flip], v[flip] = 1 - u[flip], 1 - v[flip]
    t = tri[k]
    return t[:, 0] + u[:, None] * (t[:, 1] - t[:, 0]) + v[:, None] * (t[:, 2] - t[:, 0])


@dataclass
class DistanceSummary:
    count: int
    percentiles: dict
    within: dict
    bin_edges: np.ndarray
    bin_counts: np.ndarray

    @classmethod
    def of(cls, d: np.ndarray, thresholds: Sequence[float] = DEFAULT_THRESHOLDS,
           bins: int = 20, max_distance: float | None = None) -> "DistanceSummary":
        d = np.asarray(d, dtype=float)
        th = sorted(thresholds)
        top = max_distance if max_distance is not None else max(th[-1], float(d.max(initial=0.0)))
        edges = np.linspace(0.0, top if top > 0 else 1.0, bins + 1)
        counts, _ = np.histogram(np.clip(d, 0.0, edges[-1]), bins=edges)
        return cls(
            count=len(d),
            percentiles={p: float(np.percentile(d, p)) for p in PERCENTILES} if len(d) else {},
            within={t: float(np.mean(d <= t)) if len(d) else 0.0 for t in th},
            bin_edges=edges, bin_counts=counts)

    def fraction_within(self, t: float) -> float:
        return self.within[t]

    def to_dict(self) -> dict:
        return {"count": self.count,
                "percentiles": {str(k): v for k, v in self.percentiles.items()},
                "within": {repr(k): v for k, v in self.within.items()},
                "histogram": {"edges": self.bin_edges.tolist(), "counts": self.bin_counts.tolist()}}


def nn_distance(src: np.ndarray, dst: np.ndarray,
                thresholds: Sequence[float] = DEFAULT_THRESHOLDS) -> tuple[np.ndarray, DistanceSummary]:
    """Distance from every point of ``src`` to its nearest point of ``dst``."""
    src, dst = np.asarray(src, float).reshape(-1, 3), np.asarray(dst, float).reshape(-1, 3)
    if len(src) == 0 or len(dst) == 0:
        raise ValueError("point sets must be non-empty")
    d, _ = cKDTree(dst).query(src, k=1)
    return d, DistanceSummary.of(d, thresholds)


def _closest_on_triangles(p: np.ndarray, a, b, c) -> np.ndarray:
    """Squared distance from points ``p`` (n, 3) to triangles (m, 3) -> (n, m)."""
    p = p[:, None, :]
    ab, ac, ap = b - a, c - a, p - a
    d1, d2 = (ab * ap).sum(-1), (ac * ap).sum(-1)
    bp = p - b
    d3, d4 = (ab * bp).sum(-1), (ac * bp).sum(-1)
    cp = p - c
    d5, d6 = (ab * cp).sum(-1), (ac * cp).sum(-1)
    va = d3 * d6 - d5 * d4
    vb = d5 * d2 - d1 * d6
    vc = d1 * d4 - d3 * d2
    shape = d1.shape
    q = np.empty(shape + (3,))
    done = np.zeros(shape, bool)

    def put(mask, val):
        nonlocal done
        m = mask & ~done
        q[m] = np.broadcast_to(val, shape + (3,))[m]
        done |= m

    with np.errstate(divide="ignore", invalid="ignore"):
        put((d1 <= 0) & (d2 <= 0), np.broadcast_to(a, shape + (3,)))
        put((d3 >= 0) & (d4 <= d3), np.broadcast_to(b, shape + (3,)))
        put((d6 >= 0) & (d5 <= d6), np.broadcast_to(c, shape + (3,)))
        v = d1 / (d1 - d3)
        put((vc <= 0) & (d1 >= 0) & (d3 <= 0), a + v[..., None] * ab)
        w = d2 / (d2 - d6)
        put((vb <= 0) & (d2 >= 0) & (d6 <= 0), a + w[..., None] * ac)
        w = (d4 - d3) / ((d4 - d3) + (d5 - d6))
        put((va <= 0) & ((d4 - d3) >= 0) & ((d5 - d6) >= 0), b + w[..., None] * (c - b))
        den = 1.0 / (va + vb + vc)
        v, w = vb * den, vc * den
        put(np.ones(shape, bool), a + v[..., None] * ab + w[..., None] * ac)
    return ((q - p) ** 2).sum(-1)


def point_mesh_distance(points: np.ndarray, mesh: PolygonMesh, chunk: int = 2048) -> np.ndarray:
    """Exact Euclidean distance from each point to the closest mesh triangle."""
    tri = _triangles(mesh)
    a, b, c = tri[:, 0], tri[:, 1], tri[:, 2]
    pts = np.asarray(points, float).reshape(-1, 3)
    step = max(1, chunk * 64 // max(len(tri), 1))
    out = np.empty(len(pts))
    for s in range(0, len(pts), step):
        out[s:s + step] = np.sqrt(_closest_on_triangles(pts[s:s + step], a, b, c).min(axis=1))
    return out


@dataclass
class AccuracyReport:
    precision: DistanceSummary
    completeness: DistanceSummary

    def to_dict(self) -> dict:
        return {"precision": self.precision.to_dict(), "completeness": self.completeness.to_dict()}


def compare_meshes(recon: PolygonMesh, truth: PolygonMesh, n: int = 200_000, seed: int = 0,
                   thresholds: Sequence[float] = DEFAULT_THRESHOLDS) -> AccuracyReport:
    """Sample both surfaces; precision is recon -> truth, completeness truth -> recon."""
    ss = np.random.SeedSequence(seed).spawn(2)
    pr = sample_surface(recon, n, int(ss[0].generate_state(1)[0]))
    gt = sample_surface(truth, n, int(ss[1].generate_state(1)[0]))
    _, prec = nn_distance(pr, gt, thresholds)
    _, comp = nn_distance(gt, pr, thresholds)
    return AccuracyReport(prec, comp)


def histogram_csv(summary: DistanceSummary) -> str:
    buf = io.StringIO()
    buf.write("lo,hi,count\n")
    e = summary.bin_edges
    for i, c in enumerate(summary.bin_counts):
        buf.write(f"{e[i]:.6g},{e[i + 1]:.6g},{int(c)}\n")
    return buf.getvalue()


# ------------------------------------------------------------------ cube grid

GRID_NOISE = (0.0, 0.05, 0.1, 0.15, 0.2, 0.25, 0.3, 0.35)
GRID_OUTLIERS = (0, 10, 20, 30, 40, 50)


def recovered_faces(state) -> int:
    """Cube faces whose 4 edge ids are all inliers of a single detected plane."""
    faces = cube_face_edges().values()
    return sum(1 for edges in faces if any(set(edges) <= s for s in state.support))


def _run_seed(seed: int, i: int, j: int, r: int) -> int:
    return int(np.random.SeedSequence([seed, i, j, r]).generate_state(1)[0])


@dataclass
class CubeGrid:
    noise_levels: tuple
    outlier_counts: tuple
    runs: int
    counts: np.ndarray          # (noise, outliers, runs)
    params: DetectParams = field(default_factory=DetectParams)

    @property
    def means(self) -> np.ndarray:
        return self.counts.mean(axis=2)

    def mean(self, noise: float, outliers: int) -> float:
        return float(self.means[self.noise_levels.index(noise), self.outlier_counts.index(outliers)])

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write("noise\\outliers," + ",".join(str(o) for o in self.outlier_counts) + "\n")
        for i, nz in enumerate(self.noise_levels):
            buf.write(f"{nz:g}," + ",".join(f"{m:.2f}" for m in self.means[i]) + "\n")
        return buf.getvalue()


def cube_experiment(noise_levels: Sequence[float] = GRID_NOISE,
                    outlier_counts: Sequence[int] = GRID_OUTLIERS, runs: int = 20,
                    params: DetectParams | None = None, seed: int = 0) -> CubeGrid:
    """Detection-only robustness grid on the 12-edge cube."""
    params = params or DetectParams(epsilon=0.06, n_iter=100)
    noise_levels, outlier_counts = tuple(noise_levels), tuple(outlier_counts)
    counts = np.zeros((len(noise_levels), len(outlier_counts), runs), dtype=int)
    for i, nz in enumerate(noise_levels):
        for j, no in enumerate(outlier_counts):
            for r in range(runs):
                s = _run_seed(seed, i, j, r)
                cloud = synth_cube(nz, no, s)
                counts[i, j, r] = recovered_faces(detect_planes(cloud, params, s))
    return CubeGrid(noise_levels, outlier_counts, runs, counts, params)
