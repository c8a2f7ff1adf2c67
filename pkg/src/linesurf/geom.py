"""Geometric primitives shared by detection, arrangement and energy code.

Planes are stored in Hessian normal form ``normal . x - offset = 0`` with a
canonical sign so that equal planes compare equal.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

# minimum dihedral angle for a well-conditioned plane/plane intersection line
MIN_DIHEDRAL_DEG = 1.0
PARALLEL_SIN = 1e-6
_ZERO = 1e-12


class DegenerateFit(ValueError):
    """Weighted point set is (near-)collinear; no unique plane."""


class IllConditionedIntersection(ValueError):
    """Two planes are too close to parallel to intersect reliably."""


def _as_point(p) -> np.ndarray:
    a = np.asarray(p, dtype=float).reshape(3)
    return a


def canonical_normal(normal, offset: float) -> tuple[np.ndarray, float]:
    """Flip (normal, offset) so the first nonzero normal component is positive."""
    n = np.asarray(normal, dtype=float)
    for c in n:
        if abs(c) > _ZERO:
            if c < 0:
                return -n, -offset
            break
    return n, offset


@dataclass(frozen=True)
class Plane:
    normal: tuple[float, float, float]
    offset: float

    def __post_init__(self):
        n = np.asarray(self.normal, dtype=float)
        norm = float(np.linalg.norm(n))
        if not np.isfinite(norm) or norm < _ZERO:
            raise ValueError(f"invalid plane normal {self.normal!r}")
        if abs(norm - 1.0) <= 1e-15:  # already unit: keep bits stable across round trips
            norm = 1.0
        n, d = canonical_normal(n / norm, float(self.offset) / norm)
        object.__setattr__(self, "normal", tuple(float(c) for c in n))
        object.__setattr__(self, "offset", float(d))

    @classmethod
    def from_point_normal(cls, point, normal) -> "Plane":
        n = np.asarray(normal, dtype=float)
        n = n / np.linalg.norm(n)
        return cls(tuple(n), float(n @ _as_point(point)))

    @property
    def n(self) -> np.ndarray:
        return np.array(self.normal)

    def as_array(self) -> np.ndarray:
        """(nx, ny, nz, offset)."""
        return np.array([*self.normal, self.offset])

    def project_point(self, p) -> np.ndarray:
        p = _as_point(p)
        return p - signed_distance(p, self) * self.n


@dataclass(frozen=True, eq=False)
class Segment3:
    p0: np.ndarray
    p1: np.ndarray

    def __post_init__(self):
        p0, p1 = _as_point(self.p0), _as_point(self.p1)
        if not (np.all(np.isfinite(p0)) and np.all(np.isfinite(p1))):
            raise ValueError("segment endpoints must be finite")
        if np.linalg.norm(p1 - p0) <= _ZERO:
            raise ValueError("degenerate segment (length <= 1e-12)")
        object.__setattr__(self, "p0", p0)
        object.__setattr__(self, "p1", p1)

    @property
    def vector(self) -> np.ndarray:
        return self.p1 - self.p0

    @property
    def length(self) -> float:
        return float(np.linalg.norm(self.p1 - self.p0))

    @property
    def direction(self) -> np.ndarray:
        v = self.p1 - self.p0
        return v / np.linalg.norm(v)

    @property
    def midpoint(self) -> np.ndarray:
        return 0.5 * (self.p0 + self.p1)

    def point_at(self, t: float) -> np.ndarray:
        return self.p0 + t * (self.p1 - self.p0)

    def reversed(self) -> "Segment3":
        return Segment3(self.p1, self.p0)

    def __eq__(self, other):
        if not isinstance(other, Segment3):
            return NotImplemented
        return bool(np.array_equal(self.p0, other.p0) and np.array_equal(self.p1, other.p1))

    def __hash__(self):
        return hash((tuple(self.p0), tuple(self.p1)))

    def __repr__(self):
        return f"Segment3({self.p0.tolist()}, {self.p1.tolist()})"


def signed_distance(point, plane: Plane) -> float:
    return float(plane.n @ _as_point(point) - plane.offset)


def segment_plane_distance(seg: Segment3, plane: Plane, mode: str = "max") -> float:
    """Distance of a segment to a plane from its endpoint distances.

    ``mode="max"`` keeps the whole segment inside the slab; ``"mean"`` averages.
    """
    d0 = abs(signed_distance(seg.p0, plane))
    d1 = abs(signed_distance(seg.p1, plane))
    if mode == "max":
        return max(d0, d1)
    if mode == "mean":
        return 0.5 * (d0 + d1)
    raise ValueError(f"unknown distance mode {mode!r}")


def point_line_distance(point, line_point, line_dir) -> float:
    u = np.asarray(line_dir, dtype=float)
    u = u / np.linalg.norm(u)
    w = _as_point(point) - _as_point(line_point)
    return float(np.linalg.norm(w - (w @ u) * u))


def segment_line_distance(seg: Segment3, line: tuple) -> float:
    """Max over endpoints of the distance to an infinite line ``(point, direction)``."""
    q, u = line
    return max(point_line_distance(seg.p0, q, u), point_line_distance(seg.p1, q, u))


def segment_angle(a: Segment3, b: Segment3) -> float:
    """Angle in degrees between the unoriented supporting lines, in [0, 90]."""
    c = abs(float(a.direction @ b.direction))
    return math.degrees(math.acos(min(1.0, c)))


def line_line_distance(a: Segment3, b: Segment3) -> float:
    da, db = a.direction, b.direction
    cross = np.cross(da, db)
    s = float(np.linalg.norm(cross))
    if s < PARALLEL_SIN:
        return point_line_distance(b.midpoint, a.p0, da)
    return abs(float((b.p0 - a.p0) @ cross)) / s


def fit_plane(points: Sequence, weights: Iterable[float] | None = None) -> Plane:
    """Weighted total-least-squares plane.

    Parameters
    ----------
    points : (n, 3) array_like
    weights : (n,) array_like, optional
        Non-negative weights (uniform when omitted).

    Raises
    ------
    DegenerateFit
        Fewer than 3 points, or the two smallest covariance eigenvalues are not
        separated (collinear or coincident points).
    """
    pts = np.asarray(points, dtype=float).reshape(-1, 3)
    if len(pts) < 3:
        raise DegenerateFit("need at least 3 points")
    w = np.ones(len(pts)) if weights is None else np.asarray(weights, dtype=float).reshape(-1)
    if w.shape[0] != pts.shape[0] or np.any(w < 0) or w.sum() <= 0:
        raise ValueError("weights must be non-negative with positive sum, one per point")
    w = w / w.sum()
    centroid = w @ pts
    x = pts - centroid
    cov = (x * w[:, None]).T @ x
    evals, evecs = np.linalg.eigh(cov)
    if evals[2] <= 0 or (evals[1] - evals[0]) <= 1e-10 * evals[2]:
        raise DegenerateFit("points are (near-)collinear")
    n = evecs[:, 0]
    return Plane(tuple(n), float(n @ centroid))


def fit_plane_weighted_endpoints(endpoints: Sequence[tuple]) -> Plane:
    """``fit_plane`` over a list of ``(point, weight)`` pairs."""
    pts = [p for p, _ in endpoints]
    ws = [w for _, w in endpoints]
    return fit_plane(pts, ws)


def dihedral_angle(p: Plane, q: Plane) -> float:
    """Unoriented angle between two planes, degrees in [0, 90]."""
    c = abs(float(p.n @ q.n))
    return math.degrees(math.acos(min(1.0, c)))


def plane_intersection_line(p: Plane, q: Plane,
                            min_angle_deg: float = MIN_DIHEDRAL_DEG) -> tuple[np.ndarray, np.ndarray]:
    """Return ``(point, unit direction)`` of ``p ∩ q``; point is closest to the origin."""
    if dihedral_angle(p, q) < min_angle_deg:
        raise IllConditionedIntersection(
            f"planes are {dihedral_angle(p, q):.3g} deg apart (< {min_angle_deg})")
    u = np.cross(p.n, q.n)
    u = u / np.linalg.norm(u)
    a = np.vstack([p.n, q.n, u])
    point = np.linalg.solve(a, np.array([p.offset, q.offset, 0.0]))
    return point, u


def project_segment(seg: Segment3, carrier) -> Segment3:
    """Orthogonally project a segment onto a plane or a plane-pair intersection line."""
    if isinstance(carrier, Plane):
        return Segment3(carrier.project_point(seg.p0), carrier.project_point(seg.p1))
    p, q = carrier
    point, u = plane_intersection_line(p, q)
    a = point + ((seg.p0 - point) @ u) * u
    b = point + ((seg.p1 - point) @ u) * u
    return Segment3(a, b)


def plane_pair_line_distance(points: np.ndarray, n1: np.ndarray, d1: np.ndarray,
                             n2: np.ndarray, d2: np.ndarray) -> np.ndarray:
    """Vectorized distance from points to the intersection line of plane pairs.

    All arguments broadcast over a leading axis; unit normals assumed.
    Ill-conditioned pairs (dihedral angle below ``MIN_DIHEDRAL_DEG``) give ``inf``.
    """
    a = np.einsum("...i,...i->...", points, n1) - d1
    b = np.einsum("...i,...i->...", points, n2) - d2
    c = np.einsum("...i,...i->...", n1, n2)
    s2 = 1.0 - c * c
    ok = s2 >= math.sin(math.radians(MIN_DIHEDRAL_DEG)) ** 2
    with np.errstate(divide="ignore", invalid="ignore"):
        d2_ = (a * a + b * b - 2.0 * a * b * c) / np.where(ok, s2, 1.0)
    return np.where(ok, np.sqrt(np.maximum(d2_, 0.0)), np.inf)
