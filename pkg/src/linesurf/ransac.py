"""Greedy multi-support RANSAC for planes supported by 3D line segments.

A segment may support at most two planes. When it already supports one plane
``P'``, it can join a new plane ``P`` only if it lies close to the crease line
``P ∩ P'``; this keeps a segment from being attached twice to nearly the same
plane and lets crease lines emerge as structural segments.
"""

from __future__ import annotations

import heapq
import json
import logging
import math
from dataclasses import dataclass, field, asdict
from typing import Iterable, Mapping, NamedTuple

import numpy as np

from .geom import (DegenerateFit, IllConditionedIntersection, Plane, Segment3,
                   dihedral_angle, fit_plane, line_line_distance, plane_intersection_line,
                   plane_pair_line_distance, segment_angle, segment_line_distance,
                   segment_plane_distance, MIN_DIHEDRAL_DEG, PARALLEL_SIN)

log = logging.getLogger(__name__)

PLANES_FORMAT = "planes/1"
_CHUNK = 2_000_000


class NoCandidate(RuntimeError):
    pass


class Reject(NamedTuple):
    reason: str  # "angle" | "noncoplanar" | "degenerate"


@dataclass
class DetectParams:
    epsilon: float = 0.02
    theta_min: float = 5.0
    n_iter: int = 50_000
    n_max: int = 160
    min_support: int = 4
    epsilon_fus: float | None = None
    theta_fus: float = 10.0
    p_fus: float = 0.2
    mode: str = "sampled"
    distance: str = "max"
    rank_by_length: bool = False
    refit_rounds: int = 20
    patience: int = 10

    def __post_init__(self):
        if self.epsilon_fus is None:
            self.epsilon_fus = 3.0 * self.epsilon
        if not self.epsilon > 0:
            raise ValueError("epsilon must be positive")
        if not self.epsilon_fus > self.epsilon:
            raise ValueError("epsilon_fus must exceed epsilon")
        if not 0 < self.p_fus <= 1:
            raise ValueError("p_fus must be in (0, 1]")
        if self.min_support < 3:
            raise ValueError("min_support must be >= 3")
        if self.mode not in ("sampled", "exhaustive"):
            raise ValueError(f"unknown mode {self.mode!r}")
        if self.distance not in ("max", "mean"):
            raise ValueError(f"unknown distance {self.distance!r}")


@dataclass
class SupportState:
    """Planes with their supporting segments and the reverse assignment."""

    segments: dict
    planes: list = field(default_factory=list)
    support: list = field(default_factory=list)
    assigned: dict = field(default_factory=dict)
    n_detected: int = 0

    def __post_init__(self):
        self.segments = dict(sorted(self.segments.items()))
        for sid in self.segments:
            self.assigned.setdefault(sid, [])
        self._arrays = None

    @classmethod
    def fresh(cls, segments) -> "SupportState":
        if not isinstance(segments, Mapping):
            segments = {s.id: s.geometry for s in segments}
        return cls(dict(segments))

    def copy(self) -> "SupportState":
        st = SupportState(dict(self.segments), list(self.planes),
                          [set(s) for s in self.support],
                          {k: list(v) for k, v in self.assigned.items()}, self.n_detected)
        return st

    # partitions
    def level(self, i: int) -> list[int]:
        return [sid for sid, ps in self.assigned.items() if len(ps) == i]

    @property
    def L0(self) -> list[int]:
        return self.level(0)

    @property
    def L1(self) -> list[int]:
        return self.level(1)

    @property
    def L2(self) -> list[int]:
        return self.level(2)

    @property
    def structural(self) -> set[int]:
        return set(self.L2)

    def available(self) -> list[int]:
        return [sid for sid, ps in self.assigned.items() if len(ps) < 2]

    def counts(self) -> dict:
        return {"L0": len(self.L0), "L1": len(self.L1), "L2": len(self.L2)}

    def commit(self, plane: Plane, inliers: Iterable[int]) -> int:
        k = len(self.planes)
        inl = set(inliers)
        for sid in inl:
            if len(self.assigned[sid]) >= 2:
                raise ValueError(f"segment {sid} already supports two planes")
        self.planes.append(plane)
        self.support.append(inl)
        for sid in inl:
            self.assigned[sid].append(k)
        return k

    # vectorized views
    def arrays(self):
        if self._arrays is None or len(self._arrays[0]) != len(self.segments):
            ids = np.array(list(self.segments), dtype=int)
            p0 = np.array([s.p0 for s in self.segments.values()]).reshape(-1, 3)
            p1 = np.array([s.p1 for s in self.segments.values()]).reshape(-1, 3)
            self._arrays = (ids, p0, p1, np.linalg.norm(p1 - p0, axis=1))
        return self._arrays

    def audit(self, tol: float, distance: str = "max") -> list[str]:
        """Consistency problems (empty list when the state is sound)."""
        problems = []
        for sid, ps in self.assigned.items():
            if len(ps) > 2:
                problems.append(f"segment {sid} supports {len(ps)} planes")
            if len(set(ps)) != len(ps):
                problems.append(f"segment {sid} lists a plane twice")
            for p in ps:
                if sid not in self.support[p]:
                    problems.append(f"segment {sid} -> plane {p} missing from support")
        for p, sup in enumerate(self.support):
            for sid in sup:
                if p not in self.assigned.get(sid, []):
                    problems.append(f"plane {p} support lists {sid} without back-reference")
        for sid in self.L2:
            a, b = (self.planes[i] for i in self.assigned[sid])
            if not structural_ok(self.segments[sid], a, b, tol, distance):
                problems.append(f"segment {sid} fails the crease test for planes "
                                f"{self.assigned[sid]}")
        return problems


def _endpoint_reduce(d0, d1, distance):
    return np.maximum(d0, d1) if distance == "max" else 0.5 * (d0 + d1)


def structural_ok(seg: Segment3, p: Plane, q: Plane, eps: float, distance: str = "max") -> bool:
    try:
        line = plane_intersection_line(p, q)
    except IllConditionedIntersection:
        return False
    if distance == "max":
        return segment_line_distance(seg, line) <= eps
    from .geom import point_line_distance
    return 0.5 * (point_line_distance(seg.p0, *line) + point_line_distance(seg.p1, *line)) <= eps


# ------------------------------------------------------------------ candidates

def draw_candidate_pair(state: SupportState, rng: np.random.Generator) -> tuple[int, int]:
    """Draw ``(l_a, l_b)`` so that the pair cannot regenerate an existing plane.

    ``l_a`` is uniform over available segments that have a legal partner; if
    ``l_a`` already supports ``P'``, ``l_b`` avoids the support of ``P'``.
    """
    pool = state.available()
    firsts, partners = [], {}
    for a in pool:
        ps = state.assigned[a]
        if ps:
            cand = [b for b in pool if b not in state.support[ps[0]]]
        else:
            cand = [b for b in pool if b != a]
        if cand:
            firsts.append(a)
            partners[a] = cand
    if not firsts:
        raise NoCandidate("no legal segment pair left")
    a = firsts[int(rng.integers(len(firsts)))]
    cand = partners[a]
    return a, cand[int(rng.integers(len(cand)))]


def hypothesize_plane(a: Segment3, b: Segment3, params: DetectParams) -> Plane | Reject:
    if segment_angle(a, b) < params.theta_min:
        return Reject("angle")
    if line_line_distance(a, b) > params.epsilon:
        return Reject("noncoplanar")
    try:
        return fit_plane([a.p0, a.p1, b.p0, b.p1], [a.length, a.length, b.length, b.length])
    except DegenerateFit:
        return Reject("degenerate")


def collect_inliers(plane: Plane, state: SupportState, eps: float,
                    distance: str = "max") -> set[int]:
    """Available segments within ``eps`` of ``plane``; segments already on one
    plane must also lie within ``eps`` of the crease with it."""
    ids, mask = _score(state, plane.n[None, :], np.array([plane.offset]), eps, distance)
    return {int(s) for s in ids[mask[0]]}


def _pool_arrays(state: SupportState):
    ids, p0, p1, lengths = state.arrays()
    nplanes = np.array([len(state.assigned[int(s)]) for s in ids])
    avail = nplanes < 2
    other = np.array([state.assigned[int(s)][0] if len(state.assigned[int(s)]) == 1 else -1
                      for s in ids])
    return ids[avail], p0[avail], p1[avail], lengths[avail], other[avail]


def _score(state: SupportState, normals: np.ndarray, offsets: np.ndarray, eps: float,
           distance: str, pool=None):
    """Inlier mask (K, n_available) for K candidate planes."""
    ids, p0, p1, lengths, other = _pool_arrays(state) if pool is None else pool
    K, n = len(normals), len(ids)
    out = np.zeros((K, n), dtype=bool)
    if n == 0 or K == 0:
        return ids, out
    l1 = np.flatnonzero(other >= 0)
    if len(l1):
        pn = np.array([state.planes[k].normal for k in other[l1]])
        pd = np.array([state.planes[k].offset for k in other[l1]])
    step = max(1, _CHUNK // max(n, 1))
    for s in range(0, K, step):
        nn, dd = normals[s:s + step], offsets[s:s + step]
        d0 = np.abs(nn @ p0.T - dd[:, None])
        d1 = np.abs(nn @ p1.T - dd[:, None])
        m = _endpoint_reduce(d0, d1, distance) <= eps
        if len(l1):
            n1 = nn[:, None, :]
            c0 = plane_pair_line_distance(p0[l1][None], n1, dd[:, None], pn[None], pd[None])
            c1 = plane_pair_line_distance(p1[l1][None], n1, dd[:, None], pn[None], pd[None])
            m[:, l1] &= _endpoint_reduce(c0, c1, distance) <= eps
        out[s:s + step] = m
    return ids, out


def _batch_hypotheses(A0, A1, B0, B1, params: DetectParams):
    """Vectorized ``hypothesize_plane``; returns (normals, offsets, valid)."""
    va, vb = A1 - A0, B1 - B0
    la, lb = np.linalg.norm(va, axis=1), np.linalg.norm(vb, axis=1)
    da, db = va / la[:, None], vb / lb[:, None]
    cosang = np.clip(np.abs(np.einsum("ij,ij->i", da, db)), 0.0, 1.0)
    ok = np.degrees(np.arccos(cosang)) >= params.theta_min
    cr = np.cross(da, db)
    sn = np.linalg.norm(cr, axis=1)
    w = B0 - A0
    with np.errstate(divide="ignore", invalid="ignore"):
        skew = np.abs(np.einsum("ij,ij->i", w, cr)) / sn
    mid = 0.5 * (B0 + B1) - A0
    par = np.linalg.norm(mid - np.einsum("ij,ij->i", mid, da)[:, None] * da, axis=1)
    lld = np.where(sn < PARALLEL_SIN, par, skew)
    ok &= lld <= params.epsilon
    pts = np.stack([A0, A1, B0, B1], axis=1)
    wts = np.stack([la, la, lb, lb], axis=1)
    wts = wts / wts.sum(axis=1, keepdims=True)
    cen = np.einsum("kn,kni->ki", wts, pts)
    x = pts - cen[:, None, :]
    cov = np.einsum("kn,kni,knj->kij", wts, x, x)
    evals, evecs = np.linalg.eigh(cov)
    ok &= (evals[:, 2] > 0) & ((evals[:, 1] - evals[:, 0]) > 1e-10 * evals[:, 2])
    normals = evecs[:, :, 0]
    # canonical sign: first component with |c| > 1e-12 positive
    big = np.abs(normals) > 1e-12
    first = np.argmax(big, axis=1)
    flip = normals[np.arange(len(normals)), first] < 0
    normals[flip] *= -1
    offsets = np.einsum("ki,ki->k", normals, cen)
    return normals, offsets, ok


def _sampled_pairs(state: SupportState, n: int, rng: np.random.Generator):
    pool = np.array(state.available(), dtype=int)
    if len(pool) < 2:
        return np.zeros((0, 2), dtype=int)
    pos = {int(s): i for i, s in enumerate(pool)}
    avail_for = {}
    for k, sup in enumerate(state.support):
        avail_for[k] = np.array([s for s in pool if s not in sup], dtype=int)
    plane_of = np.array([state.assigned[int(s)][0] if state.assigned[int(s)] else -1 for s in pool])
    has_partner = np.array([len(avail_for[p]) > 0 if p >= 0 else True for p in plane_of])
    firsts = pool[has_partner]
    if len(firsts) == 0:
        return np.zeros((0, 2), dtype=int)
    a = firsts[rng.integers(len(firsts), size=n)]
    b = np.empty(n, dtype=int)
    pa = np.array([plane_of[pos[int(s)]] for s in a])
    l0 = np.flatnonzero(pa < 0)
    if len(l0):
        r = rng.integers(len(pool) - 1, size=len(l0))
        ia = np.array([pos[int(s)] for s in a[l0]])
        r = r + (r >= ia)
        b[l0] = pool[r]
    for p in np.unique(pa[pa >= 0]):
        sel = np.flatnonzero(pa == p)
        cand = avail_for[int(p)]
        b[sel] = cand[rng.integers(len(cand), size=len(sel))]
    return np.stack([a, b], axis=1)


def _exhaustive_pairs(state: SupportState):
    pool = np.array(state.available(), dtype=int)
    if len(pool) < 2:
        return np.zeros((0, 2), dtype=int)
    plane_of = np.array([state.assigned[int(s)][0] if state.assigned[int(s)] else -1 for s in pool])
    i, j = np.triu_indices(len(pool), k=1)
    legal = ~((plane_of[i] >= 0) & (plane_of[i] == plane_of[j]))
    return np.stack([pool[i[legal]], pool[j[legal]]], axis=1)


def refit_until_stable(plane: Plane, inliers: Iterable[int], state: SupportState,
                       eps: float, distance: str = "max", max_rounds: int = 20):
    """Refit on length-weighted endpoints and absorb segments entering the slab."""
    inl = set(inliers)
    for _ in range(max_rounds):
        pts, wts = [], []
        for sid in sorted(inl):
            s = state.segments[sid]
            pts += [s.p0, s.p1]
            wts += [s.length, s.length]
        plane = fit_plane(pts, wts)
        got = collect_inliers(plane, state, eps, distance)
        if got <= inl:
            break
        inl |= got
    return plane, inl


def _finalize(plane: Plane, inl: set[int], state: SupportState, params: DetectParams) -> set[int]:
    # segments already on one plane must pass the crease test against the final plane
    keep = set()
    for sid in inl:
        ps = state.assigned[sid]
        if len(ps) >= 2:
            continue
        if ps and not structural_ok(state.segments[sid], plane, state.planes[ps[0]],
                                    params.epsilon, params.distance):
            continue
        keep.add(sid)
    return keep


def detect_planes(segments, params: DetectParams, seed: int = 0,
                  max_tries: int = 10) -> SupportState:
    """Greedy detection: per round score ``n_iter`` sampled pairs (or all legal
    pairs), refit the best plane and commit it, until support drops below
    ``min_support`` or ``n_max`` planes are found."""
    if hasattr(segments, "segments") and hasattr(segments, "viewpoints"):
        segments = segments.segments
    state = SupportState.fresh(segments)
    rng = np.random.default_rng(seed)
    misses = 0
    while len(state.planes) < params.n_max:
        if params.mode == "exhaustive":
            pairs = _exhaustive_pairs(state)
        else:
            pairs = _sampled_pairs(state, params.n_iter, rng)
        if len(pairs) == 0:
            break
        segs = state.segments
        A0 = np.array([segs[int(a)].p0 for a in pairs[:, 0]])
        A1 = np.array([segs[int(a)].p1 for a in pairs[:, 0]])
        B0 = np.array([segs[int(b)].p0 for b in pairs[:, 1]])
        B1 = np.array([segs[int(b)].p1 for b in pairs[:, 1]])
        normals, offsets, ok = _batch_hypotheses(A0, A1, B0, B1, params)
        normals, offsets = normals[ok], offsets[ok]
        pool = _pool_arrays(state)
        ids, mask = _score(state, normals, offsets, params.epsilon, params.distance, pool)
        score = (mask * pool[3][None, :]).sum(axis=1) if params.rank_by_length else mask.sum(axis=1)
        order = np.argsort(-score, kind="stable")
        committed = False
        tried = set()
        for k in order:
            if mask[k].sum() < params.min_support or len(tried) >= max_tries:
                break
            key = frozenset(ids[mask[k]].tolist())
            if key in tried:
                continue
            tried.add(key)
            try:
                plane, inl = refit_until_stable(Plane(tuple(normals[k]), float(offsets[k])),
                                                key, state, params.epsilon, params.distance,
                                                params.refit_rounds)
            except DegenerateFit:
                continue
            inl = _finalize(plane, inl, state, params)
            if len(inl) >= params.min_support:
                state.commit(plane, inl)
                committed = True
                break
        if committed:
            misses = 0
            continue
        misses += 1
        if params.mode == "exhaustive" or misses >= params.patience:
            break
    state.n_detected = len(state.planes)
    return state


# ------------------------------------------------------------------ fusion

def fuse_planes(state: SupportState, params: DetectParams) -> SupportState:
    """Merge near-parallel plane pairs in order of increasing angle.

    A pair merges when the common-inlier proportion (relative to the smaller
    support) reaches ``p_fus`` and every union inlier lies within
    ``epsilon_fus`` of the plane refitted on the union.
    """
    st = state.copy()
    planes = list(st.planes)
    support = [set(s) for s in st.support]
    assigned = {k: list(v) for k, v in st.assigned.items()}
    alive = [True] * len(planes)
    heap = []

    def push_pairs(i):
        for j in range(len(planes)):
            if j != i and alive[j]:
                ang = dihedral_angle(planes[i], planes[j])
                if ang < params.theta_fus:
                    heapq.heappush(heap, (ang, min(i, j), max(i, j)))

    for i in range(len(planes)):
        for j in range(i + 1, len(planes)):
            ang = dihedral_angle(planes[i], planes[j])
            if ang < params.theta_fus:
                heap.append((ang, i, j))
    heapq.heapify(heap)
    while heap:
        _, i, j = heapq.heappop(heap)
        if not (alive[i] and alive[j]):
            continue
        si, sj = support[i], support[j]
        if not si or not sj:
            continue
        if len(si & sj) / min(len(si), len(sj)) < params.p_fus:
            continue
        union = si | sj
        pts, wts = [], []
        for sid in sorted(union):
            s = st.segments[sid]
            pts += [s.p0, s.p1]
            wts += [s.length, s.length]
        try:
            merged = fit_plane(pts, wts)
        except DegenerateFit:
            continue
        if any(segment_plane_distance(st.segments[sid], merged, params.distance) > params.epsilon_fus
               for sid in union):
            continue
        m = len(planes)
        planes.append(merged)
        support.append(set(union))
        alive += [True]
        alive[i] = alive[j] = False
        for sid in union:
            ps = [p for p in assigned[sid] if p not in (i, j)]
            ps.append(m)
            assigned[sid] = ps
            if len(ps) == 2:
                q = ps[0]
                if dihedral_angle(merged, planes[q]) < MIN_DIHEDRAL_DEG or not structural_ok(
                        st.segments[sid], merged, planes[q], params.epsilon_fus, params.distance):
                    assigned[sid] = [m]
                    support[q].discard(sid)
        support[i], support[j] = set(), set()
        push_pairs(m)
    keep = [k for k in range(len(planes)) if alive[k]]
    remap = {k: n for n, k in enumerate(keep)}
    out = SupportState(dict(st.segments), [planes[k] for k in keep],
                       [set(support[k]) for k in keep],
                       {sid: [remap[p] for p in ps] for sid, ps in assigned.items()},
                       state.n_detected)
    return out


# ------------------------------------------------------------------ planes/1

def planes_to_dict(state: SupportState) -> dict:
    l2 = state.structural
    return {
        "format": PLANES_FORMAT,
        "n_detected": state.n_detected,
        "planes": [{"normal": list(p.normal), "offset": p.offset,
                    "inliers": sorted(state.support[k]),
                    "structural": sorted(s for s in state.support[k] if s in l2)}
                   for k, p in enumerate(state.planes)],
    }


def dumps_planes(state: SupportState) -> str:
    return json.dumps(planes_to_dict(state), indent=1) + "\n"


def loads_planes(text: str, segments) -> SupportState:
    doc = json.loads(text)
    if doc.get("format") != PLANES_FORMAT:
        raise ValueError(f"expected format {PLANES_FORMAT!r}")
    state = SupportState.fresh(segments)
    for rec in doc["planes"]:
        plane = Plane(tuple(rec["normal"]), float(rec["offset"]))
        missing = [s for s in rec["inliers"] if s not in state.segments]
        if missing:
            raise ValueError(f"plane references unknown segments {missing}")
        state.commit(plane, rec["inliers"])
    state.n_detected = int(doc.get("n_detected", len(state.planes)))
    return state
