"""Occupancy energy over arrangement cells, its LP relaxation and exact oracles.

    E(x) = E_prim(x) + E_vis(x) + E_reg(x),  x in {0, 1}^cells

Primitive groups penalise empty space behind (textural) or around (structural)
observed segments, visibility pairs penalise surface transitions crossed by
sightlines, and the regulariser charges crease length and corner count.

Edge regularisation uses one "corner cell" variable per ring position: a cell
whose label differs from both ring neighbours. On a 4-ring this costs 0 for a
flat or uniform configuration, 1 for a single salient or reentrant crease and
4 for the alternating pattern.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, NamedTuple, Sequence

import numpy as np
from scipy import sparse
from scipy.optimize import linprog

from .arrangement import (ArrangementError, CellComplex, GrazingViewpoint, OnBoundary,
                          OutsideBox)
from .geom import IllConditionedIntersection, Segment3, project_segment

log = logging.getLogger(__name__)


class MissingPlane(ValueError):
    pass


class HardConstraintViolated(ValueError):
    pass


class TooLarge(ValueError):
    pass


class SolverFailure(RuntimeError):
    pass


@dataclass
class EnergyParams:
    sigma: float = 1.0
    lambda_vis: float = 0.1
    lambda_edge: float = 0.01
    lambda_corner: float = 0.01
    viewpoint_constraint: bool = True


@dataclass
class EnergyModel:
    n_cells: int
    group_cells: list = field(default_factory=list)   # tuples of cell ids
    group_w: np.ndarray = field(default_factory=lambda: np.zeros(0))
    pair_a: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=int))
    pair_b: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=int))
    pair_w: np.ndarray = field(default_factory=lambda: np.zeros(0))
    edge_rings: list = field(default_factory=list)    # cyclic tuples of cell ids
    edge_w: np.ndarray = field(default_factory=lambda: np.zeros(0))
    corner_pairs: list = field(default_factory=list)  # per vertex: [(edge term i, edge term j)]
    corner_w: np.ndarray = field(default_factory=lambda: np.zeros(0))
    hard_empty: tuple = ()
    diagnostics: dict = field(default_factory=dict)

    def __post_init__(self):
        self.group_w = np.asarray(self.group_w, dtype=float)
        self.pair_a = np.asarray(self.pair_a, dtype=int)
        self.pair_b = np.asarray(self.pair_b, dtype=int)
        self.pair_w = np.asarray(self.pair_w, dtype=float)
        self.edge_w = np.asarray(self.edge_w, dtype=float)
        self.corner_w = np.asarray(self.corner_w, dtype=float)
        self.hard_empty = tuple(sorted(set(int(c) for c in self.hard_empty)))

    def check(self) -> list[str]:
        problems = []
        for name in ("group_w", "pair_w", "edge_w", "corner_w"):
            if np.any(getattr(self, name) < 0):
                problems.append(f"negative weight in {name}")
        cells = [c for g in self.group_cells for c in g] + list(self.pair_a) + \
            list(self.pair_b) + [c for r in self.edge_rings for c in r] + list(self.hard_empty)
        if any(c < 0 or c >= self.n_cells for c in cells):
            problems.append("cell id out of range")
        return problems

    @property
    def free_cells(self) -> list[int]:
        he = set(self.hard_empty)
        return [c for c in range(self.n_cells) if c not in he]


class Energy(NamedTuple):
    prim: float
    vis: float
    reg: float
    total: float


# ------------------------------------------------------------------ assembly

def _clip_to_box(seg: Segment3, lo, hi) -> tuple[float, float] | None:
    t0, t1 = 0.0, 1.0
    d = seg.p1 - seg.p0
    for k in range(3):
        if abs(d[k]) < 1e-300:
            if seg.p0[k] < lo[k] or seg.p0[k] > hi[k]:
                return None
            continue
        a, b = (lo[k] - seg.p0[k]) / d[k], (hi[k] - seg.p0[k]) / d[k]
        if a > b:
            a, b = b, a
        t0, t1 = max(t0, a), min(t1, b)
    return (t0, t1) if t1 - t0 > 1e-12 else None


def _remap(intervals, ta, tb):
    out = []
    for a, b in intervals:
        a2, b2 = max(0.0, (a - ta) / (tb - ta)), min(1.0, (b - ta) / (tb - ta))
        if b2 > a2:
            out.append((a2, b2))
    return out


def _overlap(t0, t1, intervals) -> float:
    return sum(max(0.0, min(t1, b) - max(t0, a)) for a, b in intervals)


def carrier_geometry(seg: Segment3, planes_of: Sequence, planes) -> tuple[Segment3, int]:
    """Project an inlier segment onto its plane or crease line.

    Returns the projected segment and the number of planes used (a crease
    between near-parallel planes falls back to the first plane)."""
    planes_of = sorted(planes_of)
    if len(planes_of) == 1:
        return project_segment(seg, planes[planes_of[0]]), 1
    if len(planes_of) == 2:
        try:
            return project_segment(seg, (planes[planes_of[0]], planes[planes_of[1]])), 2
        except IllConditionedIntersection:
            return project_segment(seg, planes[planes_of[0]]), 1
    return seg, 0


def assemble(cx: CellComplex, cloud, support, params: EnergyParams | None = None) -> EnergyModel:
    """Build primitive groups, visibility pairs, edge and corner terms."""
    params = params or EnergyParams()
    for k, p in enumerate(support.planes):
        if k >= len(cx.planes) or cx.planes[k] != p:
            raise MissingPlane(f"support plane {k} is not arrangement plane {k}")
    sigma = params.sigma
    groups: dict[tuple, float] = {}
    pairs: dict[tuple, float] = {}
    diag = {"grazing_pairs": 0, "clipped_segments": 0, "dropped_segments": 0,
            "subsegments": 0, "crease_fallbacks": 0, "viewpoints_on_planes": 0}
    vp = {v.id: v.position for v in cloud.viewpoints}
    for s in sorted(cloud.segments, key=lambda s: s.id):
        ps = support.assigned.get(s.id, [])
        geom, used = carrier_geometry(s.geometry, ps, support.planes)
        if len(ps) == 2 and used == 1:
            diag["crease_fallbacks"] += 1
        span = _clip_to_box(geom, cx.lo, cx.hi)
        if span is None:
            diag["dropped_segments"] += 1
            continue
        ta, tb = span
        if ta > 0 or tb < 1:
            diag["clipped_segments"] += 1
            geom = Segment3(geom.point_at(ta), geom.point_at(tb))
        frags = cx.split_segment(geom, s.id)
        diag["subsegments"] += len(frags)
        length = geom.length
        for vid, ivs in sorted(s.intervals_by_view().items()):
            ivs = _remap(ivs, ta, tb)
            if not ivs:
                continue
            v = vp[vid]
            if ps:
                for fr in frags:
                    if fr.kind == "cell":
                        continue
                    vis = _overlap(fr.t0, fr.t1, ivs) * length
                    if vis <= 0:
                        continue
                    try:
                        cells = cx.behind_cells(fr, geom, v)
                    except GrazingViewpoint:
                        diag["grazing_pairs"] += 1
                        continue
                    key = tuple(sorted(cells))
                    groups[key] = groups.get(key, 0.0) + vis / sigma
            try:
                crossings = cx.sight_crossings(v, geom, ivs)
            except GrazingViewpoint:
                diag["grazing_pairs"] += 1
                continue
            for fid, ln in crossings:
                a, b = cx.faces[fid].cells
                key = (min(a, b), max(a, b))
                pairs[key] = pairs.get(key, 0.0) + params.lambda_vis * ln / sigma
    # regularisation
    edge_rings, edge_w, term_of_edge = [], [], {}
    for eid in cx.interior_edges:
        e = cx.edges[eid]
        if len(e.ring) < 3:
            continue
        term_of_edge[eid] = len(edge_rings)
        edge_rings.append(tuple(e.ring))
        edge_w.append(params.lambda_edge * e.length)
    corner_pairs, corner_w = [], []
    for vid in cx.interior_vertices:
        eids = [e for e in cx.vertex_edges.get(vid, []) if e in term_of_edge]
        if len(eids) < 2:
            continue
        p = cx.vertices[vid]
        dirs = {}
        for e in eids:
            a, b = cx.edges[e].vertices
            other = cx.vertices[b if a == vid else a]
            d = other - p
            dirs[e] = d / np.linalg.norm(d)
        prs = []
        for i, e in enumerate(eids):
            for f in eids[i + 1:]:
                if np.linalg.norm(np.cross(dirs[e], dirs[f])) > 1e-6:
                    prs.append((term_of_edge[e], term_of_edge[f]))
        if prs:
            corner_pairs.append(prs)
            corner_w.append(params.lambda_corner)
    hard = set()
    if params.viewpoint_constraint:
        for v in cloud.viewpoints:
            try:
                hard.add(cx.locate(v.position))
            except (OnBoundary, OutsideBox):
                diag["viewpoints_on_planes"] += 1
    gkeys = sorted(groups)
    pkeys = sorted(pairs)
    model = EnergyModel(
        n_cells=len(cx.cells),
        group_cells=gkeys, group_w=[groups[k] for k in gkeys],
        pair_a=[k[0] for k in pkeys], pair_b=[k[1] for k in pkeys],
        pair_w=[pairs[k] for k in pkeys],
        edge_rings=edge_rings, edge_w=edge_w,
        corner_pairs=corner_pairs, corner_w=corner_w,
        hard_empty=sorted(hard), diagnostics=diag)
    if diag["grazing_pairs"]:
        log.info("skipped %d grazing (segment, viewpoint) pairs", diag["grazing_pairs"])
    return model


# ------------------------------------------------------------------ evaluation

def ring_corner_count(ring_labels: Sequence[int]) -> int:
    """Cells of a ring whose label differs from both neighbours."""
    n = len(ring_labels)
    return sum(1 for i in range(n)
               if ring_labels[i] != ring_labels[i - 1] and ring_labels[i] != ring_labels[(i + 1) % n])


def evaluate(model: EnergyModel, labels) -> Energy:
    x = np.asarray(labels).astype(int)
    if x.shape != (model.n_cells,) or np.any((x != 0) & (x != 1)):
        raise ValueError("labeling must be binary with one entry per cell")
    if any(x[c] for c in model.hard_empty):
        raise HardConstraintViolated("a viewpoint cell is labelled full")
    prim = math.fsum(w * max(0, 1 - sum(int(x[c]) for c in g))
                     for g, w in zip(model.group_cells, model.group_w))
    vis = math.fsum(w * abs(int(x[a]) - int(x[b]))
                    for a, b, w in zip(model.pair_a, model.pair_b, model.pair_w))
    ycount = [ring_corner_count([int(x[c]) for c in r]) for r in model.edge_rings]
    terms = [w * y for w, y in zip(model.edge_w, ycount)]
    crease = [y > 0 for y in ycount]
    for prs, w in zip(model.corner_pairs, model.corner_w):
        if any(crease[i] and crease[j] for i, j in prs):
            terms.append(w)
    reg = math.fsum(terms)
    return Energy(prim, vis, reg, math.fsum([prim, vis, reg]))


class _Vectorized:
    """Batch energy evaluation for many labelings at once."""

    def __init__(self, model: EnergyModel):
        n = model.n_cells
        rows = [i for i, g in enumerate(model.group_cells) for _ in g]
        cols = [c for g in model.group_cells for c in g]
        self.G = sparse.csr_matrix((np.ones(len(rows)), (rows, cols)),
                                   shape=(len(model.group_cells), n))
        self.model = model
        pos, prev, nxt, owner = [], [], [], []
        for e, r in enumerate(model.edge_rings):
            m = len(r)
            for i in range(m):
                pos.append(r[i])
                prev.append(r[i - 1])
                nxt.append(r[(i + 1) % m])
                owner.append(e)
        self.pos, self.prev, self.nxt = (np.array(a, dtype=int) for a in (pos, prev, nxt))
        self.E = sparse.csr_matrix((np.ones(len(owner)), (np.arange(len(owner)), owner)),
                                   shape=(len(owner), len(model.edge_rings)))
        ca, cb, cv = [], [], []
        for v, prs in enumerate(model.corner_pairs):
            for i, j in prs:
                ca.append(i)
                cb.append(j)
                cv.append(v)
        self.ca, self.cb = np.array(ca, dtype=int), np.array(cb, dtype=int)
        self.C = sparse.csr_matrix((np.ones(len(cv)), (np.arange(len(cv)), cv)),
                                   shape=(len(cv), len(model.corner_pairs)))

    def totals(self, X: np.ndarray) -> np.ndarray:
        m = self.model
        X = X.astype(np.int8)
        tot = np.zeros(len(X))
        if len(m.group_w):
            s = (self.G @ X.T.astype(float)).T
            tot += np.maximum(0.0, 1.0 - s) @ m.group_w
        if len(m.pair_w):
            tot += np.abs(X[:, m.pair_a] - X[:, m.pair_b]) @ m.pair_w
        if len(m.edge_w):
            xi, xp, xn = X[:, self.pos], X[:, self.prev], X[:, self.nxt]
            y = ((xi != xp) & (xi != xn)).astype(float)
            yc = (self.E.T @ y.T).T
            tot += yc @ m.edge_w
            if len(m.corner_w):
                crease = yc > 0
                both = (crease[:, self.ca] & crease[:, self.cb]).astype(float)
                tot += ((self.C.T @ both.T).T > 0) @ m.corner_w
        return tot


def exhaustive_min(model: EnergyModel, max_free: int = 22) -> np.ndarray:
    """Exact minimiser over all binary labelings (hard-empty cells fixed to 0).

    Ties go to the fewest full cells, then the lexicographically smallest
    labeling."""
    free = model.free_cells
    if len(free) > max_free:
        raise TooLarge(f"{len(free)} free cells > {max_free}")
    vec = _Vectorized(model)
    nf = len(free)
    total = 1 << nf
    chunk = 1 << min(nf, 16)
    best = math.inf
    cands: list[np.ndarray] = []
    bits = np.arange(nf)
    for start in range(0, total, chunk):
        codes = np.arange(start, min(total, start + chunk))
        X = np.zeros((len(codes), model.n_cells), dtype=np.int8)
        X[:, free] = ((codes[:, None] >> bits[None, :]) & 1).astype(np.int8)
        t = vec.totals(X)
        m = float(t.min())
        tol = 1e-9 * max(1.0, abs(m))
        if m < best - tol:
            best = m
            cands = []
        if m <= best + tol:
            cands.extend(X[t <= best + 1e-9 * max(1.0, abs(best))])
    scored = []
    for x in cands:
        e = evaluate(model, x).total
        scored.append((e, int(x.sum()), tuple(int(v) for v in x)))
    emin = min(s[0] for s in scored)
    tie = [s for s in scored if s[0] <= emin + 1e-12 * max(1.0, abs(emin))]
    tie.sort(key=lambda s: (s[1], s[2]))
    return np.array(tie[0][2], dtype=int)


# ------------------------------------------------------------------ LP

@dataclass
class LinearProgram:
    """minimize c.v  s.t.  A v <= b,  lb <= v <= ub."""

    c: np.ndarray
    A: sparse.csr_matrix
    b: np.ndarray
    lb: np.ndarray
    ub: np.ndarray
    blocks: dict

    @property
    def n_vars(self) -> int:
        return len(self.c)

    def cells(self, values: np.ndarray) -> np.ndarray:
        return values[self.blocks["x"]]


def to_lp(model: EnergyModel, tight: bool = True) -> LinearProgram:
    """Slack-variable LP relaxation; ``tight`` adds envelope cuts on the corner cells."""
    n = model.n_cells
    G, P = len(model.group_cells), len(model.pair_w)
    ring_len = [len(r) for r in model.edge_rings]
    Y, E, V = sum(ring_len), len(model.edge_rings), len(model.corner_pairs)
    off = np.cumsum([0, n, G, P, Y, E, V])
    blocks = {k: slice(off[i], off[i + 1]) for i, k in enumerate("xstywz")}
    nv = off[-1]
    c = np.zeros(nv)
    c[blocks["s"]] = model.group_w
    c[blocks["t"]] = model.pair_w
    c[blocks["y"]] = np.repeat(model.edge_w, ring_len) if Y else []
    c[blocks["z"]] = model.corner_w
    lb = np.zeros(nv)
    ub = np.full(nv, np.inf)
    ub[blocks["x"]] = 1.0
    ub[blocks["w"]] = 1.0
    ub[blocks["z"]] = 1.0
    for h in model.hard_empty:
        ub[h] = 0.0
    rows, cols, vals, rhs = [], [], [], []

    def add(entries, bound):
        r = len(rhs)
        for col, val in entries:
            rows.append(r)
            cols.append(col)
            vals.append(val)
        rhs.append(bound)

    xs, ss, ts, ys, ws, zs = (off[i] for i in range(6))
    for k, g in enumerate(model.group_cells):
        add([(ci, -1.0) for ci in g] + [(ss + k, -1.0)], -1.0)
    for j, (a, b) in enumerate(zip(model.pair_a, model.pair_b)):
        add([(a, 1.0), (b, -1.0), (ts + j, -1.0)], 0.0)
        add([(b, 1.0), (a, -1.0), (ts + j, -1.0)], 0.0)
    yk = ys
    for e, r in enumerate(model.edge_rings):
        m = len(r)
        for i in range(m):
            ci, cp, cn = r[i], r[i - 1], r[(i + 1) % m]
            add([(ci, 2.0), (cp, -1.0), (cn, -1.0), (yk, -1.0)], 1.0)
            add([(ci, -2.0), (cp, 1.0), (cn, 1.0), (yk, -1.0)], 1.0)
            if tight:  # facets of the convex envelope, valid on binary points
                add([(ci, 1.0), (cp, -1.0), (cn, -1.0), (yk, -1.0)], 0.0)
                add([(ci, -1.0), (cp, 1.0), (cn, 1.0), (yk, -1.0)], 1.0)
            add([(yk, 1.0), (ws + e, -1.0)], 0.0)
            yk += 1
    for v, prs in enumerate(model.corner_pairs):
        for i, j in prs:
            add([(ws + i, 1.0), (ws + j, 1.0), (zs + v, -1.0)], 1.0)
    A = sparse.coo_matrix((vals, (rows, cols)), shape=(len(rhs), nv)).tocsr()
    A.sum_duplicates()
    return LinearProgram(c, A, np.array(rhs, dtype=float), lb, ub, blocks)


Minimizer = Callable[[LinearProgram], tuple[np.ndarray, float]]


def highs_minimize(lp: LinearProgram, tol: float = 1e-7) -> tuple[np.ndarray, float]:
    """Default minimizer: HiGHS dual simplex through scipy."""
    if lp.n_vars == 0:
        return np.zeros(0), 0.0
    res = linprog(lp.c, A_ub=lp.A if lp.A.shape[0] else None,
                  b_ub=lp.b if lp.A.shape[0] else None,
                  bounds=np.column_stack([lp.lb, lp.ub]), method="highs-ds",
                  options={"primal_feasibility_tolerance": tol,
                           "dual_feasibility_tolerance": tol, "presolve": True})
    if res.status != 0:
        raise SolverFailure(f"LP solver status {res.status}: {res.message}")
    return np.asarray(res.x), float(res.fun)


@dataclass
class LPSolution:
    cells: np.ndarray
    objective: float
    values: np.ndarray


def solve_lp(lp: LinearProgram, minimize: Minimizer | None = None, tol: float = 1e-7) -> LPSolution:
    values, obj = (minimize or (lambda p: highs_minimize(p, tol)))(lp)
    x = np.clip(lp.cells(values), 0.0, 1.0)
    return LPSolution(x, obj, values)


def round_labeling(frac, hard_empty: Sequence[int] = (), tol: float = 1e-9) -> np.ndarray:
    """Threshold at 0.5 (ties to full); ``tol`` absorbs solver round-off."""
    x = (np.asarray(frac, dtype=float) >= 0.5 - tol).astype(int)
    x[list(hard_empty)] = 0
    return x


def lp_text(lp: LinearProgram) -> str:
    """CPLEX LP format rendering of the program."""
    names = {}
    for k, sl in lp.blocks.items():
        for i, j in enumerate(range(sl.start, sl.stop)):
            names[j] = f"{k}{i}"

    def term(coef, var):
        sign = "-" if coef < 0 else "+"
        return f"{sign} {abs(coef):.17g} {names[var]}"

    out = ["\\ linesurf occupancy LP", "Minimize", " obj: " + " ".join(
        term(cf, j) for j, cf in enumerate(lp.c) if cf != 0) if np.any(lp.c) else " obj: 0 x0",
        "Subject To"]
    A = lp.A.tocsr()
    for r in range(A.shape[0]):
        lo, hi = A.indptr[r], A.indptr[r + 1]
        body = " ".join(term(A.data[k], A.indices[k]) for k in range(lo, hi))
        out.append(f" c{r}: {body} <= {lp.b[r]:.17g}")
    out.append("Bounds")
    for j in range(lp.n_vars):
        ub = "+inf" if np.isinf(lp.ub[j]) else f"{lp.ub[j]:.17g}"
        out.append(f" {lp.lb[j]:.17g} <= {names[j]} <= {ub}")
    out.append("End")
    return "\n".join(out) + "\n"


# ------------------------------------------------------------------ polishing

class _LocalTerms:
    """Per-cell term incidence for cheap single-flip energy deltas."""

    def __init__(self, model: EnergyModel):
        n = model.n_cells
        self.model = model
        self.groups = [[] for _ in range(n)]
        for k, g in enumerate(model.group_cells):
            for c in g:
                self.groups[c].append(k)
        self.pairs = [[] for _ in range(n)]
        for j, (a, b) in enumerate(zip(model.pair_a, model.pair_b)):
            self.pairs[a].append(j)
            self.pairs[b].append(j)
        self.edges = [[] for _ in range(n)]
        for e, r in enumerate(model.edge_rings):
            for c in set(r):
                self.edges[c].append(e)
        self.corners_of_edge = [[] for _ in model.edge_rings]
        for v, prs in enumerate(model.corner_pairs):
            for e in {i for pr in prs for i in pr}:
                self.corners_of_edge[e].append(v)

    def local(self, x: np.ndarray, c: int) -> float:
        m = self.model
        terms = [m.group_w[k] * max(0, 1 - sum(int(x[i]) for i in m.group_cells[k]))
                 for k in self.groups[c]]
        terms += [m.pair_w[j] * abs(int(x[m.pair_a[j]]) - int(x[m.pair_b[j]]))
                  for j in self.pairs[c]]
        crease = {}

        def creased(e):
            if e not in crease:
                crease[e] = ring_corner_count([int(x[i]) for i in m.edge_rings[e]])
            return crease[e]

        verts = set()
        for e in self.edges[c]:
            terms.append(m.edge_w[e] * creased(e))
            verts.update(self.corners_of_edge[e])
        for v in sorted(verts):
            if any(creased(i) and creased(j) for i, j in m.corner_pairs[v]):
                terms.append(m.corner_w[v])
        return math.fsum(terms)


def polish(model: EnergyModel, labels, max_sweeps: int = 50) -> tuple[np.ndarray, int]:
    """Greedy single-cell flips that strictly lower the exact energy.

    Cells are visited in id order; sweeps repeat until no flip helps. Returns
    the improved labeling and the number of flips."""
    x = np.asarray(labels).astype(int).copy()
    loc = _LocalTerms(model)
    hard = set(model.hard_empty)
    flips = 0
    for _ in range(max_sweeps):
        changed = False
        for c in range(model.n_cells):
            if c in hard:
                continue
            before = loc.local(x, c)
            x[c] ^= 1
            after = loc.local(x, c)
            if after < before - 1e-12 * max(1.0, abs(before)):
                flips += 1
                changed = True
            else:
                x[c] ^= 1
        if not changed:
            break
    return x, flips


def ring_transitions(ring_labels: Sequence[int]) -> int:
    n = len(ring_labels)
    return sum(1 for i in range(n) if ring_labels[i] != ring_labels[(i + 1) % n])


def nonmanifold_edges(model: EnergyModel, labels) -> list[int]:
    """Edge terms whose ring holds two or more separate full arcs."""
    x = np.asarray(labels).astype(int)
    return [e for e, r in enumerate(model.edge_rings)
            if ring_transitions([int(x[c]) for c in r]) > 2]


def repair_nonmanifold(model: EnergyModel, labels) -> tuple[np.ndarray, int]:
    """Flip the cheapest ring cell around each non-manifold edge.

    Each cell is flipped at most once, so the loop terminates; any edge left
    unresolved is reported by :func:`nonmanifold_edges` afterwards."""
    x = np.asarray(labels).astype(int).copy()
    loc = _LocalTerms(model)
    hard = set(model.hard_empty)
    frozen: set[int] = set()
    flips = 0
    while True:
        bad = [e for e in nonmanifold_edges(model, x)
               if any(c not in hard and c not in frozen for c in model.edge_rings[e])]
        if not bad:
            return x, flips
        ring = model.edge_rings[bad[0]]
        best = None
        for c in sorted(set(ring)):
            if c in hard or c in frozen:
                continue
            before = loc.local(x, c)
            x[c] ^= 1
            ok = ring_transitions([int(x[i]) for i in ring]) <= 2
            delta = loc.local(x, c) - before
            x[c] ^= 1
            key = (not ok, delta, c)
            if best is None or key < best:
                best = key
        c = best[2]
        x[c] ^= 1
        frozen.add(c)
        flips += 1
