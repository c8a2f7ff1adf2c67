import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import micro_scene
from linesurf.arrangement import build_complex
from linesurf.energy import (EnergyModel, EnergyParams, HardConstraintViolated, MissingPlane,
                             TooLarge, _Vectorized, assemble, evaluate, exhaustive_min, lp_text,
                             nonmanifold_edges, polish, repair_nonmanifold, ring_corner_count,
                             round_labeling, solve_lp, to_lp)
from linesurf.geom import Plane, Segment3
from linesurf.lineio import LineCloud, ObservedSegment, Viewpoint
from linesurf.ransac import SupportState


def _classify(p):
    """Hand classification of a 4-ring pattern, independent of the energy code."""
    full = sum(p)
    if full in (0, 4):
        return "equal"
    if full in (1, 3):
        return "single"
    return "flat" if p[0] == p[1] or p[1] == p[2] else "alternating"


EXPECTED = {"equal": 0, "flat": 0, "single": 1, "alternating": 4}
PATTERNS = list(itertools.product((0, 1), repeat=4))


def _ring_model(n_edges=1, corner=False):
    rings = [(0, 1, 2, 3), (0, 1, 4, 5)][:n_edges]
    return EnergyModel(n_cells=6 if n_edges > 1 else 4, edge_rings=rings, edge_w=[1.0] * n_edges,
                       corner_pairs=[[(0, 1)]] if corner else [], corner_w=[1.0] if corner else [])


def _fixed_lp_value(model, x, tight=True):
    """LP optimum with the cell variables pinned to ``x``."""
    lp = to_lp(model, tight=tight)
    lp.lb[lp.blocks["x"]] = x
    lp.ub[lp.blocks["x"]] = x
    return solve_lp(lp).objective


# ------------------------------------------------------------------ regulariser

def test_truth_table_covers_all_classes():
    counts = {k: sum(_classify(p) == k for p in PATTERNS) for k in EXPECTED}
    assert counts == {"equal": 2, "flat": 4, "single": 8, "alternating": 2}


@pytest.mark.parametrize("pattern", PATTERNS)
def test_ring_cost_truth_table(pattern):
    want = EXPECTED[_classify(pattern)]
    assert ring_corner_count(pattern) == want
    m = _ring_model()
    assert evaluate(m, pattern).reg == want
    for tight in (False, True):
        assert _fixed_lp_value(m, np.array(pattern, float), tight) == pytest.approx(want, abs=1e-9)


def test_corner_indicator_needs_two_creased_edges():
    m = _ring_model(2, corner=True)
    for x in itertools.product((0, 1), repeat=6):
        y0 = ring_corner_count([x[c] for c in m.edge_rings[0]])
        y1 = ring_corner_count([x[c] for c in m.edge_rings[1]])
        z = int(y0 > 0 and y1 > 0)
        assert evaluate(m, x).reg == y0 + y1 + z
        assert _fixed_lp_value(m, np.array(x, float)) == pytest.approx(y0 + y1 + z, abs=1e-9)


def test_flat_ring_is_free_in_the_relaxation():
    lp = to_lp(_ring_model())
    x = np.array([1, 0, 0, 1], float)
    ys = lp.A[:, lp.blocks["y"]]
    # every y lower bound is <= 0 at the flat configuration
    xpart = lp.A[:, lp.blocks["x"]] @ x - lp.b
    has_y = np.asarray(abs(ys).sum(axis=1)).ravel() > 0
    assert np.all(xpart[has_y] <= 1e-12)


# ------------------------------------------------------------------ LP basics

def test_single_group_lp():
    m = EnergyModel(n_cells=1, group_cells=[(0,)], group_w=[1.0])
    sol = solve_lp(to_lp(m))
    assert sol.cells[0] == pytest.approx(1.0) and sol.objective == pytest.approx(0.0, abs=1e-12)
    assert round_labeling(sol.cells).tolist() == [1]


def test_empty_model_lp():
    m = EnergyModel(n_cells=3)
    sol = solve_lp(to_lp(m))
    assert sol.objective == 0.0 and np.allclose(sol.cells, 0)


def test_rounding_rule():
    assert round_labeling([0.5, 0.4999999, 0.49999999999, 1.0, 0.0]).tolist() == [1, 0, 1, 1, 0]
    assert round_labeling([1.0, 0.7], hard_empty=[1]).tolist() == [1, 0]
    assert round_labeling(np.array([0, 1, 1, 0.0])).tolist() == [0, 1, 1, 0]


def test_lp_text_sections():
    text = lp_text(to_lp(_ring_model(2, corner=True)))
    for head in ("Minimize", "Subject To", "Bounds", "End"):
        assert f"\n{head}" in text
    assert " z0 " in text or text.count("z0") >= 1


# ------------------------------------------------------------------ exhaustive

def test_exhaustive_two_cells():
    m = EnergyModel(n_cells=2, group_cells=[(0,)], group_w=[1.0], pair_a=[0], pair_b=[1],
                    pair_w=[0.3])
    best = exhaustive_min(m)
    brute = min(itertools.product((0, 1), repeat=2), key=lambda x: (evaluate(m, x).total, sum(x), x))
    assert tuple(best) == brute == (1, 1)


def test_exhaustive_zero_weights_is_all_empty():
    m = EnergyModel(n_cells=5, pair_a=[0], pair_b=[1], pair_w=[0.0])
    assert exhaustive_min(m).tolist() == [0] * 5


def test_exhaustive_too_large():
    with pytest.raises(TooLarge):
        exhaustive_min(EnergyModel(n_cells=30), max_free=22)


def test_hard_constraint_on_evaluate():
    m = EnergyModel(n_cells=2, hard_empty=[1])
    with pytest.raises(HardConstraintViolated):
        evaluate(m, [0, 1])
    with pytest.raises(ValueError):
        evaluate(m, [0, 2])


# ------------------------------------------------------------------ assembly

def _two_plane_line_scene():
    """Segment on z = 1 seen from (0, 0, 6) through plane z = 2."""
    planes = [Plane((0, 0, 1), 1.0), Plane((0, 0, 1), 2.0)]
    seg = Segment3((-1, 0, 1), (1, 0, 1))
    cloud = LineCloud([Viewpoint(0, (0, 0, 6))], [ObservedSegment(0, seg, ((0, 0.0, 1.0),))])
    sup = SupportState.fresh(cloud.segments)
    sup.commit(planes[0], [0])
    cx = build_complex(planes, ((-10, -10, -10), (10, 10, 10)))
    return cloud, sup, cx


def test_single_crossing_scene_energies():
    cloud, sup, cx = _two_plane_line_scene()
    p = EnergyParams(sigma=1.0, lambda_vis=0.1)
    m = assemble(cx, cloud, sup, p)
    full = np.ones(m.n_cells, int)
    full[list(m.hard_empty)] = 0
    e = evaluate(m, full)
    assert e.prim == 0.0 and e.vis == pytest.approx(0.1 * 2.0)
    e = evaluate(m, np.zeros(m.n_cells, int))
    assert e.prim == pytest.approx(2.0) and e.vis == 0.0
    assert m.hard_empty == (cx.locate((0, 0, 6)),)


def test_sigma_scales_data_terms():
    cloud, sup, cx = _two_plane_line_scene()
    a = assemble(cx, cloud, sup, EnergyParams(sigma=1.0))
    b = assemble(cx, cloud, sup, EnergyParams(sigma=2.0))
    assert np.allclose(b.group_w, a.group_w / 2) and np.allclose(b.pair_w, a.pair_w / 2)


def test_missing_plane():
    cloud, sup, cx = _two_plane_line_scene()
    sup.commit(Plane((1, 0, 0), 0.0), [0])
    with pytest.raises(MissingPlane):
        assemble(cx, cloud, sup)


def test_cube_groups_all_contain_centre(clean_cube, cube_support, cube_complex):
    m = assemble(cube_complex, clean_cube, cube_support)
    centre = cube_complex.locate((0, 0, 0))
    assert len(cube_complex.cells) == 27 and m.check() == []
    assert m.group_cells and all(len(g) == 3 and centre in g for g in m.group_cells)
    # hand-listed ring membership: the 3 cells behind edge x=1, z=1 seen from (6,0,6)
    ring_cells = {cube_complex.locate(p) for p in [(0, 0, 0), (5, 0, 0), (0, 0, 5)]}
    assert tuple(sorted(ring_cells)) in m.group_cells
    truth = np.zeros(27, int)
    truth[centre] = 1
    assert evaluate(m, truth).prim == 0.0
    assert exhaustive_min(m).tolist() == truth.tolist()
    sol = solve_lp(to_lp(m))
    assert round_labeling(sol.cells, m.hard_empty).tolist() == truth.tolist()
    assert sol.objective <= evaluate(m, truth).total + 1e-9


def test_outliers_only_add_visibility(clean_cube, cube_support, cube_complex):
    base = assemble(cube_complex, clean_cube, cube_support)
    out = ObservedSegment(99, Segment3((-0.5, -0.3, 0.2), (0.4, 0.5, -0.3)),
                          tuple((v.id, 0.0, 1.0) for v in clean_cube.viewpoints[:5]))
    cloud = LineCloud(clean_cube.viewpoints, list(clean_cube.segments) + [out])
    sup = SupportState.fresh(cloud.segments)
    for p, s in zip(cube_support.planes, cube_support.support):
        sup.commit(p, s)
    m = assemble(cube_complex, cloud, sup)
    assert m.group_cells == base.group_cells and np.allclose(m.group_w, base.group_w)
    assert m.pair_w.sum() > base.pair_w.sum()


# ------------------------------------------------------------------ properties on micro-scenes

scene_seeds = st.integers(0, 10_000)


@settings(max_examples=25)
@given(scene_seeds, st.integers(2, 4))
def test_vectorised_energy_matches_scalar(seed, n_planes):
    cloud, sup, cx = micro_scene(seed, n_planes=n_planes, per_plane=3, n_views=3)
    m = assemble(cx, cloud, sup)
    assert m.check() == []
    rng = np.random.default_rng(seed)
    X = rng.integers(0, 2, (20, m.n_cells)).astype(np.int8)
    X[:, list(m.hard_empty)] = 0
    got = _Vectorized(m).totals(X)
    want = [evaluate(m, x).total for x in X]
    assert np.allclose(got, want, rtol=1e-12, atol=1e-12)


@settings(max_examples=15)
@given(scene_seeds)
def test_lp_with_pinned_cells_equals_exact_energy(seed):
    cloud, sup, cx = micro_scene(seed, n_planes=3, per_plane=3, n_views=3)
    m = assemble(cx, cloud, sup)
    rng = np.random.default_rng(seed)
    for _ in range(4):
        x = rng.integers(0, 2, m.n_cells)
        x[list(m.hard_empty)] = 0
        assert _fixed_lp_value(m, x.astype(float)) == pytest.approx(evaluate(m, x).total,
                                                                    rel=1e-7, abs=1e-9)


@settings(max_examples=20)
@given(scene_seeds, st.integers(2, 4))
def test_relaxation_bound_and_polish(seed, n_planes):
    cloud, sup, cx = micro_scene(seed, n_planes=n_planes, per_plane=3, n_views=3, n_outliers=2)
    m = assemble(cx, cloud, sup)
    best = evaluate(m, exhaustive_min(m)).total
    for tight in (False, True):
        sol = solve_lp(to_lp(m, tight=tight))
        assert sol.objective <= best + 1e-7
    r = round_labeling(sol.cells, m.hard_empty)
    assert evaluate(m, r).total >= best - 1e-12
    p, _ = polish(m, r)
    assert evaluate(m, p).total <= evaluate(m, r).total
    assert evaluate(m, p).total == pytest.approx(best, rel=1e-12, abs=1e-15)


@settings(max_examples=25)
@given(scene_seeds, st.integers(2, 4))
def test_polish_never_increases_energy(seed, n_planes):
    cloud, sup, cx = micro_scene(seed, n_planes=n_planes, per_plane=2, n_views=2)
    m = assemble(cx, cloud, sup)
    x = np.random.default_rng(seed).integers(0, 2, m.n_cells)
    x[list(m.hard_empty)] = 0
    p, flips = polish(m, x)
    assert evaluate(m, p).total <= evaluate(m, x).total
    assert flips == 0 or not np.array_equal(p, x)
    # a polished labeling is a local minimum under single flips
    e = evaluate(m, p).total
    for c in m.free_cells:
        q = p.copy()
        q[c] ^= 1
        assert evaluate(m, q).total >= e - 1e-12 * max(1.0, e)


def test_repair_removes_alternating_rings():
    m = EnergyModel(n_cells=4, edge_rings=[(0, 1, 2, 3)], edge_w=[1.0], group_cells=[(0,), (2,)],
                    group_w=[5.0, 0.1])
    x = np.array([1, 0, 1, 0])
    assert nonmanifold_edges(m, x) == [0]
    fixed, flips = repair_nonmanifold(m, x)
    assert flips == 1 and nonmanifold_edges(m, fixed) == []
    assert fixed[0] == 1  # the expensive group is kept


def test_repair_respects_hard_cells():
    m = EnergyModel(n_cells=4, edge_rings=[(0, 1, 2, 3)], edge_w=[1.0], hard_empty=[1, 3])
    fixed, _ = repair_nonmanifold(m, [1, 0, 1, 0])
    assert fixed[1] == 0 and fixed[3] == 0 and nonmanifold_edges(m, fixed) == []
